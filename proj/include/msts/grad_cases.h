#pragma once

#include <string>
#include <vector>

#include "msts/gradcheck.h"

namespace msts {

/// Every finite-difference case known to `check-grad`, grouped by module:
/// tensor_core, attention, encdec, heads.
std::vector<GradCase> registered_grad_cases();

/// Cases of one module, or all cases when `module` is empty.
std::vector<GradCase> grad_cases_for(const std::string& module);

}  // namespace msts
