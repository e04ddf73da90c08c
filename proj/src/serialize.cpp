#include "msts/serialize.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace msts {

namespace {

template <class T>
void put_le(std::string& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(const char* p) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

const Tensor* TensorBundle::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::filesystem::path bundle_data_path(const std::filesystem::path& manifest_path) {
    auto p = manifest_path;
    p.replace_extension(".bin");
    return p;
}

void save_bundle(const std::filesystem::path& manifest_path, const TensorBundle& bundle) {
    std::string buffer;
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [name, tensor] : bundle.tensors) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["dtype"] = dtype_name(tensor.dtype());
        e["shape"] = tensor.shape();
        e["offset"] = buffer.size();
        for (double v : tensor.values()) {
            if (tensor.dtype() == DType::f32) put_le(buffer, static_cast<float>(v));
            else put_le(buffer, v);
        }
        entries.push_back(std::move(e));
    }
    nlohmann::ordered_json manifest = bundle.meta;
    manifest["data_file"] = bundle_data_path(manifest_path).filename().string();
    manifest["data_bytes"] = buffer.size();
    manifest["tensors"] = std::move(entries);

    {
        std::ofstream bin(bundle_data_path(manifest_path), std::ios::binary | std::ios::trunc);
        if (!bin) throw FormatError("cannot write " + bundle_data_path(manifest_path).string());
        bin.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    }
    std::ofstream js(manifest_path, std::ios::trunc);
    if (!js) throw FormatError("cannot write " + manifest_path.string());
    js << manifest.dump(2) << '\n';
}

TensorBundle load_bundle(const std::filesystem::path& manifest_path) {
    std::ifstream js(manifest_path);
    if (!js) throw FormatError("cannot open " + manifest_path.string());
    nlohmann::ordered_json manifest;
    try {
        js >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    const auto data_path = manifest_path.parent_path() / manifest.at("data_file").get<std::string>();
    std::ifstream bin(data_path, std::ios::binary);
    if (!bin) throw FormatError("cannot open " + data_path.string());
    std::string buffer((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (buffer.size() != manifest.at("data_bytes").get<size_t>()) {
        throw FormatError(data_path.string() + ": size does not match manifest");
    }

    TensorBundle bundle;
    for (const auto& e : manifest.at("tensors")) {
        const auto dtype = dtype_from_name(e.at("dtype").get<std::string>());
        const auto shape = e.at("shape").get<Shape>();
        const auto offset = e.at("offset").get<size_t>();
        const auto n = static_cast<size_t>(shape_numel(shape));
        const size_t width = dtype == DType::f32 ? 4 : 8;
        if (offset + n * width > buffer.size()) throw FormatError("tensor '" + e.at("name").get<std::string>() + "' overruns data file");
        std::vector<double> values(n);
        for (size_t i = 0; i < n; ++i) {
            const char* p = buffer.data() + offset + i * width;
            values[i] = dtype == DType::f32 ? static_cast<double>(get_le<float>(p)) : get_le<double>(p);
        }
        bundle.tensors.emplace_back(e.at("name").get<std::string>(), Tensor::from_data(shape, std::move(values), dtype));
    }
    manifest.erase("tensors");
    manifest.erase("data_file");
    manifest.erase("data_bytes");
    bundle.meta = std::move(manifest);
    return bundle;
}

}  // namespace msts
