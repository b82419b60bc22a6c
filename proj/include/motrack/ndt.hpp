#pragma once

// NDT1 binary tensor files:
//   4-byte magic "NDT1"
//   4-byte little-endian u32 header length
//   UTF-8 JSON header {"dtype":"f32","shape":[...]}
//   raw little-endian float32 payload
// All on-disk tensors in this project go through this format.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "motrack/tensor.hpp"

namespace motrack {

inline void save_ndt(const std::filesystem::path& path, const Tensor& t) {
    nlohmann::json hdr;
    hdr["dtype"] = "f32";
    hdr["shape"] = t.shape();
    std::string hs = hdr.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("save_ndt: cannot open " + path.string() + " for writing");
    f.write("NDT1", 4);
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) fail("save_ndt: write failed for " + path.string());
}

inline Tensor load_ndt(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("load_ndt: cannot open " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "NDT1", 4) != 0)
        fail("load_ndt: " + path.string() + " is not an NDT1 file");
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) fail("load_ndt: truncated header in " + path.string());
    nlohmann::json hdr = nlohmann::json::parse(hs, nullptr, false);
    if (hdr.is_discarded()) fail("load_ndt: malformed JSON header in " + path.string());
    if (hdr.value("dtype", "") != "f32")
        fail("load_ndt: unsupported dtype '" + hdr.value("dtype", "") + "' in " + path.string());
    Shape shape = hdr.at("shape").get<Shape>();
    int64_t n = numel_of(shape);
    std::vector<float> data(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!f) fail("load_ndt: payload shorter than header shape in " + path.string());
    return Tensor::from_data(shape, std::move(data));
}

}  // namespace motrack
