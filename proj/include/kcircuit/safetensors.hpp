#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"

// Reader/writer for the safetensors container: an 8-byte little-endian header
// length, a JSON header mapping tensor name -> {dtype, shape, data_offsets},
// then the raw little-endian buffer.
namespace kc::safetensors {

static_assert(std::endian::native == std::endian::little, "safetensors loader assumes a little-endian host");

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;  // always upcast to f32

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : shape) {
            n *= d;
        }
        return n;
    }
};

using TensorMap = std::map<std::string, Tensor>;

inline float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1f;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

inline float bf16_to_float(std::uint16_t h) { return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16); }

inline TensorMap parse(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<buffer>") {
    require(bytes.size() >= 8, "safetensors: " + origin + ": file too short");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    require(header_len <= bytes.size() - 8, "safetensors: " + origin + ": header length exceeds file size");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error("safetensors: " + origin + ": bad header: " + e.what());
    }
    const std::size_t base = 8 + header_len;
    const std::size_t buffer_len = bytes.size() - base;

    TensorMap out;
    for (const auto& [name, info] : header.items()) {
        if (name == "__metadata__") {
            continue;
        }
        const auto dtype = info.at("dtype").get<std::string>();
        Tensor t;
        t.shape = info.at("shape").get<std::vector<std::size_t>>();
        const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
        require(offsets.size() == 2 && offsets[0] <= offsets[1] && offsets[1] <= buffer_len,
                "safetensors: " + origin + ": bad data_offsets for " + name);
        const std::uint8_t* src = bytes.data() + base + offsets[0];
        const std::size_t nbytes = offsets[1] - offsets[0];
        const std::size_t n = t.numel();
        t.data.resize(n);
        if (dtype == "F32") {
            require(nbytes == n * 4, "safetensors: " + origin + ": size mismatch for " + name);
            std::memcpy(t.data.data(), src, nbytes);
        } else if (dtype == "F16" || dtype == "BF16") {
            require(nbytes == n * 2, "safetensors: " + origin + ": size mismatch for " + name);
            const bool is_bf16 = dtype == "BF16";
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t h = 0;
                std::memcpy(&h, src + 2 * i, 2);
                t.data[i] = is_bf16 ? bf16_to_float(h) : half_to_float(h);
            }
        } else {
            throw Error("safetensors: " + origin + ": unsupported dtype " + dtype + " for tensor " + name);
        }
        out.emplace(name, std::move(t));
    }
    return out;
}

inline TensorMap load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "safetensors: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(bytes, path);
}

// Writes all tensors as F32, names in sorted order.
inline std::vector<std::uint8_t> serialize(const TensorMap& tensors) {
    nlohmann::json header = nlohmann::json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        require(t.data.size() == t.numel(), "safetensors: tensor " + name + " has inconsistent shape");
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + 4 * t.data.size()}}};
        offset += 4 * t.data.size();
    }
    std::string hs = header.dump();
    while ((hs.size() + 8) % 8 != 0) {
        hs.push_back(' ');
    }
    std::vector<std::uint8_t> out(8 + hs.size() + offset);
    const std::uint64_t hl = hs.size();
    std::memcpy(out.data(), &hl, 8);
    std::memcpy(out.data() + 8, hs.data(), hs.size());
    std::size_t pos = 8 + hs.size();
    for (const auto& [name, t] : tensors) {
        std::memcpy(out.data() + pos, t.data.data(), 4 * t.data.size());
        pos += 4 * t.data.size();
    }
    return out;
}

inline void save(const TensorMap& tensors, const std::string& path) {
    const auto bytes = serialize(tensors);
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "safetensors: cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace kc::safetensors
