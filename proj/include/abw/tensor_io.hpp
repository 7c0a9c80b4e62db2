#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abw/errors.hpp"

// Binary tensor files. Layout, all integers little-endian:
//
//   bytes 0..3   magic "ABW1"
//   bytes 4..7   endianness marker, uint32 value 1
//   bytes 8..11  rank, uint32
//   then         rank dimension sizes, uint32 each
//   then         payload: float32 values, row-major
//   then         footer: uint64 FNV-1a checksum of the payload bytes
namespace abw {

struct TensorData {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t element_count() const;
};

std::uint64_t fnv1a64(const void* data, std::size_t n_bytes);

void write_tensor(const std::filesystem::path& path, const TensorData& tensor);

TensorData read_tensor(const std::filesystem::path& path);

// In-memory encoding used by write_tensor; exposed for format tests.
std::vector<std::uint8_t> encode_tensor(const TensorData& tensor);
TensorData decode_tensor(const std::vector<std::uint8_t>& bytes);

} // namespace abw
