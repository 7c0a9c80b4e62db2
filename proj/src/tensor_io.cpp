#include "abw/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace abw {

namespace {

constexpr char kMagic[4] = {'A', 'B', 'W', '1'};
constexpr std::uint32_t kEndianMarker = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t((v >> 8) & 0xff));
    out.push_back(std::uint8_t((v >> 16) & 0xff));
    out.push_back(std::uint8_t((v >> 24) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
    }
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= std::uint64_t(p[i]) << (8 * i);
    }
    return v;
}

} // namespace

std::size_t TensorData::element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) {
        n *= d;
    }
    return dims.empty() ? 0 : n;
}

std::uint64_t fnv1a64(const void* data, std::size_t n_bytes) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n_bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<std::uint8_t> encode_tensor(const TensorData& tensor) {
    if (tensor.dims.empty()) {
        throw InvalidInputError("encode_tensor: rank 0 tensor");
    }
    std::size_t expect = 1;
    for (std::uint32_t d : tensor.dims) {
        if (d == 0 || expect > std::numeric_limits<std::size_t>::max() / d) {
            throw InvalidInputError("encode_tensor: bad dimensions");
        }
        expect *= d;
    }
    if (expect != tensor.values.size()) {
        throw InvalidInputError("encode_tensor: payload does not match dimensions");
    }

    std::vector<std::uint8_t> out;
    out.reserve(16 + 4 * tensor.dims.size() + 4 * tensor.values.size() + 8);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kEndianMarker);
    put_u32(out, std::uint32_t(tensor.dims.size()));
    for (std::uint32_t d : tensor.dims) {
        put_u32(out, d);
    }
    const std::size_t payload_offset = out.size();
    out.resize(out.size() + 4 * tensor.values.size());
    std::memcpy(out.data() + payload_offset, tensor.values.data(), 4 * tensor.values.size());
    put_u64(out, fnv1a64(out.data() + payload_offset, 4 * tensor.values.size()));
    return out;
}

TensorData decode_tensor(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12) {
        throw FileFormatError("tensor file truncated: no header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FileFormatError("tensor file has bad magic");
    }
    if (get_u32(bytes.data() + 4) != kEndianMarker) {
        throw FileFormatError("tensor file has unsupported endianness");
    }
    const std::uint32_t rank = get_u32(bytes.data() + 8);
    if (rank == 0 || rank > 16) {
        throw FileFormatError("tensor file has bad rank");
    }
    if (bytes.size() < 12 + 4 * std::size_t(rank)) {
        throw FileFormatError("tensor file truncated: dimensions");
    }
    TensorData tensor;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = get_u32(bytes.data() + 12 + 4 * i);
        if (d == 0 || count > std::numeric_limits<std::size_t>::max() / d) {
            throw FileFormatError("tensor file has dimension overflow");
        }
        tensor.dims.push_back(d);
        count *= d;
    }
    const std::size_t payload_offset = 12 + 4 * std::size_t(rank);
    const std::size_t payload_bytes = 4 * count;
    if (bytes.size() != payload_offset + payload_bytes + 8) {
        throw FileFormatError("tensor file truncated or oversized payload");
    }
    const std::uint64_t stored = get_u64(bytes.data() + payload_offset + payload_bytes);
    const std::uint64_t computed = fnv1a64(bytes.data() + payload_offset, payload_bytes);
    if (stored != computed) {
        throw FileFormatError("tensor file checksum mismatch");
    }
    tensor.values.resize(count);
    std::memcpy(tensor.values.data(), bytes.data() + payload_offset, payload_bytes);
    return tensor;
}

void write_tensor(const std::filesystem::path& path, const TensorData& tensor) {
    const auto bytes = encode_tensor(tensor);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("write_tensor: cannot open " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) {
        throw IoError("write_tensor: write failed for " + path.string());
    }
}

TensorData read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw IoError("read_tensor: cannot open " + path.string());
    }
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size), 0);
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) {
        throw IoError("read_tensor: read failed for " + path.string());
    }
    return decode_tensor(bytes);
}

} // namespace abw
