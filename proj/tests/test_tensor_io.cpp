#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "abw/seeding.hpp"
#include "abw/serialization.hpp"
#include "abw/tensor_io.hpp"

using namespace abw;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "abw_tensor_io_test";
    fs::create_directories(dir);
    return dir;
}

TensorData random_tensor(Rng& rng, std::vector<std::uint32_t> dims) {
    TensorData t;
    t.dims = std::move(dims);
    t.values.resize(t.element_count());
    for (auto& v : t.values) {
        v = float(rng.gaussian());
    }
    return t;
}

} // namespace

TEST_CASE("round trip is bit identical") {
    Rng rng(21);
    const auto path = temp_dir() / "roundtrip.abt";
    const TensorData t = random_tensor(rng, {24, 9, 64});
    write_tensor(path, t);
    const TensorData back = read_tensor(path);
    REQUIRE(back.dims == t.dims);
    REQUIRE(back.values.size() == t.values.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        // bitwise, not approximate
        CHECK(std::memcmp(&back.values[i], &t.values[i], 4) == 0);
    }
}

TEST_CASE("header bytes of a 2x3 zero matrix match the documented layout") {
    TensorData t;
    t.dims = {2, 3};
    t.values.assign(6, 0.0f);
    const auto bytes = encode_tensor(t);

    const std::uint8_t expected_header[] = {
        'A', 'B', 'W', '1',       // magic
        0x01, 0x00, 0x00, 0x00,   // endianness marker
        0x02, 0x00, 0x00, 0x00,   // rank
        0x02, 0x00, 0x00, 0x00,   // dim 0
        0x03, 0x00, 0x00, 0x00,   // dim 1
    };
    REQUIRE(bytes.size() == sizeof(expected_header) + 24 + 8);
    CHECK(std::memcmp(bytes.data(), expected_header, sizeof(expected_header)) == 0);
    for (std::size_t i = 0; i < 24; ++i) {
        CHECK(bytes[sizeof(expected_header) + i] == 0);
    }
    // footer: FNV-1a of 24 zero bytes
    std::vector<std::uint8_t> zeros(24, 0);
    const std::uint64_t checksum = fnv1a64(zeros.data(), zeros.size());
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    CHECK(stored == checksum);
}

TEST_CASE("truncated and corrupted files are rejected") {
    Rng rng(22);
    const auto dir = temp_dir();
    const TensorData t = random_tensor(rng, {4, 5});
    const auto bytes = encode_tensor(t);

    SUBCASE("truncation") {
        const auto path = dir / "truncated.abt";
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  std::streamsize(bytes.size() - 10));
        out.close();
        CHECK_THROWS_AS(read_tensor(path), FileFormatError);
    }
    SUBCASE("payload corruption fails the checksum") {
        auto corrupted = bytes;
        corrupted[20] ^= 0x40;
        CHECK_THROWS_AS(decode_tensor(corrupted), FileFormatError);
    }
    SUBCASE("bad magic") {
        auto corrupted = bytes;
        corrupted[0] = 'X';
        CHECK_THROWS_AS(decode_tensor(corrupted), FileFormatError);
    }
    SUBCASE("bad endianness marker") {
        auto corrupted = bytes;
        corrupted[4] = 0x02;
        CHECK_THROWS_AS(decode_tensor(corrupted), FileFormatError);
    }
}

TEST_CASE("encode validates dimensions") {
    TensorData t;
    t.dims = {2, 2};
    t.values.assign(3, 0.0f);
    CHECK_THROWS_AS(encode_tensor(t), InvalidInputError);
    t.dims.clear();
    t.values.clear();
    CHECK_THROWS_AS(encode_tensor(t), InvalidInputError);
}

TEST_CASE("directions tensor round trip preserves data and metadata") {
    Rng rng(23);
    DirectionsTensor dirs;
    dirs.n_layers = 3;
    dirs.n_dirs = 2;
    dirs.hidden_dim = 8;
    dirs.tag = ExtractionTag::matched_svd;
    for (int l = 0; l < 3; ++l) {
        for (int d = 0; d < 2; ++d) {
            Vector v(8);
            for (int i = 0; i < 8; ++i) {
                v[i] = rng.gaussian();
            }
            dirs.directions.push_back(v);
            DirectionMeta m;
            m.layer = l;
            m.index = d;
            m.singular_rank = d;
            m.raw_norm = v.norm();
            m.singular_value = 2.0 - d;
            m.zero_flagged = false;
            dirs.meta.push_back(m);
        }
    }
    const auto dir = temp_dir();
    save_directions(dirs, dir / "dirs.abt", dir / "dirs.meta");
    const DirectionsTensor back = load_directions(dir / "dirs.abt", dir / "dirs.meta");
    CHECK(back.n_layers == 3);
    CHECK(back.n_dirs == 2);
    CHECK(back.tag == ExtractionTag::matched_svd);
    for (int l = 0; l < 3; ++l) {
        for (int d = 0; d < 2; ++d) {
            CHECK((back.at(l, d) - Vector(dirs.at(l, d).cast<float>().cast<double>())).norm() ==
                  0.0);
            CHECK(back.meta_at(l, d).singular_rank == d);
        }
    }
}

TEST_CASE("pool round trip preserves grouping and flags") {
    WorldSpec spec;
    spec.hidden_dim = 32;
    spec.n_layers = 3;
    spec.n_benign_topics = 6;
    spec.noise_sigma = spec.refusal_norm / (4.0 * std::sqrt(32.0));
    spec.seed = 99;
    const PlantedTruth truth = generate_world(spec);
    spec.contamination_rate = 0.25;
    const PoolSet pools = sample_pools(truth, spec, 3, 3, 8);

    const auto dir = temp_dir() / "pools";
    save_pools(pools, dir);
    const PoolSet back = load_pools(dir);
    CHECK(back.n_categories() == pools.n_categories());
    CHECK(back.unmatched_good.size() == pools.unmatched_good.size());
    int contaminated = 0;
    for (const auto& r : back.unmatched_good) {
        if (r.contaminated) {
            ++contaminated;
        }
    }
    CHECK(contaminated == 2); // floor(0.25 * 8)
    CHECK(back.harmful[4][1].id == pools.harmful[4][1].id);
    CHECK(back.harmful[4][1].harmful);
}
