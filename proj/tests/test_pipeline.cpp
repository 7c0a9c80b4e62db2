#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "abw/pipeline.hpp"

using namespace abw;
namespace fs = std::filesystem;

namespace {

// small world, trimmed protocol: fast but structurally complete
const char* kTinyConfig = R"(
seed = 5

[world]
hidden_dim = 64
n_layers = 8
noise_sigma = 0.005

[sampling]
n_harmful_per_cat = 12
n_matched_per_cat = 12
n_unmatched = 120

[som]
iterations = 800

[abliteration]
layers = 3, 4, 5
weights = 0.3, 0.8

[evaluation]
n_canaries = 12
kl_prompts = 12
kl_tokens = 6
kl_topk = 64

[capture]
n_pairs = 6
)";

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "abw_pipeline_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("full pipeline is deterministic byte for byte") {
    RunConfig cfg = parse_config(kTinyConfig);
    cfg.output_dir = fresh_dir("run_a").string();
    const PipelineResult a = run_pipeline(cfg);
    cfg.output_dir = fresh_dir("run_b").string();
    const PipelineResult b = run_pipeline(cfg);

    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a.out_dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const fs::path rel = fs::relative(entry.path(), a.out_dir);
        const fs::path other = b.out_dir / rel;
        REQUIRE_MESSAGE(fs::exists(other), rel.string());
        CHECK_MESSAGE(slurp(entry.path()) == slurp(other), rel.string());
        ++compared;
    }
    CHECK(compared > 10);

    // the summary carries the qualitative outcome
    CHECK(a.summary.at("conclusions").at("unmatched_functional").get<bool>());
    CHECK(a.summary.at("conclusions").at("matched_inert").get<bool>());
    CHECK(a.summary.at("conclusions").at("matched_svd_inert").get<bool>());
}

TEST_CASE("verify passes on a fresh run and catches tampering") {
    RunConfig cfg = parse_config(kTinyConfig);
    cfg.output_dir = fresh_dir("verify").string();
    const PipelineResult result = run_pipeline(cfg);

    std::ostringstream log;
    CHECK(verify_outputs(result.out_dir, log) == 0);

    // tamper with a table: verify must flag it
    {
        std::ofstream out(result.out_dir / "table1.csv", std::ios::app);
        out << "999,0.1,0.1,1\n";
    }
    std::ostringstream log2;
    CHECK(verify_outputs(result.out_dir, log2) > 0);
}

TEST_CASE("matched-svd-only configuration produces an all-baseline grid") {
    RunConfig cfg = parse_config(kTinyConfig);
    cfg.extraction.configs = {ExtractionTag::matched_svd};
    cfg.output_dir = fresh_dir("svd_only").string();
    const PipelineResult result = run_pipeline(cfg);

    for (const auto& rec : result.summary.at("sweeps").at("matched_svd")) {
        CHECK(rec.at("refusals").get<int>() >= 9);
    }
    CHECK(fs::exists(result.out_dir / "r_grid_matched_svd.csv"));
    CHECK(!fs::exists(result.out_dir / "table1.csv"));       // no unmatched sweep
    CHECK(!fs::exists(result.out_dir / "synergy.csv"));      // synergy needs unmatched
    CHECK(!result.summary.contains("synergy"));
}

TEST_CASE("stage failures abort with the stage name and leave a marker") {
    RunConfig cfg = parse_config(kTinyConfig);
    cfg.extraction.n_dirs = 99; // more directions than categories
    cfg.output_dir = fresh_dir("failing").string();
    try {
        run_pipeline(cfg);
        FAIL("expected a pipeline error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("extraction") != std::string::npos);
    }
    CHECK(fs::exists(fs::path(cfg.output_dir) / "INCOMPLETE"));
    const std::string marker = slurp(fs::path(cfg.output_dir) / "INCOMPLETE");
    CHECK(marker.find("stage = extraction") != std::string::npos);

    std::ostringstream log;
    CHECK(verify_outputs(cfg.output_dir, log) > 0);
}

TEST_CASE("plot data emits one row per record and metric") {
    std::vector<SweepRecord> records;
    for (int l = 0; l < 6; ++l) {
        for (int w = 0; w < 5; ++w) {
            SweepRecord rec;
            rec.layer_set = {l};
            rec.weight = 0.1 * (w + 1);
            rec.refusal_count = 10 - w;
            rec.evasive_count = w;
            rec.kl = 0.001 * w;
            rec.mean_bigram_entropy = 5.0;
            records.push_back(rec);
        }
    }
    const fs::path path = fresh_dir("plot") / "plot.csv";
    emit_plot_data(records, path);
    const std::string text = slurp(path);
    int lines = 0;
    for (char c : text) {
        if (c == '\n') {
            ++lines;
        }
    }
    CHECK(lines == 121); // header + 6 layers x 5 weights x 4 metrics

    CHECK_THROWS_AS(emit_plot_data({}, path), InvalidInputError);
}

TEST_CASE("summary numbers survive a json round trip") {
    RunConfig cfg = parse_config(kTinyConfig);
    cfg.output_dir = fresh_dir("roundtrip").string();
    const PipelineResult result = run_pipeline(cfg);
    const json loaded = json::parse(slurp(result.out_dir / "summary.json"));
    CHECK(loaded.at("sweeps") == result.summary.at("sweeps"));
    CHECK(loaded.at("capture") == result.summary.at("capture"));
    CHECK(loaded.at("magnitude").at("ratio").get<double>() ==
          result.summary.at("magnitude").at("ratio").get<double>());
}
