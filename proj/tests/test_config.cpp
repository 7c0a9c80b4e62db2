#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "abw/config.hpp"

using namespace abw;

TEST_CASE("empty document yields the documented defaults") {
    const RunConfig cfg = parse_config("");
    CHECK(cfg.seed == 1);
    CHECK(cfg.world.n_categories == 9);
    CHECK(cfg.world.hidden_dim == 256);
    CHECK(cfg.world.n_layers == 24);
    CHECK(cfg.evaluation.n_eval_prompts == 10);
    CHECK(cfg.evaluation.kl_prompts == 100);
    CHECK(cfg.evaluation.kl_tokens == 50);
    CHECK(cfg.evaluation.kl_topk == 100);
    CHECK(cfg.abliteration.weights == std::vector<double>{0.3, 0.5, 0.8, 1.0, 1.2});
    CHECK(cfg.abliteration.layers == std::vector<int>{9, 11, 12, 13, 14, 15});
    CHECK(cfg.abliteration.mode == RemoveMode::scaled);
    CHECK(cfg.abliteration.targets == EditTargets::both);
    CHECK(cfg.extraction.n_dirs == 7);
    CHECK(cfg.extraction.configs.size() == 3);
    CHECK(cfg.synergy.weight == 0.3);
    CHECK(cfg.capture.n_pairs == 18);
    // defaults echoed into the effective config
    const std::string echo = effective_config(cfg);
    CHECK(echo.find("weights = 0.3, 0.5, 0.8, 1, 1.2") != std::string::npos);
    CHECK(echo.find("kl_topk = 100") != std::string::npos);
    CHECK(echo.find("n_eval_prompts = 10") != std::string::npos);
}

TEST_CASE("values parse into the right places") {
    const std::string text = R"(
seed = 42
output_dir = workdir

[world]
topic_scale = 2.0
refusal_norm = 0.2
contamination_rate = 0.25

[som]
iterations = 5000

[extraction]
configs = unmatched, matched-svd
n_dirs = 5

[abliteration]
mode = project
targets = attn_out
layers = 1, 2, 3
weights = 0.1, 0.9

[synergy]
weight = 0.5
pairs = 1:2, 2:3

[capture]
n_pairs = 6
sub_topic_spread = 0.5
)";
    const RunConfig cfg = parse_config(text);
    CHECK(cfg.seed == 42);
    CHECK(cfg.output_dir == "workdir");
    CHECK(cfg.world.topic_scale == 2.0);
    CHECK(cfg.world.contamination_rate == 0.25);
    CHECK(cfg.som.iterations == 5000);
    CHECK(cfg.extraction.configs ==
          std::vector<ExtractionTag>{ExtractionTag::unmatched_som, ExtractionTag::matched_svd});
    CHECK(cfg.extraction.n_dirs == 5);
    CHECK(cfg.abliteration.mode == RemoveMode::project);
    CHECK(cfg.abliteration.targets == EditTargets::attn_out);
    CHECK(cfg.abliteration.layers == std::vector<int>{1, 2, 3});
    CHECK(cfg.abliteration.weights == std::vector<double>{0.1, 0.9});
    CHECK(cfg.synergy.pairs == std::vector<std::pair<int, int>>{{1, 2}, {2, 3}});
    CHECK(cfg.capture.sub_topic_spread == 0.5);
    CHECK(cfg.capture_spread() == 0.5);
    CHECK(cfg.world.seed == 42);
}

TEST_CASE("unknown keys and sections are hard errors naming the line") {
    try {
        parse_config("[world]\nn_categories = 9\nn_catgories = 9\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 3);
        CHECK(std::string(e.what()).find("unknown key") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("[wrld]\nx = 1\n"), ParseError);
    CHECK_THROWS_AS(parse_config("stray = 1\n"), ParseError);
}

TEST_CASE("duplicate keys are rejected") {
    try {
        parse_config("[som]\niterations = 10\niterations = 20\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 3);
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
}

TEST_CASE("type errors are rejected with the line number") {
    try {
        parse_config("[world]\nhidden_dim = many\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 2);
    }
    CHECK_THROWS_AS(parse_config("[abliteration]\nmode = sideways\n"), ParseError);
    CHECK_THROWS_AS(parse_config("[synergy]\npairs = 1-2\n"), ParseError);
}

TEST_CASE("validation catches inconsistent configurations") {
    CHECK_THROWS_AS(parse_config("[abliteration]\nlayers = 99\n"), InvalidConfigError);
    CHECK_THROWS_AS(parse_config("[world]\nnoise_sigma = 0\n"), InvalidInputError);
}

TEST_CASE("comments and blank lines are ignored") {
    const RunConfig cfg = parse_config("# comment\n\n[som]\niterations = 123 # trailing\n");
    CHECK(cfg.som.iterations == 123);
}

TEST_CASE("effective config reparses to the same configuration") {
    const std::string text = "[world]\ntopic_scale = 3.25\n[abliteration]\nweights = 0.25, 1\n";
    const RunConfig cfg = parse_config(text);
    const RunConfig again = parse_config(effective_config(cfg));
    CHECK(again.world.topic_scale == cfg.world.topic_scale);
    CHECK(again.abliteration.weights == cfg.abliteration.weights);
    CHECK(again.seed == cfg.seed);
    CHECK(effective_config(again) == effective_config(cfg));
}

TEST_CASE("default synergy pairs are adjacent abliteration layers") {
    const RunConfig cfg = parse_config("");
    const auto pairs = cfg.synergy_pairs();
    REQUIRE(pairs.size() == 5);
    CHECK(pairs.front() == std::pair<int, int>{9, 11});
    CHECK(pairs.back() == std::pair<int, int>{14, 15});
}
