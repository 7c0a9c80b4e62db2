#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "abw/abliterate.hpp"
#include "abw/eval.hpp"
#include "abw/extraction.hpp"
#include "abw/synth_world.hpp"

// Run configuration: plain-text sections of key = value pairs. Unknown keys
// and duplicate keys are hard errors; omitted keys take the documented
// defaults, and the effective configuration (defaults included) is echoed
// into every run directory.
namespace abw {

struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "abw-out";

    WorldSpec world;

    struct Sampling {
        int n_harmful_per_cat = 50;
        int n_matched_per_cat = 50;
        int n_unmatched = 400;
    } sampling;

    SomConfig som;

    struct Extraction {
        std::vector<ExtractionTag> configs = {ExtractionTag::unmatched_som,
                                              ExtractionTag::matched_som,
                                              ExtractionTag::matched_svd};
        int n_dirs = 7;
    } extraction;

    struct Abliteration {
        RemoveMode mode = RemoveMode::scaled;
        EditTargets targets = EditTargets::both;
        std::vector<int> layers = {9, 11, 12, 13, 14, 15};
        std::vector<double> weights = {0.3, 0.5, 0.8, 1.0, 1.2};
    } abliteration;

    struct Evaluation {
        int n_eval_prompts = 10;
        int n_canaries = 20;
        int kl_prompts = 100;
        int kl_tokens = 50;
        int kl_topk = 100;
    } evaluation;

    struct Synergy {
        double weight = 0.3;
        std::vector<std::pair<int, int>> pairs; // empty: adjacent abliteration layers
    } synergy;

    struct Capture {
        int n_pairs = 18;
        double sub_topic_spread = -1.0; // negative: 0.15 * topic_scale
    } capture;

    std::vector<std::pair<int, int>> synergy_pairs() const;
    double capture_spread() const;
    void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Full dump, defaults included, in the same format parse_config reads.
std::string effective_config(const RunConfig& cfg);

} // namespace abw
