#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abw/linalg.hpp"

// The planted activation world: topic centroids, a ground-truth refusal
// direction, per-category tilts, and samplers for harmful / topic-matched /
// general-purpose prompt pools. Everything is deterministic given the seed.
namespace abw {

// Generative parameters. noise_sigma is the per-coordinate standard
// deviation; the defaults put the full noise-vector norm at
// refusal_norm / 4 (i.e. sigma = refusal_norm / (4 sqrt(hidden_dim))).
struct WorldSpec {
    int n_categories = 9;
    int hidden_dim = 256;
    int n_layers = 24;
    int n_benign_topics = 12;
    double topic_scale = 1.6;
    double refusal_norm = 0.16;
    double tilt_norm = 0.08;
    double noise_sigma = 0.16 / (4.0 * 16.0);
    double contamination_rate = 0.0;
    std::vector<double> refusal_layer_profile; // empty = default plateau
    std::uint64_t seed = 1;

    void validate() const;
    std::vector<double> effective_profile() const;
    int peak_profile_layer() const;
};

// Default per-layer multiplier: ramps 0.2 -> 1.0 over the first third,
// holds 1.0 over the middle plateau, ramps back down to 0.2.
std::vector<double> default_layer_profile(int n_layers);

struct PlantedTruth {
    int n_categories = 0;
    int hidden_dim = 0;
    int n_layers = 0;
    std::vector<double> profile;
    Vector refusal_dir;                  // unit, shared across layers
    std::vector<Vector> topic_centroids; // harmful categories, orthogonal to refusal_dir
    std::vector<Vector> benign_centroids;
    std::vector<Vector> category_tilts;  // per category, orthogonal to refusal_dir

    const Vector& centroid(int category) const { return topic_centroids.at(category); }
    const Vector& tilt(int category) const { return category_tilts.at(category); }
};

struct PromptRecord {
    std::string id;
    int category = -1; // harmful-taxonomy index; -1 for general benign prompts
    bool harmful = false;
    bool contaminated = false;
    std::vector<Vector> activations; // one per layer

    Vector pooled() const; // mean activation across layers
};

struct PoolSet {
    std::vector<std::vector<PromptRecord>> harmful;      // grouped by category
    std::vector<std::vector<PromptRecord>> matched_good; // grouped by category
    std::vector<PromptRecord> unmatched_good;

    int n_categories() const { return int(harmful.size()); }
    int n_layers() const;
    int hidden_dim() const;
    std::vector<const PromptRecord*> all_harmful() const;
    std::vector<const PromptRecord*> all_harmless() const;
};

PlantedTruth generate_world(const WorldSpec& spec);

PoolSet sample_pools(const PlantedTruth& truth, const WorldSpec& spec, int n_harmful_per_cat,
                     int n_matched_per_cat, int n_unmatched);

// Unit refusal direction at a layer (identical across layers; the per-layer
// profile scales its magnitude in activations, not its orientation).
Vector ground_truth_direction(const PlantedTruth& truth, int layer);

// A refuse/answer probe pair: same category centroid, refusal component
// present vs absent, each member with its own small sub-topic offset drawn
// inside the span of all topic centroids.
struct CapturePair {
    PromptRecord refused;
    PromptRecord answered;
};

std::vector<CapturePair> make_capture_pairs(const PlantedTruth& truth, const WorldSpec& spec,
                                            int n_pairs, double sub_topic_spread,
                                            std::uint64_t seed);

} // namespace abw
