#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abw/linalg.hpp"
#include "abw/synth_world.hpp"

// Direction extraction: per-class SOM over activation differences, with an
// unmatched shared baseline or per-category matched baselines, plus optional
// SVD orthogonalization of the per-layer direction sets.
namespace abw {

enum class ExtractionTag { unmatched_som, matched_som, matched_svd };

std::string to_string(ExtractionTag tag);
ExtractionTag extraction_tag_from_string(const std::string& s);

struct DirectionMeta {
    int layer = 0;
    int index = 0;
    int class_label = -1;        // source category; -1 after SVD
    int singular_rank = -1;      // rank after SVD; -1 otherwise
    double raw_norm = 0.0;       // norm as extracted, before any rescaling
    double singular_value = -1.0; // -1 when no SVD applied
    bool zero_flagged = false;   // trailing zero singular value
};

// Directions are stored unnormalized; raw norms live in the metadata.
struct DirectionsTensor {
    int n_layers = 0;
    int n_dirs = 0;
    int hidden_dim = 0;
    ExtractionTag tag = ExtractionTag::unmatched_som;
    std::vector<Vector> directions;  // layer-major: layer * n_dirs + dir
    std::vector<DirectionMeta> meta; // same indexing

    Vector& at(int layer, int dir) { return directions[std::size_t(layer) * n_dirs + dir]; }
    const Vector& at(int layer, int dir) const {
        return directions[std::size_t(layer) * n_dirs + dir];
    }
    DirectionMeta& meta_at(int layer, int dir) { return meta[std::size_t(layer) * n_dirs + dir]; }
    const DirectionMeta& meta_at(int layer, int dir) const {
        return meta[std::size_t(layer) * n_dirs + dir];
    }
    std::vector<Vector> layer_directions(int layer) const;
};

struct SomConfig {
    int grid_rows = 3;
    int grid_cols = 3;
    int iterations = 10000;
    double initial_learning_rate = 0.5;
    double final_learning_rate = 0.01;
    double initial_radius = 1.5;
    double final_radius = 0.25;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SomResult {
    int grid_rows = 0;
    int grid_cols = 0;
    std::vector<Vector> codebook; // row-major over the grid
    std::vector<int> assignments; // winning node per sample
    std::vector<int> counts;      // samples assigned per node
};

// Per-layer, per-prompt differences: activation minus the layer's reference.
std::vector<std::vector<Vector>> diff_pool(const std::vector<PromptRecord>& harmful,
                                           const std::vector<Vector>& reference_per_layer);

Vector pool_mean(const std::vector<PromptRecord>& records, int layer);

// Online SOM: seeded sampling, best-matching unit by Euclidean distance,
// Gaussian grid neighborhood, exponential decay of learning rate and radius.
SomResult train_som(const std::vector<Vector>& diffs, const SomConfig& cfg);

// Codebook vector of the node with the most assigned samples (density peak);
// ties break toward the lowest node index.
Vector class_winner(const SomResult& som);

DirectionsTensor extract_unmatched(const PoolSet& pools, const SomConfig& cfg, int n_dirs);

DirectionsTensor extract_matched(const PoolSet& pools, const SomConfig& cfg);

// Per layer, replaces the direction set with right singular vectors scaled
// by their singular values, ordered by singular value magnitude.
DirectionsTensor svd_orthogonalize(const DirectionsTensor& t);

} // namespace abw
