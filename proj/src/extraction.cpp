#include "abw/extraction.hpp"

#include <cmath>
#include <limits>

#include "abw/seeding.hpp"

namespace abw {

std::string to_string(ExtractionTag tag) {
    switch (tag) {
    case ExtractionTag::unmatched_som:
        return "unmatched_som";
    case ExtractionTag::matched_som:
        return "matched_som";
    case ExtractionTag::matched_svd:
        return "matched_svd";
    }
    return "unknown";
}

ExtractionTag extraction_tag_from_string(const std::string& s) {
    if (s == "unmatched_som" || s == "unmatched") {
        return ExtractionTag::unmatched_som;
    }
    if (s == "matched_som" || s == "matched") {
        return ExtractionTag::matched_som;
    }
    if (s == "matched_svd" || s == "matched-svd") {
        return ExtractionTag::matched_svd;
    }
    throw InvalidConfigError("unknown extraction tag: " + s);
}

std::vector<Vector> DirectionsTensor::layer_directions(int layer) const {
    std::vector<Vector> out;
    out.reserve(n_dirs);
    for (int d = 0; d < n_dirs; ++d) {
        out.push_back(at(layer, d));
    }
    return out;
}

void SomConfig::validate() const {
    if (grid_rows < 1 || grid_cols < 1) {
        throw InvalidConfigError("SomConfig: grid must be at least 1x1");
    }
    if (iterations < 1) {
        throw InvalidConfigError("SomConfig: iterations must be >= 1");
    }
    if (!(initial_learning_rate > 0.0) || !(final_learning_rate > 0.0) ||
        !(initial_radius > 0.0) || !(final_radius > 0.0)) {
        throw InvalidConfigError("SomConfig: rates and radii must be positive");
    }
    if (initial_learning_rate < final_learning_rate || initial_radius < final_radius) {
        throw InvalidConfigError("SomConfig: initial must be >= final");
    }
}

std::vector<std::vector<Vector>> diff_pool(const std::vector<PromptRecord>& harmful,
                                           const std::vector<Vector>& reference_per_layer) {
    if (harmful.empty()) {
        throw EmptyPoolError("diff_pool: empty harmful list");
    }
    const int L = int(reference_per_layer.size());
    if (L == 0 || int(harmful.front().activations.size()) != L) {
        throw InvalidInputError("diff_pool: layer count mismatch");
    }
    std::vector<std::vector<Vector>> diffs(L);
    for (int l = 0; l < L; ++l) {
        diffs[l].reserve(harmful.size());
        for (const auto& rec : harmful) {
            if (rec.activations[l].size() != reference_per_layer[l].size()) {
                throw InvalidInputError("diff_pool: dimension mismatch");
            }
            diffs[l].push_back(rec.activations[l] - reference_per_layer[l]);
        }
    }
    return diffs;
}

Vector pool_mean(const std::vector<PromptRecord>& records, int layer) {
    if (records.empty()) {
        throw EmptyPoolError("pool_mean: empty record list");
    }
    Vector m = Vector::Zero(records.front().activations.at(layer).size());
    for (const auto& rec : records) {
        m += rec.activations.at(layer);
    }
    return m / double(records.size());
}

SomResult train_som(const std::vector<Vector>& diffs, const SomConfig& cfg) {
    cfg.validate();
    if (diffs.empty()) {
        throw InvalidInputError("train_som: no samples");
    }
    const int dim = int(diffs.front().size());
    for (const auto& d : diffs) {
        if (int(d.size()) != dim) {
            throw InvalidInputError("train_som: inconsistent sample dimensions");
        }
    }

    const int n_nodes = cfg.grid_rows * cfg.grid_cols;
    Rng rng(cfg.seed);

    SomResult som;
    som.grid_rows = cfg.grid_rows;
    som.grid_cols = cfg.grid_cols;
    som.codebook.reserve(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
        som.codebook.push_back(diffs[rng.index(diffs.size())]);
    }

    auto best_matching_unit = [&](const Vector& x) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int n = 0; n < n_nodes; ++n) {
            const double d = (som.codebook[n] - x).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = n;
            }
        }
        return best;
    };

    const double T = double(cfg.iterations);
    for (int t = 0; t < cfg.iterations; ++t) {
        const Vector& x = diffs[rng.index(diffs.size())];
        const int bmu = best_matching_unit(x);
        const double frac = cfg.iterations > 1 ? double(t) / (T - 1.0) : 0.0;
        const double lr = cfg.initial_learning_rate *
                          std::pow(cfg.final_learning_rate / cfg.initial_learning_rate, frac);
        const double radius =
            cfg.initial_radius * std::pow(cfg.final_radius / cfg.initial_radius, frac);
        const int br = bmu / cfg.grid_cols;
        const int bc = bmu % cfg.grid_cols;
        for (int n = 0; n < n_nodes; ++n) {
            const int nr = n / cfg.grid_cols;
            const int nc = n % cfg.grid_cols;
            const double grid_d2 = double((nr - br) * (nr - br) + (nc - bc) * (nc - bc));
            const double h = std::exp(-grid_d2 / (2.0 * radius * radius));
            if (h > 1e-12) {
                som.codebook[n] += lr * h * (x - som.codebook[n]);
            }
        }
    }

    som.assignments.reserve(diffs.size());
    som.counts.assign(n_nodes, 0);
    for (const auto& x : diffs) {
        const int bmu = best_matching_unit(x);
        som.assignments.push_back(bmu);
        ++som.counts[bmu];
    }
    return som;
}

Vector class_winner(const SomResult& som) {
    int best = 0;
    for (int n = 1; n < int(som.counts.size()); ++n) {
        if (som.counts[n] > som.counts[best]) {
            best = n;
        }
    }
    return som.codebook[best];
}

namespace {

DirectionsTensor extract_with_references(
    const PoolSet& pools, const SomConfig& cfg, int n_dirs, ExtractionTag tag,
    const std::vector<std::vector<Vector>>& reference_per_class_layer) {
    const int L = pools.n_layers();
    const int D = pools.hidden_dim();
    if (L == 0 || D == 0) {
        throw InvalidInputError("extract: empty pools");
    }

    DirectionsTensor t;
    t.n_layers = L;
    t.n_dirs = n_dirs;
    t.hidden_dim = D;
    t.tag = tag;
    t.directions.resize(std::size_t(L) * n_dirs);
    t.meta.resize(std::size_t(L) * n_dirs);

    const std::string tag_label = to_string(tag);
    for (int c = 0; c < n_dirs; ++c) {
        const auto diffs = diff_pool(pools.harmful[c], reference_per_class_layer[c]);
        for (int l = 0; l < L; ++l) {
            SomConfig layer_cfg = cfg;
            layer_cfg.seed = derive_seed(cfg.seed, "som/" + tag_label, std::uint64_t(l),
                                         std::uint64_t(c));
            const SomResult som = train_som(diffs[l], layer_cfg);
            Vector winner = class_winner(som);
            DirectionMeta& m = t.meta_at(l, c);
            m.layer = l;
            m.index = c;
            m.class_label = c;
            m.raw_norm = winner.norm();
            t.at(l, c) = std::move(winner);
        }
    }
    return t;
}

} // namespace

DirectionsTensor extract_unmatched(const PoolSet& pools, const SomConfig& cfg, int n_dirs) {
    if (n_dirs < 1 || n_dirs > pools.n_categories()) {
        throw InvalidConfigError("extract_unmatched: n_dirs must be in [1, n_categories]");
    }
    if (pools.unmatched_good.empty()) {
        throw InvalidInputError("extract_unmatched: empty unmatched pool");
    }
    const int L = pools.n_layers();
    std::vector<Vector> shared_mean(L);
    for (int l = 0; l < L; ++l) {
        shared_mean[l] = pool_mean(pools.unmatched_good, l);
    }
    std::vector<std::vector<Vector>> refs(n_dirs, shared_mean);
    return extract_with_references(pools, cfg, n_dirs, ExtractionTag::unmatched_som, refs);
}

DirectionsTensor extract_matched(const PoolSet& pools, const SomConfig& cfg) {
    const int n_cats = pools.n_categories();
    if (int(pools.matched_good.size()) != n_cats) {
        throw InvalidInputError("extract_matched: matched groups do not align with harmful");
    }
    const int L = pools.n_layers();
    std::vector<std::vector<Vector>> refs(n_cats);
    for (int c = 0; c < n_cats; ++c) {
        if (pools.matched_good[c].empty()) {
            throw InvalidInputError("extract_matched: missing matched group " +
                                    std::to_string(c));
        }
        refs[c].resize(L);
        for (int l = 0; l < L; ++l) {
            refs[c][l] = pool_mean(pools.matched_good[c], l);
        }
    }
    return extract_with_references(pools, cfg, n_cats, ExtractionTag::matched_som, refs);
}

DirectionsTensor svd_orthogonalize(const DirectionsTensor& t) {
    if (t.n_dirs < 2) {
        throw InvalidInputError("svd_orthogonalize: need at least 2 directions");
    }
    DirectionsTensor out;
    out.n_layers = t.n_layers;
    out.n_dirs = t.n_dirs;
    out.hidden_dim = t.hidden_dim;
    out.tag = ExtractionTag::matched_svd;
    out.directions.resize(t.directions.size());
    out.meta.resize(t.meta.size());

    for (int l = 0; l < t.n_layers; ++l) {
        Matrix stack(t.n_dirs, t.hidden_dim);
        for (int d = 0; d < t.n_dirs; ++d) {
            stack.row(d) = t.at(l, d).transpose();
        }
        const SvdResult svd = svd_thin(stack);
        const double sv_floor = 1e-12 * std::max(1.0, svd.singular_values[0]);
        for (int d = 0; d < t.n_dirs; ++d) {
            const double sv = svd.singular_values[d];
            Vector dir = sv * svd.right.col(d);
            DirectionMeta& m = out.meta_at(l, d);
            m.layer = l;
            m.index = d;
            m.class_label = -1;
            m.singular_rank = d;
            m.singular_value = sv;
            m.raw_norm = dir.norm();
            m.zero_flagged = sv <= sv_floor;
            out.at(l, d) = std::move(dir);
        }
    }
    return out;
}

} // namespace abw
