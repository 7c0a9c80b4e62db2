#include "abw/synth_world.hpp"

#include <algorithm>
#include <cmath>

#include "abw/seeding.hpp"

namespace abw {

namespace {

constexpr int kMaxCentroidAttempts = 1000;

Vector gaussian_vector(Rng& rng, int dim) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) {
        v[i] = rng.gaussian();
    }
    return v;
}

// Draw one centroid orthogonal to the refusal direction, scaled so that the
// expected distance between two independent draws is topic_scale.
Vector draw_centroid(Rng& rng, int dim, double topic_scale, const Vector& refusal_dir) {
    Vector c = gaussian_vector(rng, dim);
    c -= refusal_dir.dot(c) * refusal_dir;
    c *= topic_scale / std::sqrt(2.0 * double(dim));
    return c;
}

bool spacing_ok(const std::vector<Vector>& centroids, double topic_scale) {
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        for (std::size_t j = i + 1; j < centroids.size(); ++j) {
            const double d = (centroids[i] - centroids[j]).norm();
            if (d < 0.75 * topic_scale || d > 1.25 * topic_scale) {
                return false;
            }
        }
    }
    return true;
}

std::vector<Vector> draw_centroid_set(Rng& rng, int count, int dim, double topic_scale,
                                      const Vector& refusal_dir, const char* what) {
    for (int attempt = 0; attempt < kMaxCentroidAttempts; ++attempt) {
        std::vector<Vector> set;
        set.reserve(count);
        for (int i = 0; i < count; ++i) {
            set.push_back(draw_centroid(rng, dim, topic_scale, refusal_dir));
        }
        if (spacing_ok(set, topic_scale)) {
            return set;
        }
    }
    throw GenerationError(std::string("generate_world: could not satisfy centroid spacing for ") +
                          what);
}

Vector noise_vector(Rng& rng, int dim, double sigma) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) {
        v[i] = sigma * rng.gaussian();
    }
    return v;
}

} // namespace

std::vector<double> default_layer_profile(int n_layers) {
    std::vector<double> p(n_layers, 1.0);
    if (n_layers == 1) {
        return p;
    }
    // plateau boundaries scale with depth; at 24 layers: 8..16
    const int lo = int(std::round(n_layers / 3.0));
    const int hi = int(std::round(2.0 * n_layers / 3.0));
    for (int i = 0; i < n_layers; ++i) {
        if (i < lo) {
            p[i] = 0.2 + 0.8 * double(i) / double(lo);
        } else if (i <= hi) {
            p[i] = 1.0;
        } else {
            p[i] = 1.0 - 0.8 * double(i - hi) / double(n_layers - 1 - hi);
        }
    }
    return p;
}

void WorldSpec::validate() const {
    if (n_categories < 1 || hidden_dim < 8 || n_layers < 1) {
        throw InvalidInputError("WorldSpec: n_categories >= 1, hidden_dim >= 8, n_layers >= 1");
    }
    if (!(topic_scale > 0.0) || !(refusal_norm > 0.0) || !(noise_sigma > 0.0)) {
        throw InvalidInputError("WorldSpec: topic_scale, refusal_norm, noise_sigma must be > 0");
    }
    if (tilt_norm < 0.0) {
        throw InvalidInputError("WorldSpec: tilt_norm must be >= 0");
    }
    if (contamination_rate < 0.0 || contamination_rate > 1.0) {
        throw InvalidInputError("WorldSpec: contamination_rate must be in [0, 1]");
    }
    if (n_benign_topics < 1) {
        throw InvalidInputError("WorldSpec: n_benign_topics must be >= 1");
    }
    if (!refusal_layer_profile.empty()) {
        if (int(refusal_layer_profile.size()) != n_layers) {
            throw InvalidInputError("WorldSpec: refusal_layer_profile length != n_layers");
        }
        for (double v : refusal_layer_profile) {
            if (v < 0.0 || v > 1.0) {
                throw InvalidInputError("WorldSpec: profile entries must be in [0, 1]");
            }
        }
    }
}

std::vector<double> WorldSpec::effective_profile() const {
    return refusal_layer_profile.empty() ? default_layer_profile(n_layers)
                                         : refusal_layer_profile;
}

int WorldSpec::peak_profile_layer() const {
    const auto p = effective_profile();
    return int(std::max_element(p.begin(), p.end()) - p.begin());
}

PlantedTruth generate_world(const WorldSpec& spec) {
    spec.validate();
    PlantedTruth truth;
    truth.n_categories = spec.n_categories;
    truth.hidden_dim = spec.hidden_dim;
    truth.n_layers = spec.n_layers;
    truth.profile = spec.effective_profile();

    Rng rng(derive_seed(spec.seed, "world"));

    Vector r = gaussian_vector(rng, spec.hidden_dim);
    truth.refusal_dir = r / r.norm();

    truth.topic_centroids = draw_centroid_set(rng, spec.n_categories, spec.hidden_dim,
                                              spec.topic_scale, truth.refusal_dir, "categories");
    truth.benign_centroids = draw_centroid_set(rng, spec.n_benign_topics, spec.hidden_dim,
                                               spec.topic_scale, truth.refusal_dir, "benign");

    truth.category_tilts.reserve(spec.n_categories);
    for (int c = 0; c < spec.n_categories; ++c) {
        Vector t = gaussian_vector(rng, spec.hidden_dim);
        t -= truth.refusal_dir.dot(t) * truth.refusal_dir;
        if (spec.tilt_norm == 0.0) {
            t.setZero();
        } else {
            t *= spec.tilt_norm / t.norm();
        }
        truth.category_tilts.push_back(std::move(t));
    }
    return truth;
}

Vector PromptRecord::pooled() const {
    Vector m = Vector::Zero(activations.front().size());
    for (const Vector& a : activations) {
        m += a;
    }
    return m / double(activations.size());
}

int PoolSet::n_layers() const {
    for (const auto& grp : harmful) {
        if (!grp.empty()) {
            return int(grp.front().activations.size());
        }
    }
    return 0;
}

int PoolSet::hidden_dim() const {
    for (const auto& grp : harmful) {
        if (!grp.empty()) {
            return int(grp.front().activations.front().size());
        }
    }
    return 0;
}

std::vector<const PromptRecord*> PoolSet::all_harmful() const {
    std::vector<const PromptRecord*> out;
    for (const auto& grp : harmful) {
        for (const auto& r : grp) {
            out.push_back(&r);
        }
    }
    return out;
}

std::vector<const PromptRecord*> PoolSet::all_harmless() const {
    std::vector<const PromptRecord*> out;
    for (const auto& grp : matched_good) {
        for (const auto& r : grp) {
            out.push_back(&r);
        }
    }
    for (const auto& r : unmatched_good) {
        out.push_back(&r);
    }
    return out;
}

PoolSet sample_pools(const PlantedTruth& truth, const WorldSpec& spec, int n_harmful_per_cat,
                     int n_matched_per_cat, int n_unmatched) {
    spec.validate();
    if (n_harmful_per_cat < 1 || n_matched_per_cat < 1 || n_unmatched < 1) {
        throw InvalidInputError("sample_pools: counts must be >= 1");
    }
    Rng rng(derive_seed(spec.seed, "pools"));
    const int L = truth.n_layers;
    const int D = truth.hidden_dim;
    const auto& profile = truth.profile;

    PoolSet pools;
    pools.harmful.resize(truth.n_categories);
    pools.matched_good.resize(truth.n_categories);

    for (int c = 0; c < truth.n_categories; ++c) {
        for (int i = 0; i < n_harmful_per_cat; ++i) {
            PromptRecord rec;
            rec.id = "harmful/" + std::to_string(c) + "/" + std::to_string(i);
            rec.category = c;
            rec.harmful = true;
            rec.activations.reserve(L);
            for (int l = 0; l < L; ++l) {
                Vector a = truth.centroid(c) +
                           profile[l] * (spec.refusal_norm * truth.refusal_dir + truth.tilt(c)) +
                           noise_vector(rng, D, spec.noise_sigma);
                rec.activations.push_back(std::move(a));
            }
            pools.harmful[c].push_back(std::move(rec));
        }
        for (int i = 0; i < n_matched_per_cat; ++i) {
            PromptRecord rec;
            rec.id = "matched/" + std::to_string(c) + "/" + std::to_string(i);
            rec.category = c;
            rec.harmful = false;
            rec.activations.reserve(L);
            for (int l = 0; l < L; ++l) {
                rec.activations.push_back(truth.centroid(c) +
                                          noise_vector(rng, D, spec.noise_sigma));
            }
            pools.matched_good[c].push_back(std::move(rec));
        }
    }

    const int n_contaminated = int(std::floor(spec.contamination_rate * double(n_unmatched)));
    for (int i = 0; i < n_unmatched; ++i) {
        PromptRecord rec;
        rec.id = "unmatched/" + std::to_string(i);
        rec.harmful = false;
        rec.contaminated = i < n_contaminated;
        const Vector* base = nullptr;
        if (rec.contaminated) {
            rec.category = int(rng.index(truth.n_categories));
            base = &truth.centroid(rec.category);
        } else {
            rec.category = -1;
            base = &truth.benign_centroids[rng.index(truth.benign_centroids.size())];
        }
        rec.activations.reserve(L);
        for (int l = 0; l < L; ++l) {
            rec.activations.push_back(*base + noise_vector(rng, D, spec.noise_sigma));
        }
        pools.unmatched_good.push_back(std::move(rec));
    }
    return pools;
}

Vector ground_truth_direction(const PlantedTruth& truth, int layer) {
    if (layer < 0 || layer >= truth.n_layers) {
        throw InvalidInputError("ground_truth_direction: layer out of range");
    }
    return truth.refusal_dir;
}

std::vector<CapturePair> make_capture_pairs(const PlantedTruth& truth, const WorldSpec& spec,
                                            int n_pairs, double sub_topic_spread,
                                            std::uint64_t seed) {
    if (n_pairs < 1) {
        throw InvalidInputError("make_capture_pairs: need at least one pair");
    }
    Rng rng(derive_seed(seed, "capture-pairs"));
    const int L = truth.n_layers;
    const int D = truth.hidden_dim;
    const auto& profile = truth.profile;

    // unit directions of every topic centroid; sub-topic offsets live in
    // their span
    std::vector<Vector> topic_dirs;
    for (const auto& c : truth.topic_centroids) {
        topic_dirs.push_back(c.normalized());
    }
    for (const auto& c : truth.benign_centroids) {
        topic_dirs.push_back(c.normalized());
    }

    auto sub_topic_offset = [&]() {
        Vector v = Vector::Zero(D);
        for (const auto& dir : topic_dirs) {
            v += rng.gaussian() * dir;
        }
        v *= sub_topic_spread / std::sqrt(double(topic_dirs.size()));
        return v;
    };

    std::vector<CapturePair> pairs;
    pairs.reserve(n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        const int c = i % truth.n_categories;
        const Vector off_r = sub_topic_offset();
        const Vector off_a = sub_topic_offset();

        CapturePair p;
        p.refused.id = "pair/" + std::to_string(i) + "/refused";
        p.refused.category = c;
        p.refused.harmful = true;
        p.answered.id = "pair/" + std::to_string(i) + "/answered";
        p.answered.category = c;
        p.answered.harmful = false;
        for (int l = 0; l < L; ++l) {
            p.refused.activations.push_back(
                truth.centroid(c) + off_r +
                profile[l] * (spec.refusal_norm * truth.refusal_dir + truth.tilt(c)) +
                noise_vector(rng, D, spec.noise_sigma));
            p.answered.activations.push_back(truth.centroid(c) + off_a +
                                             noise_vector(rng, D, spec.noise_sigma));
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

} // namespace abw
