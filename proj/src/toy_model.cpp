#include "abw/toy_model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "abw/seeding.hpp"

namespace abw {

namespace {

constexpr double kSpectralCap = 1.05;
constexpr double kBaseScale = 0.0015;  // base perturbation of the carrier maps
constexpr double kMemoNorm = 3.0;      // routed memo magnitude on the canonical input
constexpr double kScoreTarget = 4.0;   // baseline refusal score on the canonical input
constexpr double kUnembedScale = 3.0;  // logit spread after RMS normalization
constexpr double kHandleWeight = 0.55; // memo component inside the deviation span

// Relative depths and shares of the routed-evidence writers; at 24 layers
// these land on 9, 11, 12, 13, 14, 15.
constexpr double kRouterFractions[] = {0.375, 0.4584, 0.5, 0.5417, 0.5834, 0.625};
constexpr double kRouterShares[] = {0.30, 0.10, 0.10, 0.10, 0.20, 0.20};
// Injection writers near the top of the stack; at 24 layers: 22, 23.
constexpr double kInjectionFractions[] = {0.9167, 0.9584};
constexpr double kInjectionShares[] = {0.55, 0.45};
// Topic content is consolidated away early in the stack; at 24 layers: 1.
constexpr double kConsolidationFraction = 0.0417;

Vector gaussian_unit(Rng& rng, int dim) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) {
        v[i] = rng.gaussian();
    }
    return v / v.norm();
}

Matrix gaussian_matrix(Rng& rng, int dim) {
    Matrix m(dim, dim);
    for (int r = 0; r < dim; ++r) {
        for (int c = 0; c < dim; ++c) {
            m(r, c) = rng.gaussian();
        }
    }
    return m / std::sqrt(double(dim));
}

void project_out(Vector& v, const Vector& dir) {
    const double n2 = dir.squaredNorm();
    if (n2 > 0.0) {
        v -= (dir.dot(v) / n2) * dir;
    }
}

double layer_spectral_radius(const Matrix& a, const Matrix& m) {
    Matrix x = a + m;
    x.diagonal().array() += 1.0;
    Eigen::EigenSolver<Matrix> es(x, /*computeEigenvectors=*/false);
    double radius = 0.0;
    for (int i = 0; i < x.rows(); ++i) {
        radius = std::max(radius, std::abs(es.eigenvalues()[i]));
    }
    return radius;
}

// floor(fraction * L) deduplicated, shares merged; later anchors pushed past
// earlier ones when the depth is too small to separate them.
std::vector<std::pair<int, double>> place_layers(int n_layers, const double* fracs,
                                                 const double* shares, int count,
                                                 int min_index, int max_index) {
    std::map<int, double> merged;
    int prev = min_index - 1;
    for (int i = 0; i < count; ++i) {
        int idx = std::min(n_layers - 1, int(fracs[i] * n_layers));
        idx = std::max(idx, min_index);
        idx = std::max(idx, prev); // keep order, allow merging
        idx = std::min(idx, max_index);
        merged[idx] += shares[i];
        prev = idx;
    }
    return {merged.begin(), merged.end()};
}

} // namespace

ToyModel build_model(const PlantedTruth& truth, const WorldSpec& spec, std::uint64_t model_seed,
                     Nonlinearity nonlinearity) {
    spec.validate();
    const int L = truth.n_layers;
    const int D = truth.hidden_dim;
    if (L < 2) {
        throw InvalidInputError("build_model: need at least 2 layers");
    }

    ToyModel model;
    model.n_layers = L;
    model.hidden_dim = D;
    model.nonlinearity = nonlinearity;

    Rng rng(derive_seed(model_seed, "model"));
    const Vector& r = truth.refusal_dir;

    // --- memo geometry -----------------------------------------------------
    // Handle component: a signed combination of category-centroid deviations
    // from their mean. Deviations are invariant under shifts of the good-pool
    // mean, so contamination of the unmatched pool does not move the handle.
    Vector cat_mean = Vector::Zero(D);
    for (const auto& c : truth.topic_centroids) {
        cat_mean += c;
    }
    cat_mean /= double(truth.n_categories);
    Vector benign_mean = Vector::Zero(D);
    for (const auto& c : truth.benign_centroids) {
        benign_mean += c;
    }
    benign_mean /= double(truth.benign_centroids.size());
    const Vector pool_offset = cat_mean - benign_mean;

    Vector handle = Vector::Zero(D);
    for (const auto& c : truth.topic_centroids) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Vector dev = c - cat_mean;
        handle += sign * dev.normalized();
    }
    project_out(handle, r);
    project_out(handle, pool_offset);
    for (const auto& t : truth.category_tilts) {
        project_out(handle, t);
    }
    handle.normalize();

    // Private memo component, orthogonal to every planted structure.
    Vector priv = gaussian_unit(rng, D);
    for (int pass = 0; pass < 2; ++pass) {
        project_out(priv, r);
        project_out(priv, handle);
        project_out(priv, pool_offset);
        for (const auto& c : truth.topic_centroids) {
            project_out(priv, c);
        }
        for (const auto& c : truth.benign_centroids) {
            project_out(priv, c);
        }
        for (const auto& t : truth.category_tilts) {
            project_out(priv, t);
        }
    }
    priv.normalize();

    const double priv_weight = std::sqrt(1.0 - kHandleWeight * kHandleWeight);
    const Vector memo_dir = kHandleWeight * handle + priv_weight * priv;

    // --- layer placement ----------------------------------------------------
    // consolidation layer: removes topic-centroid content from the stream
    const int cleaner = std::min(int(kConsolidationFraction * L), L - 3);
    const bool has_cleaner = L >= 4 && cleaner >= 0;
    const int router_min = has_cleaner ? cleaner + 1 : 0;
    const auto routers = place_layers(L, kRouterFractions, kRouterShares,
                                      int(std::size(kRouterFractions)), router_min, L - 2);
    const int max_router = routers.back().first;
    const auto injections =
        place_layers(L, kInjectionFractions, kInjectionShares,
                     int(std::size(kInjectionFractions)), max_router + 1, L - 1);
    if (injections.front().first <= max_router) {
        throw ConstructionError("build_model: no room for injection layers");
    }
    for (const auto& [idx, share] : routers) {
        (void)share;
        model.router_layers.push_back(idx);
    }
    for (const auto& [idx, share] : injections) {
        (void)share;
        model.injection_layers.push_back(idx);
    }

    const auto& profile = truth.profile;
    const double mean_profile =
        std::accumulate(profile.begin(), profile.end(), 0.0) / double(L);
    const double evidence = mean_profile * spec.refusal_norm; // canonical routed read
    // capped so that worlds with a vanishing signal still construct; their
    // scores then fail classifier calibration instead of model building
    const double router_gain = std::min(kMemoNorm / evidence, 1000.0);

    // structured (non-carrier) per-layer parts, split evenly across the two
    // weight matrices; the injection part is rescaled during calibration
    std::vector<Matrix> fixed_part(L);
    std::vector<Matrix> inject_part(L);
    if (has_cleaner) {
        std::vector<Vector> topic_basis;
        auto add_to_basis = [&](Vector v) {
            for (const auto& q : topic_basis) {
                v -= q.dot(v) * q;
            }
            if (v.norm() > 1e-10) {
                topic_basis.push_back(v / v.norm());
            }
        };
        for (const auto& c : truth.topic_centroids) {
            add_to_basis(c);
        }
        for (const auto& c : truth.benign_centroids) {
            add_to_basis(c);
        }
        Matrix proj = Matrix::Zero(D, D);
        for (const auto& q : topic_basis) {
            proj += q * q.transpose();
        }
        fixed_part[cleaner] = -proj;
    }
    for (const auto& [idx, share] : routers) {
        Matrix w = router_gain * share * memo_dir * r.transpose();
        if (fixed_part[idx].size() == 0) {
            fixed_part[idx] = std::move(w);
        } else {
            fixed_part[idx] += w;
        }
    }
    for (const auto& [idx, share] : injections) {
        inject_part[idx] = share * r * memo_dir.transpose();
    }

    // --- assembly, gain validation, calibration -----------------------------
    const Vector probe = [&] {
        Vector p = Vector::Zero(D);
        for (int c = 0; c < truth.n_categories; ++c) {
            p += truth.centroid(c) +
                 mean_profile * (spec.refusal_norm * truth.refusal_dir + truth.tilt(c));
        }
        return Vector(p / double(truth.n_categories));
    }();

    double base_scale = kBaseScale;
    for (int attempt = 0; attempt < 8; ++attempt) {
        Rng mats_rng(derive_seed(model_seed, "model/base", attempt));
        std::vector<Matrix> carrier_a(L), carrier_m(L);
        std::vector<double> layer_scale(L, base_scale);
        for (int l = 0; l < L; ++l) {
            carrier_a[l] = gaussian_matrix(mats_rng, D);
            carrier_m[l] = gaussian_matrix(mats_rng, D);
        }

        auto assemble = [&](double inj_gain) {
            model.attn_out.assign(L, Matrix());
            model.mlp_down.assign(L, Matrix());
            for (int l = 0; l < L; ++l) {
                model.attn_out[l] = layer_scale[l] * carrier_a[l];
                model.mlp_down[l] = layer_scale[l] * carrier_m[l];
                if (fixed_part[l].size() != 0) {
                    model.attn_out[l] += 0.5 * fixed_part[l];
                    model.mlp_down[l] += 0.5 * fixed_part[l];
                }
                if (inject_part[l].size() != 0) {
                    model.attn_out[l] += 0.5 * inj_gain * inject_part[l];
                    model.mlp_down[l] += 0.5 * inj_gain * inject_part[l];
                }
            }
        };

        auto enforce_cap = [&](double inj_gain) {
            assemble(inj_gain);
            for (int l = 0; l < L; ++l) {
                for (int cap_iter = 0;
                     layer_spectral_radius(model.attn_out[l], model.mlp_down[l]) > kSpectralCap;
                     ++cap_iter) {
                    if (cap_iter >= 60) {
                        throw ConstructionError("build_model: spectral cap unreachable");
                    }
                    layer_scale[l] *= 0.7;
                    model.attn_out[l] = layer_scale[l] * carrier_a[l];
                    model.mlp_down[l] = layer_scale[l] * carrier_m[l];
                    if (fixed_part[l].size() != 0) {
                        model.attn_out[l] += 0.5 * fixed_part[l];
                        model.mlp_down[l] += 0.5 * fixed_part[l];
                    }
                    if (inject_part[l].size() != 0) {
                        model.attn_out[l] += 0.5 * inj_gain * inject_part[l];
                        model.mlp_down[l] += 0.5 * inj_gain * inject_part[l];
                    }
                }
            }
        };

        enforce_cap(1.0);

        // carrier-only propagation of the refusal feature (structured parts
        // excluded); this fixes the readout and validates the carry gain
        Vector img = r;
        for (int l = 0; l < L; ++l) {
            img += layer_scale[l] * (carrier_a[l] * img) + layer_scale[l] * (carrier_m[l] * img);
        }
        const double gain = img.norm();
        if (gain < 0.5 || gain > 2.0) {
            base_scale *= 0.5;
            continue;
        }
        model.refusal_readout = img / gain;
        model.readout_bias = 0.0;

        Rng urng(derive_seed(model_seed, "model/unembed"));
        model.unembed = Matrix(model.vocab_size, D);
        for (int v = 0; v < model.vocab_size; ++v) {
            model.unembed.row(v) = (kUnembedScale * gaussian_unit(urng, D)).transpose();
        }

        // the refusal score is affine in the injection gain
        const double score_unit = refusal_score(model, probe);
        assemble(0.0);
        const double score_zero = refusal_score(model, probe);
        const double path = score_unit - score_zero;
        // a vanishing path means the world carries no usable signal; keep the
        // unit gain and let classifier calibration report the failure
        const double inj_gain = std::abs(path) > 1e-9 ? (kScoreTarget - score_zero) / path : 1.0;
        enforce_cap(inj_gain);
        return model;
    }
    throw ConstructionError("build_model: propagation gain out of [0.5, 2.0]");
}

namespace {

inline void apply_nonlinearity(Vector& v, Nonlinearity nl) {
    if (nl == Nonlinearity::tanh_elem) {
        v = v.array().tanh();
    }
}

inline void apply_nonlinearity(Matrix& m, Nonlinearity nl) {
    if (nl == Nonlinearity::tanh_elem) {
        m = m.array().tanh();
    }
}

} // namespace

ForwardTrace forward(const ToyModel& model, const Vector& input_activation) {
    if (input_activation.size() != model.hidden_dim) {
        throw InvalidInputError("forward: input dimension mismatch");
    }
    ForwardTrace trace;
    trace.residuals.reserve(model.n_layers);
    Vector res = input_activation;
    for (int l = 0; l < model.n_layers; ++l) {
        Vector act = res;
        apply_nonlinearity(act, model.nonlinearity);
        res += model.attn_out[l] * act + model.mlp_down[l] * act;
        trace.residuals.push_back(res);
    }
    trace.refusal_score = model.refusal_readout.dot(res) + model.readout_bias;
    trace.logits = logits_from_residual(model, res);
    return trace;
}

Matrix forward_final_batch(const ToyModel& model, const Matrix& inputs) {
    if (inputs.rows() != model.hidden_dim) {
        throw InvalidInputError("forward_final_batch: input dimension mismatch");
    }
    Matrix res = inputs;
    for (int l = 0; l < model.n_layers; ++l) {
        Matrix act = res;
        apply_nonlinearity(act, model.nonlinearity);
        res += model.attn_out[l] * act + model.mlp_down[l] * act;
    }
    return res;
}

double refusal_score(const ToyModel& model, const Vector& input_activation) {
    Vector res = input_activation;
    for (int l = 0; l < model.n_layers; ++l) {
        Vector act = res;
        apply_nonlinearity(act, model.nonlinearity);
        res += model.attn_out[l] * act + model.mlp_down[l] * act;
    }
    return model.refusal_readout.dot(res) + model.readout_bias;
}

Vector logits_from_residual(const ToyModel& model, const Vector& final_residual) {
    const double n = final_residual.norm();
    if (n == 0.0) {
        return Vector::Zero(model.vocab_size);
    }
    // RMS normalization before the unembedding keeps the logit spread
    // independent of the residual magnitude
    const Vector normalized = final_residual * (std::sqrt(double(model.hidden_dim)) / n);
    return model.unembed * normalized;
}

Vector log_softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

std::vector<int> generate(const ToyModel& model, const Vector& input_activation, int n_tokens,
                          std::uint64_t gen_seed) {
    if (n_tokens < 1) {
        throw InvalidInputError("generate: n_tokens must be >= 1");
    }
    Rng rng(gen_seed);
    std::vector<int> tokens;
    tokens.reserve(n_tokens);
    Vector ctx = input_activation;
    for (int t = 0; t < n_tokens; ++t) {
        Vector res = ctx;
        for (int l = 0; l < model.n_layers; ++l) {
            Vector act = res;
            apply_nonlinearity(act, model.nonlinearity);
            res += model.attn_out[l] * act + model.mlp_down[l] * act;
        }
        const Vector lp = log_softmax(logits_from_residual(model, res));
        const double u = rng.uniform();
        double acc = 0.0;
        int tok = model.vocab_size - 1;
        for (int v = 0; v < model.vocab_size; ++v) {
            acc += std::exp(lp[v]);
            if (u < acc) {
                tok = v;
                break;
            }
        }
        tokens.push_back(tok);
        ctx += kGenerationFeedback * model.unembed.row(tok).transpose();
    }
    return tokens;
}

std::vector<std::pair<int, double>> topk_logprobs(const ToyModel& model,
                                                  const Vector& input_activation, int k) {
    if (k < 1 || k > model.vocab_size) {
        throw InvalidInputError("topk_logprobs: k out of range");
    }
    const ForwardTrace trace = forward(model, input_activation);
    const Vector lp = log_softmax(trace.logits);
    std::vector<int> order(model.vocab_size);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return lp[a] > lp[b]; });
    std::vector<std::pair<int, double>> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        out.emplace_back(order[i], lp[order[i]]);
    }
    return out;
}

} // namespace abw
