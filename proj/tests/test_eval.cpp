#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "abw/eval.hpp"
#include "abw/seeding.hpp"
#include "abw/tolerances.hpp"

using namespace abw;

namespace {

struct Fixture {
    WorldSpec spec;
    PlantedTruth truth;
    PoolSet pools;
    ToyModel model;
    DirectionsTensor unmatched;
    EvalProtocol protocol;
    EvalContext ctx;

    Fixture() {
        spec.hidden_dim = 64;
        spec.n_layers = 8;
        spec.noise_sigma = spec.refusal_norm / (4.0 * 8.0);
        spec.seed = 202;
        truth = generate_world(spec);
        pools = sample_pools(truth, spec, 12, 12, 120);
        model = build_model(truth, spec, 3);
        SomConfig cfg;
        cfg.iterations = 1500;
        cfg.seed = 4;
        unmatched = extract_unmatched(pools, cfg, 7);
        protocol.kl_prompts = 20;
        protocol.kl_tokens = 8;
        protocol.kl_topk = 50;
        protocol.gen_tokens = 20;
        protocol.n_canaries = 12;
        protocol.seed = derive_seed(spec.seed, "eval");
        ctx = make_eval_context(model, pools, protocol);
    }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("classification boundaries are inclusive") {
    ClassifierCalibration cal{2.0, 1.0};
    CHECK(classify(2.0, cal) == Classification::REFUSE);
    CHECK(classify(1.0, cal) == Classification::COMPLY);
    CHECK(classify(1.5, cal) == Classification::EVASIVE);
    CHECK(classify(3.0, cal) == Classification::REFUSE);
    CHECK(classify(-1.0, cal) == Classification::COMPLY);
}

TEST_CASE("calibration succeeds on the default world and orders thresholds") {
    const auto& f = fixture();
    CHECK(f.ctx.calibration.tau_lo < f.ctx.calibration.tau_hi);
    CHECK(f.ctx.eval_inputs.size() == std::size_t(f.protocol.n_eval_prompts));
    CHECK(f.ctx.canary_inputs.size() == std::size_t(f.protocol.n_canaries));
    // stratified: the first n_categories prompts cover every category
    for (int c = 0; c < f.spec.n_categories; ++c) {
        CHECK(f.ctx.eval_categories[c] == c);
    }
}

TEST_CASE("calibration fails without a planted signal") {
    WorldSpec spec = fixture().spec;
    spec.refusal_norm = 1e-9;
    spec.tilt_norm = 0.0;
    spec.noise_sigma = 0.01;
    spec.seed = 777;
    const PlantedTruth truth = generate_world(spec);
    const PoolSet pools = sample_pools(truth, spec, 12, 12, 120);
    const ToyModel model = build_model(truth, spec, 3);
    EvalProtocol protocol = fixture().protocol;
    protocol.with_kl = false;
    CHECK_THROWS_AS(calibrate_classifier(model, pools, protocol), CalibrationError);
}

TEST_CASE("bigram entropy") {
    CHECK(bigram_entropy(std::vector<int>(50, 7)) == 0.0);
    // odd length makes the two bigrams exactly equiprobable
    std::vector<int> alternating;
    for (int i = 0; i < 51; ++i) {
        alternating.push_back(i % 2);
    }
    CHECK(bigram_entropy(alternating) == doctest::Approx(1.0).epsilon(1e-9));

    // seeded uniform stream vs direct histogram oracle
    Rng rng(3131);
    std::vector<int> stream;
    for (int i = 0; i < 50; ++i) {
        stream.push_back(int(rng.index(256)));
    }
    std::map<std::pair<int, int>, int> hist;
    for (std::size_t i = 0; i + 1 < stream.size(); ++i) {
        ++hist[{stream[i], stream[i + 1]}];
    }
    double oracle = 0.0;
    for (const auto& [bg, c] : hist) {
        (void)bg;
        const double p = c / 49.0;
        oracle -= p * std::log2(p);
    }
    CHECK(bigram_entropy(stream) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(std::abs(bigram_entropy(stream) - oracle) <= 0.5);

    CHECK_THROWS_AS(bigram_entropy({1}), InvalidInputError);
}

TEST_CASE("sparse kl") {
    const auto& f = fixture();
    std::vector<const PromptRecord*> refs;
    for (int i = 0; i < 10; ++i) {
        refs.push_back(&f.pools.unmatched_good[i]);
    }

    SUBCASE("identical models give exactly zero") {
        CHECK(kl_sparse(f.model, f.model, refs, 6, 50) == 0.0);
    }
    SUBCASE("k equal to the vocabulary matches the exact full kl") {
        // independent oracle: direct summation over the whole vocabulary for
        // a one-step stream
        std::vector<const PromptRecord*> one = {refs[0]};
        const auto stream = make_teacher_stream(f.model, one, 1, f.model.vocab_size);
        const ToyModel edited =
            apply_plan(f.model, f.unmatched, uniform_plan({4}, 0.8, RemoveMode::scaled));
        const double full = kl_sparse(f.model, edited, stream, f.model.vocab_size);

        const Vector input = one[0]->pooled();
        const Vector lp_base = log_softmax(forward(f.model, input).logits);
        const Vector lp_edit = log_softmax(forward(edited, input).logits);
        double oracle = 0.0;
        for (int v = 0; v < f.model.vocab_size; ++v) {
            oracle += std::exp(lp_base[v]) * (lp_base[v] - lp_edit[v]);
        }
        CHECK(full > 0.0);
        CHECK(std::abs(full - oracle) <= 1e-9);
    }
    SUBCASE("top-100 approximates the full kl within five percent") {
        const auto stream = make_teacher_stream(f.model, refs, 6, f.model.vocab_size);
        const ToyModel edited =
            apply_plan(f.model, f.unmatched, uniform_plan({4}, 0.8, RemoveMode::scaled));
        const double full = kl_sparse(f.model, edited, stream, f.model.vocab_size);
        const double sparse = kl_sparse(f.model, edited, stream, 100);
        CHECK(std::abs(sparse - full) <= 0.05 * full);
    }
    SUBCASE("kl is nonnegative across seeded model pairs") {
        WorldSpec tiny;
        tiny.hidden_dim = 16;
        tiny.n_layers = 2;
        tiny.n_categories = 3;
        tiny.n_benign_topics = 3;
        tiny.noise_sigma = tiny.refusal_norm / 16.0;
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            tiny.seed = seed + 1;
            const PlantedTruth truth = generate_world(tiny);
            const PoolSet pools = sample_pools(truth, tiny, 2, 2, 6);
            const ToyModel a = build_model(truth, tiny, seed * 2 + 1);
            const ToyModel b = build_model(truth, tiny, seed * 2 + 2);
            std::vector<const PromptRecord*> tiny_refs = {&pools.unmatched_good[0],
                                                          &pools.unmatched_good[1]};
            const double kl = kl_sparse(a, b, tiny_refs, 3, 8);
            CHECK(kl >= 0.0);
        }
    }
}

TEST_CASE("efficiency is defined only for positive kl") {
    CHECK(!efficiency(10, 10, 0.0).has_value());
    CHECK(!efficiency(10, 4, 0.0).has_value());
    const auto e = efficiency(10, 0, 10.0 / 2305.0);
    REQUIRE(e.has_value());
    CHECK(*e == doctest::Approx(2305.0).epsilon(1e-9));
}

TEST_CASE("weight zero produces the identity record") {
    const auto& f = fixture();
    const SweepRecord rec = evaluate_cell(f.model, f.unmatched, f.ctx, {4}, 0.0,
                                          RemoveMode::scaled, EditTargets::both);
    CHECK(rec.refusal_count == 10);
    CHECK(rec.evasive_count == 0);
    CHECK(rec.comply_count == 0);
    CHECK(rec.kl == 0.0);
    CHECK(!rec.efficiency.has_value());
    CHECK(rec.canary_false_refusals == 0);
}

TEST_CASE("sweep records satisfy the sum law and kl nonnegativity") {
    const auto& f = fixture();
    const auto records = run_sweep(f.model, f.unmatched, f.ctx, {3, 4}, {0.0, 0.5, 1.0},
                                   RemoveMode::scaled, EditTargets::both);
    CHECK(records.size() == 6);
    for (const auto& rec : records) {
        CHECK(rec.refusal_count + rec.evasive_count + rec.comply_count ==
              f.protocol.n_eval_prompts);
        CHECK(rec.kl >= 0.0);
        if (rec.efficiency.has_value()) {
            CHECK(*rec.efficiency ==
                  doctest::Approx((10.0 - rec.refusal_count) / rec.kl).epsilon(1e-12));
        } else {
            CHECK(rec.kl == 0.0);
        }
        CHECK(rec.mean_bigram_entropy > 0.0);
    }
    // deterministic ordering: layers outer, weights inner
    CHECK(records[0].layer_set == std::vector<int>{3});
    CHECK(records[0].weight == 0.0);
    CHECK(records[3].layer_set == std::vector<int>{4});
}

TEST_CASE("sweep is reproducible") {
    const auto& f = fixture();
    const auto a = run_sweep(f.model, f.unmatched, f.ctx, {4}, {0.5}, RemoveMode::scaled,
                             EditTargets::both);
    const auto b = run_sweep(f.model, f.unmatched, f.ctx, {4}, {0.5}, RemoveMode::scaled,
                             EditTargets::both);
    CHECK(a[0].refusal_count == b[0].refusal_count);
    CHECK(a[0].kl == b[0].kl);
    CHECK(a[0].mean_bigram_entropy == b[0].mean_bigram_entropy);
}

TEST_CASE("pair synergy") {
    const auto& f = fixture();
    const auto solos = run_sweep(f.model, f.unmatched, f.ctx, {3, 4}, {0.3},
                                 RemoveMode::scaled, EditTargets::both);

    SUBCASE("identical layers are rejected") {
        CHECK_THROWS_AS(pair_synergy(f.model, f.unmatched, f.ctx, {{4, 4}}, 0.3, solos,
                                     RemoveMode::scaled, EditTargets::both),
                        InvalidInputError);
    }
    SUBCASE("missing solo baseline is a protocol error") {
        CHECK_THROWS_AS(pair_synergy(f.model, f.unmatched, f.ctx, {{3, 5}}, 0.3, solos,
                                     RemoveMode::scaled, EditTargets::both),
                        ProtocolError);
        CHECK_THROWS_AS(pair_synergy(f.model, f.unmatched, f.ctx, {{3, 4}}, 0.5, solos,
                                     RemoveMode::scaled, EditTargets::both),
                        ProtocolError);
    }
    SUBCASE("zero synergy when the pair matches the best solo") {
        // weight 0 on both: everything stays at baseline
        const auto zero_solos = run_sweep(f.model, f.unmatched, f.ctx, {3, 4}, {0.0},
                                          RemoveMode::scaled, EditTargets::both);
        const auto records = pair_synergy(f.model, f.unmatched, f.ctx, {{3, 4}}, 0.0,
                                          zero_solos, RemoveMode::scaled, EditTargets::both);
        REQUIRE(records.size() == 1);
        CHECK(records[0].r_pair == 10);
        CHECK(records[0].synergy == 0);
    }
    SUBCASE("synergy formula") {
        const auto records = pair_synergy(f.model, f.unmatched, f.ctx, {{3, 4}}, 0.3, solos,
                                          RemoveMode::scaled, EditTargets::both);
        REQUIRE(records.size() == 1);
        CHECK(records[0].synergy ==
              std::min(records[0].r_solo_a, records[0].r_solo_b) - records[0].r_pair);
    }
}

TEST_CASE("capture analysis") {
    const auto& f = fixture();
    const auto pairs = make_capture_pairs(f.truth, f.spec, 9, 0.15 * f.spec.topic_scale,
                                          derive_seed(f.spec.seed, "capture"));

    SUBCASE("directions spanning the full space capture everything") {
        DirectionsTensor full;
        full.n_layers = f.spec.n_layers;
        full.n_dirs = f.spec.hidden_dim;
        full.hidden_dim = f.spec.hidden_dim;
        for (int l = 0; l < full.n_layers; ++l) {
            for (int d = 0; d < full.n_dirs; ++d) {
                Vector v = Vector::Zero(f.spec.hidden_dim);
                v[d] = 1.0;
                full.directions.push_back(v);
                full.meta.push_back(DirectionMeta{});
            }
        }
        const CaptureReport report = capture_analysis(pairs, full);
        for (const auto& lr : report.layers) {
            for (double pct : lr.per_pair) {
                CHECK(pct == doctest::Approx(100.0).epsilon(1e-9));
            }
        }
        CHECK(report.mean_over_layers == doctest::Approx(100.0).epsilon(1e-9));
    }
    SUBCASE("directions orthogonal to all differences capture nothing") {
        // pair differences live in span(centroids, refusal, tilts) plus noise;
        // build directions in the orthogonal complement of everything planted
        // with a noise-free pair set
        WorldSpec clean = f.spec;
        clean.noise_sigma = 1e-15;
        const auto clean_pairs =
            make_capture_pairs(f.truth, clean, 6, 0.0, derive_seed(clean.seed, "capture"));
        DirectionsTensor ortho;
        ortho.n_layers = f.spec.n_layers;
        ortho.n_dirs = 2;
        ortho.hidden_dim = f.spec.hidden_dim;
        Rng rng(515);
        for (int l = 0; l < ortho.n_layers; ++l) {
            // orthonormalize the layer's pair differences, then project the
            // random directions off that span
            std::vector<Vector> diff_basis;
            for (const auto& p : clean_pairs) {
                Vector diff = p.refused.activations[l] - p.answered.activations[l];
                for (const auto& q : diff_basis) {
                    diff -= q.dot(diff) * q;
                }
                if (diff.norm() > 1e-12) {
                    diff_basis.push_back(diff / diff.norm());
                }
            }
            for (int d = 0; d < 2; ++d) {
                Vector v(f.spec.hidden_dim);
                for (int i = 0; i < v.size(); ++i) {
                    v[i] = rng.gaussian();
                }
                for (int pass = 0; pass < 2; ++pass) {
                    for (const auto& q : diff_basis) {
                        v -= q.dot(v) * q;
                    }
                }
                ortho.directions.push_back(v);
                ortho.meta.push_back(DirectionMeta{});
            }
        }
        const CaptureReport report = capture_analysis(clean_pairs, ortho);
        CHECK(report.pooled_mean <= 1e-6);
    }
    SUBCASE("zero-difference pairs are skipped and flagged") {
        auto degenerate = pairs;
        degenerate[0].answered = degenerate[0].refused;
        const CaptureReport report = capture_analysis(degenerate, f.unmatched);
        CHECK(report.skipped_pairs == 1);
        CHECK(report.layers[0].per_pair.size() == degenerate.size() - 1);
    }
    SUBCASE("capture is invariant under invertible recombination of the directions") {
        const CaptureReport base = capture_analysis(pairs, f.unmatched);
        DirectionsTensor mixed = f.unmatched;
        Rng rng(99);
        for (int l = 0; l < mixed.n_layers; ++l) {
            Matrix mix(mixed.n_dirs, mixed.n_dirs);
            do {
                for (int i = 0; i < mixed.n_dirs; ++i) {
                    for (int j = 0; j < mixed.n_dirs; ++j) {
                        mix(i, j) = rng.gaussian();
                    }
                }
            } while (std::abs(mix.determinant()) < 1e-3);
            std::vector<Vector> recombined(mixed.n_dirs,
                                           Vector::Zero(mixed.hidden_dim));
            for (int i = 0; i < mixed.n_dirs; ++i) {
                for (int j = 0; j < mixed.n_dirs; ++j) {
                    recombined[i] += mix(i, j) * f.unmatched.at(l, j);
                }
            }
            for (int i = 0; i < mixed.n_dirs; ++i) {
                mixed.at(l, i) = recombined[i];
            }
        }
        const CaptureReport after = capture_analysis(pairs, mixed);
        for (std::size_t l = 0; l < base.layers.size(); ++l) {
            for (std::size_t p = 0; p < base.layers[l].per_pair.size(); ++p) {
                CHECK(std::abs(base.layers[l].per_pair[p] - after.layers[l].per_pair[p]) <=
                      100.0 * kSpanTol);
            }
        }
    }
    SUBCASE("report values stay within percent bounds") {
        const CaptureReport report = capture_analysis(pairs, f.unmatched);
        for (const auto& lr : report.layers) {
            CHECK(lr.mean_capture >= 0.0);
            CHECK(lr.max_capture <= 100.0);
        }
        CHECK(report.pooled_mean >= 0.0);
        CHECK(report.pooled_mean <= 100.0);
    }
}

TEST_CASE("healthy generations sit above the degeneration threshold") {
    const auto& f = fixture();
    for (int i = 0; i < 5; ++i) {
        const auto tokens =
            generate(f.model, f.pools.harmful[i][0].pooled(), 50, derive_seed(77, "gen", i));
        CHECK(bigram_entropy(tokens) >= kDegenerationBits);
    }
}

TEST_CASE("matched tensors stay inert at every layer in scaled mode") {
    const auto& f = fixture();
    SomConfig cfg;
    cfg.iterations = 1500;
    cfg.seed = 4;
    const DirectionsTensor matched = extract_matched(f.pools, cfg);
    const DirectionsTensor svd = svd_orthogonalize(matched);
    for (int l = 0; l < f.spec.n_layers; ++l) {
        // top weight is the worst case
        CHECK(evaluate_cell(f.model, matched, f.ctx, {l}, 1.2, RemoveMode::scaled,
                            EditTargets::both)
                  .refusal_count >= 9);
        CHECK(evaluate_cell(f.model, svd, f.ctx, {l}, 1.2, RemoveMode::scaled,
                            EditTargets::both)
                  .refusal_count >= 9);
    }
}

TEST_CASE("teacher stream snapshots match the unsliced computation") {
    const auto& f = fixture();
    std::vector<const PromptRecord*> refs;
    for (int i = 0; i < 6; ++i) {
        refs.push_back(&f.pools.unmatched_good[i]);
    }
    const auto plain = make_teacher_stream(f.model, refs, 5, 50);
    const auto cached = make_teacher_stream(f.model, refs, 5, 50, {4});
    const ToyModel edited =
        apply_plan(f.model, f.unmatched, uniform_plan({4}, 0.8, RemoveMode::scaled));
    const double a = kl_sparse(f.model, edited, plain, 50, 0);
    const double b = kl_sparse(f.model, edited, cached, 50, 4);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}
