#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "abw/pipeline.hpp"
#include "abw/seeding.hpp"
#include "abw/serialization.hpp"
#include "abw/text_format.hpp"

namespace {

namespace fs = std::filesystem;
using namespace abw;

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> mode;
};

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = load_config(opts.config_path);
    } else {
        cfg.world.seed = cfg.seed;
        cfg.som.seed = derive_seed(cfg.seed, "som");
    }
    if (opts.seed.has_value()) {
        cfg.seed = *opts.seed;
        cfg.world.seed = cfg.seed;
        cfg.som.seed = derive_seed(cfg.seed, "som");
    }
    if (opts.out.has_value()) {
        cfg.output_dir = *opts.out;
    }
    if (opts.mode.has_value()) {
        cfg.abliteration.mode = remove_mode_from_string(*opts.mode);
    }
    cfg.validate();
    return cfg;
}

ExtractionTag resolve_tag(const std::string& extraction) {
    return extraction_tag_from_string(extraction);
}

DirectionsTensor compute_tensor(const RunConfig& cfg, const PoolSet& pools, ExtractionTag tag) {
    switch (tag) {
    case ExtractionTag::unmatched_som:
        return extract_unmatched(pools, cfg.som, cfg.extraction.n_dirs);
    case ExtractionTag::matched_som:
        return extract_matched(pools, cfg.som);
    case ExtractionTag::matched_svd:
        return svd_orthogonalize(extract_matched(pools, cfg.som));
    }
    throw InvalidConfigError("unknown extraction tag");
}

fs::path dirs_tensor_path(const fs::path& out, ExtractionTag tag) {
    return out / ("dirs_" + to_string(tag) + ".abt");
}

fs::path dirs_meta_path(const fs::path& out, ExtractionTag tag) {
    return out / ("dirs_" + to_string(tag) + ".meta");
}

void require_exists(const fs::path& p, const std::string& hint) {
    if (!fs::exists(p)) {
        throw IoError(p.string() + " not found; run `abw " + hint + "` first");
    }
}

int cmd_synth(const RunConfig& cfg) {
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    const PlantedTruth truth = generate_world(cfg.world);
    const PoolSet pools = sample_pools(truth, cfg.world, cfg.sampling.n_harmful_per_cat,
                                       cfg.sampling.n_matched_per_cat, cfg.sampling.n_unmatched);
    const ToyModel model = build_model(truth, cfg.world, derive_seed(cfg.seed, "model"));
    save_truth(truth, out / "truth");
    save_pools(pools, out / "pools");
    save_model(model, out / "model");
    std::ofstream cfg_out(out / "config.effective");
    cfg_out << effective_config(cfg);
    std::cout << "world, pools and model written to " << out << "\n";
    return 0;
}

int cmd_extract(const RunConfig& cfg, const std::string& extraction) {
    const fs::path out = cfg.output_dir;
    require_exists(out / "pools" / "harmful.abt", "synth");
    const PoolSet pools = load_pools(out / "pools");
    std::vector<ExtractionTag> tags;
    if (extraction.empty()) {
        tags = cfg.extraction.configs;
    } else {
        tags.push_back(resolve_tag(extraction));
    }
    for (ExtractionTag tag : tags) {
        const DirectionsTensor dirs = compute_tensor(cfg, pools, tag);
        save_directions(dirs, dirs_tensor_path(out, tag), dirs_meta_path(out, tag));
        std::cout << "extracted " << to_string(tag) << ": (" << dirs.n_layers << ", "
                  << dirs.n_dirs << ", " << dirs.hidden_dim << ")\n";
    }
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& extraction, double weight) {
    const fs::path out = cfg.output_dir;
    require_exists(out / "model" / "attn_out.abt", "synth");
    const ExtractionTag tag = resolve_tag(extraction.empty() ? "unmatched" : extraction);
    require_exists(dirs_tensor_path(out, tag), "extract");
    const ToyModel model = load_model(out / "model");
    const DirectionsTensor dirs =
        load_directions(dirs_tensor_path(out, tag), dirs_meta_path(out, tag));
    const AbliterationPlan plan = uniform_plan(cfg.abliteration.layers, weight,
                                               cfg.abliteration.mode, cfg.abliteration.targets);
    const ToyModel edited = apply_plan(model, dirs, plan);
    const fs::path dest = out / ("edited_" + to_string(tag) + "_w" + format_double(weight));
    save_model(edited, dest);
    std::cout << "edited model written to " << dest << "\n";
    return 0;
}

EvalProtocol protocol_from(const RunConfig& cfg) {
    EvalProtocol protocol;
    protocol.n_eval_prompts = cfg.evaluation.n_eval_prompts;
    protocol.n_canaries = cfg.evaluation.n_canaries;
    protocol.kl_prompts = cfg.evaluation.kl_prompts;
    protocol.kl_tokens = cfg.evaluation.kl_tokens;
    protocol.kl_topk = cfg.evaluation.kl_topk;
    protocol.seed = derive_seed(cfg.seed, "eval");
    return protocol;
}

int cmd_sweep(const RunConfig& cfg, const std::string& extraction) {
    const fs::path out = cfg.output_dir;
    require_exists(out / "pools" / "harmful.abt", "synth");
    require_exists(out / "model" / "attn_out.abt", "synth");
    const ExtractionTag tag = resolve_tag(extraction.empty() ? "unmatched" : extraction);
    require_exists(dirs_tensor_path(out, tag), "extract");

    const PoolSet pools = load_pools(out / "pools");
    const ToyModel model = load_model(out / "model");
    const DirectionsTensor dirs =
        load_directions(dirs_tensor_path(out, tag), dirs_meta_path(out, tag));
    const EvalContext ctx =
        make_eval_context(model, pools, protocol_from(cfg), cfg.abliteration.layers);
    const auto records = run_sweep(model, dirs, ctx, cfg.abliteration.layers,
                                   cfg.abliteration.weights, cfg.abliteration.mode,
                                   cfg.abliteration.targets);
    json summary;
    summary["sweeps"][to_string(tag)] = sweep_records_to_json(records);
    const std::string name = to_string(tag);
    std::ofstream(out / ("sweep_" + name + ".csv")) << render_sweep_csv(summary, name);
    std::ofstream(out / ("r_grid_" + name + ".csv")) << render_r_grid_csv(summary, name);
    std::ofstream(out / ("plot_" + name + ".csv")) << render_plot_data_csv(summary, name);
    std::cout << render_r_grid_csv(summary, name);
    return 0;
}

int cmd_synergy(const RunConfig& cfg, const std::string& extraction) {
    const fs::path out = cfg.output_dir;
    const ExtractionTag tag = resolve_tag(extraction.empty() ? "unmatched" : extraction);
    require_exists(dirs_tensor_path(out, tag), "extract");
    const PoolSet pools = load_pools(out / "pools");
    const ToyModel model = load_model(out / "model");
    const DirectionsTensor dirs =
        load_directions(dirs_tensor_path(out, tag), dirs_meta_path(out, tag));
    const EvalContext ctx =
        make_eval_context(model, pools, protocol_from(cfg), cfg.abliteration.layers);

    std::vector<SweepRecord> solos;
    const auto pairs = cfg.synergy_pairs();
    std::vector<int> solo_layers;
    for (const auto& [a, b] : pairs) {
        for (int l : {a, b}) {
            if (std::find(solo_layers.begin(), solo_layers.end(), l) == solo_layers.end()) {
                solo_layers.push_back(l);
            }
        }
    }
    for (int l : solo_layers) {
        solos.push_back(evaluate_cell(model, dirs, ctx, {l}, cfg.synergy.weight,
                                      cfg.abliteration.mode, cfg.abliteration.targets));
    }
    const auto records = pair_synergy(model, dirs, ctx, pairs, cfg.synergy.weight, solos,
                                      cfg.abliteration.mode, cfg.abliteration.targets);
    json summary;
    json arr = json::array();
    for (const auto& s : records) {
        arr.push_back({{"layer_a", s.layer_a},
                       {"layer_b", s.layer_b},
                       {"weight", s.weight},
                       {"r_solo_a", s.r_solo_a},
                       {"r_solo_b", s.r_solo_b},
                       {"r_pair", s.r_pair},
                       {"synergy", s.synergy}});
    }
    summary["synergy"] = {{"weight", cfg.synergy.weight}, {"records", std::move(arr)}};
    std::ofstream(out / "synergy.csv") << render_synergy_csv(summary);
    std::cout << render_synergy_csv(summary);
    return 0;
}

int cmd_capture(const RunConfig& cfg) {
    const fs::path out = cfg.output_dir;
    require_exists(out / "truth" / "centroids.abt", "synth");
    PlantedTruth truth = load_truth(out / "truth");
    const auto pairs = make_capture_pairs(truth, cfg.world, cfg.capture.n_pairs,
                                          cfg.capture_spread(), derive_seed(cfg.seed, "capture"));
    json capture = json::object();
    for (ExtractionTag tag :
         {ExtractionTag::unmatched_som, ExtractionTag::matched_svd}) {
        const auto tensor_path = dirs_tensor_path(out, tag);
        if (!fs::exists(tensor_path)) {
            continue;
        }
        const DirectionsTensor dirs = load_directions(tensor_path, dirs_meta_path(out, tag));
        const CaptureReport report = capture_analysis(pairs, dirs);
        json rep;
        rep["mean_over_layers"] = report.mean_over_layers;
        rep["pooled_mean"] = report.pooled_mean;
        rep["skipped_pairs"] = report.skipped_pairs;
        json layers = json::array();
        for (const auto& lr : report.layers) {
            layers.push_back({{"mean_capture", lr.mean_capture},
                              {"max_capture", lr.max_capture},
                              {"mean_max_cosine", lr.mean_max_cosine},
                              {"per_pair", lr.per_pair}});
        }
        rep["layers"] = std::move(layers);
        capture[to_string(tag)] = std::move(rep);
    }
    if (capture.empty()) {
        std::cerr << "no direction tensors found; run `abw extract` first\n";
        return 1;
    }
    json summary;
    summary["capture"] = std::move(capture);
    std::ofstream(out / "capture.csv") << render_capture_csv(summary);
    std::ofstream(out / "capture_layers.csv") << render_capture_layers_csv(summary);
    std::cout << render_capture_csv(summary);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"abliteration workbench: planted-world direction extraction and evaluation"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string extraction;
    double ablate_weight = 1.0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opts.config_path, "run configuration file");
        cmd->add_option("--seed", opts.seed, "override the global seed");
        cmd->add_option("--out", opts.out, "override the output directory");
        cmd->add_option("--mode", opts.mode, "override the removal mode (project|scaled)");
    };

    auto* synth = app.add_subcommand("synth", "generate the world, pools and model");
    add_common(synth);

    auto* extract = app.add_subcommand("extract", "extract direction tensors");
    add_common(extract);
    extract->add_option("--extraction", extraction,
                        "unmatched|matched|matched-svd (default: all configured)");

    auto* ablate = app.add_subcommand("ablate", "apply directions to the model weights");
    add_common(ablate);
    ablate->add_option("--extraction", extraction, "which tensor to apply");
    ablate->add_option("--weight", ablate_weight, "uniform weight for the edit");

    auto* sweep = app.add_subcommand("sweep", "layer/weight sweep with refusal counting");
    add_common(sweep);
    sweep->add_option("--extraction", extraction, "which tensor to sweep");

    auto* synergy = app.add_subcommand("synergy", "layer-pair synergy at one weight");
    add_common(synergy);
    synergy->add_option("--extraction", extraction, "which tensor to use");

    auto* capture = app.add_subcommand("capture", "capture analysis of probe pairs");
    add_common(capture);

    auto* run = app.add_subcommand("run", "full pipeline");
    add_common(run);

    std::string verify_dir;
    auto* verify = app.add_subcommand("verify", "re-check invariants on existing outputs");
    verify->add_option("--out", verify_dir, "output directory to verify")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) {
            const int failures = abw::verify_outputs(verify_dir, std::cout);
            std::cout << (failures == 0 ? "verify: all checks passed\n"
                                        : "verify: " + std::to_string(failures) +
                                              " check(s) failed\n");
            return failures == 0 ? 0 : 1;
        }
        const abw::RunConfig cfg = resolve_config(opts);
        if (synth->parsed()) {
            return cmd_synth(cfg);
        }
        if (extract->parsed()) {
            return cmd_extract(cfg, extraction);
        }
        if (ablate->parsed()) {
            return cmd_ablate(cfg, extraction, ablate_weight);
        }
        if (sweep->parsed()) {
            return cmd_sweep(cfg, extraction);
        }
        if (synergy->parsed()) {
            return cmd_synergy(cfg, extraction);
        }
        if (capture->parsed()) {
            return cmd_capture(cfg);
        }
        if (run->parsed()) {
            const auto result = abw::run_pipeline(cfg);
            std::cout << "pipeline complete; outputs in " << result.out_dir << "\n";
            if (result.summary.contains("conclusions")) {
                std::cout << "conclusions: " << result.summary["conclusions"].dump() << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
