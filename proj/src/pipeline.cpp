#include "abw/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "abw/seeding.hpp"
#include "abw/serialization.hpp"
#include "abw/text_format.hpp"

namespace abw {

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string());
    }
    out << content;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string csv_double(const json& v) {
    if (v.is_null()) {
        return "";
    }
    return format_double(v.get<double>());
}

std::string layer_set_label(const json& layer_set) {
    std::string s;
    for (std::size_t i = 0; i < layer_set.size(); ++i) {
        if (i > 0) {
            s += "+";
        }
        s += std::to_string(layer_set[i].get<int>());
    }
    return s;
}

// mean raw norm of the per-prompt difference vectors at one layer
double mean_diff_norm(const std::vector<std::vector<Vector>>& diffs, int layer) {
    double sum = 0.0;
    for (const auto& d : diffs[layer]) {
        sum += d.norm();
    }
    return sum / double(diffs[layer].size());
}

} // namespace

json sweep_records_to_json(const std::vector<SweepRecord>& records) {
    json arr = json::array();
    for (const auto& rec : records) {
        json r;
        r["layer_set"] = rec.layer_set;
        r["weight"] = rec.weight;
        r["refusals"] = rec.refusal_count;
        r["evasive"] = rec.evasive_count;
        r["comply"] = rec.comply_count;
        r["canary_false_refusals"] = rec.canary_false_refusals;
        r["mean_bigram_entropy"] = rec.mean_bigram_entropy;
        r["degenerate_generations"] = rec.degenerate_generations;
        r["kl"] = rec.kl;
        if (rec.efficiency.has_value()) {
            r["efficiency"] = *rec.efficiency;
        } else {
            r["efficiency"] = nullptr;
        }
        arr.push_back(std::move(r));
    }
    return arr;
}

std::string render_sweep_csv(const json& summary, const std::string& tag) {
    std::ostringstream out;
    out << "layers,weight,refusals,evasive,comply,canary_false_refusals,"
        << "mean_bigram_entropy,degenerate_generations,kl,efficiency\n";
    for (const auto& r : summary.at("sweeps").at(tag)) {
        out << layer_set_label(r.at("layer_set")) << "," << csv_double(r.at("weight")) << ","
            << r.at("refusals").get<int>() << "," << r.at("evasive").get<int>() << ","
            << r.at("comply").get<int>() << "," << r.at("canary_false_refusals").get<int>()
            << "," << csv_double(r.at("mean_bigram_entropy")) << ","
            << r.at("degenerate_generations").get<int>() << "," << csv_double(r.at("kl")) << ","
            << csv_double(r.at("efficiency")) << "\n";
    }
    return out.str();
}

std::string render_r_grid_csv(const json& summary, const std::string& tag) {
    const auto& records = summary.at("sweeps").at(tag);
    std::vector<double> weights;
    std::vector<int> layers;
    for (const auto& r : records) {
        if (r.at("layer_set").size() != 1) {
            continue;
        }
        const double w = r.at("weight").get<double>();
        const int l = r.at("layer_set")[0].get<int>();
        if (std::find(weights.begin(), weights.end(), w) == weights.end()) {
            weights.push_back(w);
        }
        if (std::find(layers.begin(), layers.end(), l) == layers.end()) {
            layers.push_back(l);
        }
    }
    std::sort(weights.begin(), weights.end());

    std::ostringstream out;
    out << "layer";
    for (double w : weights) {
        out << ",w=" << format_double(w);
    }
    out << "\n";
    for (int l : layers) {
        out << l;
        for (double w : weights) {
            for (const auto& r : records) {
                if (r.at("layer_set").size() == 1 && r.at("layer_set")[0].get<int>() == l &&
                    r.at("weight").get<double>() == w) {
                    out << "," << r.at("refusals").get<int>();
                    break;
                }
            }
        }
        out << "\n";
    }
    return out.str();
}

std::string render_table1_csv(const json& summary, const std::string& tag) {
    const auto& records = summary.at("sweeps").at(tag);
    std::vector<int> layers;
    for (const auto& r : records) {
        if (r.at("layer_set").size() == 1) {
            const int l = r.at("layer_set")[0].get<int>();
            if (std::find(layers.begin(), layers.end(), l) == layers.end()) {
                layers.push_back(l);
            }
        }
    }

    std::ostringstream out;
    out << "layer,min_weight_r0,kl,efficiency\n";
    for (int l : layers) {
        const json* best = nullptr;
        for (const auto& r : records) {
            if (r.at("layer_set").size() != 1 || r.at("layer_set")[0].get<int>() != l) {
                continue;
            }
            if (r.at("refusals").get<int>() == 0) {
                if (best == nullptr ||
                    r.at("weight").get<double>() < best->at("weight").get<double>()) {
                    best = &r;
                }
            }
        }
        if (best != nullptr) {
            out << l << "," << csv_double(best->at("weight")) << ","
                << csv_double(best->at("kl")) << "," << csv_double(best->at("efficiency"))
                << "\n";
        }
    }
    return out.str();
}

std::string render_plot_data_csv(const json& summary, const std::string& tag) {
    static const char* kMetrics[] = {"refusals", "kl", "mean_bigram_entropy",
                                     "canary_false_refusals"};
    std::ostringstream out;
    out << "layer,weight,metric,value\n";
    for (const auto& r : summary.at("sweeps").at(tag)) {
        for (const char* metric : kMetrics) {
            out << layer_set_label(r.at("layer_set")) << "," << csv_double(r.at("weight"))
                << "," << metric << ",";
            const auto& v = r.at(metric);
            if (v.is_number_integer()) {
                out << v.get<long long>();
            } else {
                out << csv_double(v);
            }
            out << "\n";
        }
    }
    return out.str();
}

std::string render_synergy_csv(const json& summary) {
    std::ostringstream out;
    out << "layer_a,layer_b,weight,r_solo_a,r_solo_b,r_pair,synergy\n";
    if (!summary.contains("synergy")) {
        return out.str();
    }
    for (const auto& r : summary.at("synergy").at("records")) {
        out << r.at("layer_a").get<int>() << "," << r.at("layer_b").get<int>() << ","
            << csv_double(r.at("weight")) << "," << r.at("r_solo_a").get<int>() << ","
            << r.at("r_solo_b").get<int>() << "," << r.at("r_pair").get<int>() << ","
            << r.at("synergy").get<int>() << "\n";
    }
    return out.str();
}

std::string render_capture_csv(const json& summary) {
    std::ostringstream out;
    out << "method,mean_over_layers,pooled_mean,peak_layer,peak_layer_mean,skipped_pairs\n";
    if (!summary.contains("capture")) {
        return out.str();
    }
    for (const auto& [method, rep] : summary.at("capture").items()) {
        int peak_layer = 0;
        double peak = -1.0;
        const auto& layers = rep.at("layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const double m = layers[l].at("mean_capture").get<double>();
            if (m > peak) {
                peak = m;
                peak_layer = int(l);
            }
        }
        out << method << "," << csv_double(rep.at("mean_over_layers")) << ","
            << csv_double(rep.at("pooled_mean")) << "," << peak_layer << ","
            << format_double(peak) << "," << rep.at("skipped_pairs").get<int>() << "\n";
    }
    return out.str();
}

std::string render_capture_layers_csv(const json& summary) {
    std::ostringstream out;
    out << "method,layer,mean_capture,max_capture,mean_max_cosine\n";
    if (!summary.contains("capture")) {
        return out.str();
    }
    for (const auto& [method, rep] : summary.at("capture").items()) {
        const auto& layers = rep.at("layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            out << method << "," << l << "," << csv_double(layers[l].at("mean_capture")) << ","
                << csv_double(layers[l].at("max_capture")) << ","
                << csv_double(layers[l].at("mean_max_cosine")) << "\n";
        }
    }
    return out.str();
}

void emit_plot_data(const std::vector<SweepRecord>& records,
                    const std::filesystem::path& path) {
    if (records.empty()) {
        throw InvalidInputError("emit_plot_data: no records");
    }
    json summary;
    summary["sweeps"]["records"] = sweep_records_to_json(records);
    write_text_file(path, render_plot_data_csv(summary, "records"));
}

namespace {

json capture_report_to_json(const CaptureReport& report) {
    json rep;
    rep["mean_over_layers"] = report.mean_over_layers;
    rep["pooled_mean"] = report.pooled_mean;
    rep["skipped_pairs"] = report.skipped_pairs;
    json layers = json::array();
    for (const auto& lr : report.layers) {
        json l;
        l["mean_capture"] = lr.mean_capture;
        l["max_capture"] = lr.max_capture;
        l["mean_max_cosine"] = lr.mean_max_cosine;
        l["per_pair"] = lr.per_pair;
        layers.push_back(std::move(l));
    }
    rep["layers"] = std::move(layers);
    return rep;
}

struct StageGuard {
    const std::filesystem::path& out_dir;
    std::string stage;

    void enter(const std::string& name) { stage = name; }

    void fail(const std::string& cause) const {
        write_text_file(out_dir / "INCOMPLETE",
                        "stage = " + stage + "\ncause = " + cause + "\n");
    }
};

} // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const std::filesystem::path out_dir = cfg.output_dir;
    std::filesystem::create_directories(out_dir);

    StageGuard guard{out_dir, "config"};
    try {
        write_text_file(out_dir / "config.effective", effective_config(cfg));

        json summary;
        summary["format"] = "abw-summary-v1";
        summary["seed"] = cfg.seed;

        guard.enter("world");
        const PlantedTruth truth = generate_world(cfg.world);
        save_truth(truth, out_dir / "truth");
        summary["world"] = {{"n_categories", cfg.world.n_categories},
                            {"hidden_dim", cfg.world.hidden_dim},
                            {"n_layers", cfg.world.n_layers},
                            {"contamination_rate", cfg.world.contamination_rate},
                            {"peak_profile_layer", cfg.world.peak_profile_layer()}};

        guard.enter("pools");
        const PoolSet pools = sample_pools(truth, cfg.world, cfg.sampling.n_harmful_per_cat,
                                           cfg.sampling.n_matched_per_cat,
                                           cfg.sampling.n_unmatched);
        save_pools(pools, out_dir / "pools");

        guard.enter("model");
        const ToyModel model = build_model(truth, cfg.world, derive_seed(cfg.seed, "model"));
        save_model(model, out_dir / "model");

        guard.enter("calibration");
        EvalProtocol protocol;
        protocol.n_eval_prompts = cfg.evaluation.n_eval_prompts;
        protocol.n_canaries = cfg.evaluation.n_canaries;
        protocol.kl_prompts = cfg.evaluation.kl_prompts;
        protocol.kl_tokens = cfg.evaluation.kl_tokens;
        protocol.kl_topk = cfg.evaluation.kl_topk;
        protocol.seed = derive_seed(cfg.seed, "eval");
        const EvalContext ctx = make_eval_context(model, pools, protocol,
                                                  cfg.abliteration.layers);
        summary["calibration"] = {{"tau_hi", ctx.calibration.tau_hi},
                                  {"tau_lo", ctx.calibration.tau_lo}};
        summary["protocol"] = {{"n_eval_prompts", protocol.n_eval_prompts},
                               {"n_canaries", protocol.n_canaries},
                               {"kl_prompts", protocol.kl_prompts},
                               {"kl_tokens", protocol.kl_tokens},
                               {"kl_topk", protocol.kl_topk}};

        guard.enter("magnitude");
        {
            const int peak = cfg.world.peak_profile_layer();
            std::vector<Vector> shared_mean(truth.n_layers);
            for (int l = 0; l < truth.n_layers; ++l) {
                shared_mean[l] = pool_mean(pools.unmatched_good, l);
            }
            double matched_sum = 0.0;
            double unmatched_sum = 0.0;
            for (int c = 0; c < pools.n_categories(); ++c) {
                std::vector<Vector> matched_mean(truth.n_layers);
                for (int l = 0; l < truth.n_layers; ++l) {
                    matched_mean[l] = pool_mean(pools.matched_good[c], l);
                }
                matched_sum += mean_diff_norm(diff_pool(pools.harmful[c], matched_mean), peak);
                unmatched_sum += mean_diff_norm(diff_pool(pools.harmful[c], shared_mean), peak);
            }
            const double matched = matched_sum / double(pools.n_categories());
            const double unmatched = unmatched_sum / double(pools.n_categories());
            summary["magnitude"] = {{"peak_layer", peak},
                                    {"matched_mean_diff_norm", matched},
                                    {"unmatched_mean_diff_norm", unmatched},
                                    {"ratio", unmatched / matched}};
        }

        guard.enter("extraction");
        std::map<ExtractionTag, DirectionsTensor> tensors;
        auto want = [&](ExtractionTag tag) {
            return std::find(cfg.extraction.configs.begin(), cfg.extraction.configs.end(),
                             tag) != cfg.extraction.configs.end();
        };
        if (want(ExtractionTag::unmatched_som)) {
            tensors.emplace(ExtractionTag::unmatched_som,
                            extract_unmatched(pools, cfg.som, cfg.extraction.n_dirs));
        }
        if (want(ExtractionTag::matched_som) || want(ExtractionTag::matched_svd)) {
            DirectionsTensor matched = extract_matched(pools, cfg.som);
            if (want(ExtractionTag::matched_svd)) {
                tensors.emplace(ExtractionTag::matched_svd, svd_orthogonalize(matched));
            }
            if (want(ExtractionTag::matched_som)) {
                tensors.emplace(ExtractionTag::matched_som, std::move(matched));
            }
        }
        for (const auto& [tag, tensor] : tensors) {
            const std::string name = "dirs_" + to_string(tag);
            save_directions(tensor, out_dir / (name + ".abt"), out_dir / (name + ".meta"));
        }

        guard.enter("sweep");
        summary["sweeps"] = json::object();
        std::map<ExtractionTag, std::vector<SweepRecord>> sweeps;
        for (const auto& [tag, tensor] : tensors) {
            sweeps.emplace(tag, run_sweep(model, tensor, ctx, cfg.abliteration.layers,
                                          cfg.abliteration.weights, cfg.abliteration.mode,
                                          cfg.abliteration.targets));
            summary["sweeps"][to_string(tag)] = sweep_records_to_json(sweeps.at(tag));
        }

        guard.enter("synergy");
        if (tensors.count(ExtractionTag::unmatched_som) != 0) {
            const auto& tensor = tensors.at(ExtractionTag::unmatched_som);
            std::vector<SweepRecord> solos = sweeps.at(ExtractionTag::unmatched_som);
            const auto pairs = cfg.synergy_pairs();
            // make sure solo baselines exist at the synergy weight
            std::vector<int> missing;
            for (const auto& [a, b] : pairs) {
                for (int layer : {a, b}) {
                    bool found = false;
                    for (const auto& rec : solos) {
                        if (rec.layer_set.size() == 1 && rec.layer_set[0] == layer &&
                            std::abs(rec.weight - cfg.synergy.weight) < 1e-12) {
                            found = true;
                            break;
                        }
                    }
                    if (!found &&
                        std::find(missing.begin(), missing.end(), layer) == missing.end()) {
                        missing.push_back(layer);
                    }
                }
            }
            for (int layer : missing) {
                solos.push_back(evaluate_cell(model, tensor, ctx, {layer}, cfg.synergy.weight,
                                              cfg.abliteration.mode, cfg.abliteration.targets));
            }
            const auto synergy =
                pair_synergy(model, tensor, ctx, pairs, cfg.synergy.weight, solos,
                             cfg.abliteration.mode, cfg.abliteration.targets);
            json records = json::array();
            for (const auto& s : synergy) {
                records.push_back({{"layer_a", s.layer_a},
                                   {"layer_b", s.layer_b},
                                   {"weight", s.weight},
                                   {"r_solo_a", s.r_solo_a},
                                   {"r_solo_b", s.r_solo_b},
                                   {"r_pair", s.r_pair},
                                   {"synergy", s.synergy}});
            }
            summary["synergy"] = {{"weight", cfg.synergy.weight},
                                  {"records", std::move(records)}};
        }

        guard.enter("capture");
        {
            const auto pairs = make_capture_pairs(truth, cfg.world, cfg.capture.n_pairs,
                                                  cfg.capture_spread(),
                                                  derive_seed(cfg.seed, "capture"));
            json capture = json::object();
            for (const auto& [tag, tensor] : tensors) {
                if (tag == ExtractionTag::matched_som) {
                    continue; // the comparison of interest is SOM-unmatched vs SVD-matched
                }
                capture[to_string(tag)] = capture_report_to_json(capture_analysis(pairs, tensor));
            }
            if (!capture.empty()) {
                summary["capture"] = std::move(capture);
            }
        }

        guard.enter("conclusions");
        {
            json conclusions;
            auto all_at_least = [&](ExtractionTag tag, int threshold) {
                if (sweeps.count(tag) == 0) {
                    return true;
                }
                for (const auto& rec : sweeps.at(tag)) {
                    if (rec.refusal_count < threshold) {
                        return false;
                    }
                }
                return true;
            };
            if (sweeps.count(ExtractionTag::unmatched_som) != 0) {
                conclusions["unmatched_functional"] =
                    !all_at_least(ExtractionTag::unmatched_som, 10);
                bool successful = false;
                json r0 = json::object();
                for (const auto& rec : sweeps.at(ExtractionTag::unmatched_som)) {
                    if (rec.refusal_count == 0) {
                        successful = true;
                        const std::string key = std::to_string(rec.layer_set[0]);
                        if (!r0.contains(key) || rec.weight < r0[key].get<double>()) {
                            r0[key] = rec.weight;
                        }
                    }
                }
                conclusions["unmatched_successful"] = successful;
                conclusions["min_weight_r0_by_layer"] = std::move(r0);
            }
            if (sweeps.count(ExtractionTag::matched_som) != 0) {
                conclusions["matched_inert"] = all_at_least(ExtractionTag::matched_som, 9);
            }
            if (sweeps.count(ExtractionTag::matched_svd) != 0) {
                conclusions["matched_svd_inert"] = all_at_least(ExtractionTag::matched_svd, 9);
            }
            summary["conclusions"] = std::move(conclusions);
        }

        guard.enter("reports");
        for (const auto& [tag, tensor] : tensors) {
            (void)tensor;
            const std::string name = to_string(tag);
            write_text_file(out_dir / ("sweep_" + name + ".csv"),
                            render_sweep_csv(summary, name));
            write_text_file(out_dir / ("r_grid_" + name + ".csv"),
                            render_r_grid_csv(summary, name));
            write_text_file(out_dir / ("plot_" + name + ".csv"),
                            render_plot_data_csv(summary, name));
        }
        if (tensors.count(ExtractionTag::unmatched_som) != 0) {
            write_text_file(out_dir / "table1.csv",
                            render_table1_csv(summary, "unmatched_som"));
        }
        if (summary.contains("synergy")) {
            write_text_file(out_dir / "synergy.csv", render_synergy_csv(summary));
        }
        if (summary.contains("capture")) {
            write_text_file(out_dir / "capture.csv", render_capture_csv(summary));
            write_text_file(out_dir / "capture_layers.csv",
                            render_capture_layers_csv(summary));
        }

        write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
        std::filesystem::remove(out_dir / "INCOMPLETE");
        return PipelineResult{out_dir, std::move(summary)};
    } catch (const std::exception& e) {
        guard.fail(e.what());
        throw Error("pipeline stage '" + guard.stage + "' failed: " + e.what());
    }
}

int verify_outputs(const std::filesystem::path& out_dir, std::ostream& log) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, const std::string& detail = "") {
        log << (ok ? "ok   " : "FAIL ") << name;
        if (!ok && !detail.empty()) {
            log << " (" << detail << ")";
        }
        log << "\n";
        if (!ok) {
            ++failures;
        }
    };

    if (std::filesystem::exists(out_dir / "INCOMPLETE")) {
        check("run complete", false, "INCOMPLETE marker present");
    } else {
        check("run complete", true);
    }

    // every tensor file must decode and pass its checksum
    for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir)) {
        if (entry.path().extension() != ".abt") {
            continue;
        }
        try {
            read_tensor(entry.path());
            check("tensor " + entry.path().filename().string(), true);
        } catch (const std::exception& e) {
            check("tensor " + entry.path().filename().string(), false, e.what());
        }
    }

    // orthogonalized direction sets: pairwise orthogonality and ordering
    const auto svd_tensor = out_dir / "dirs_matched_svd.abt";
    if (std::filesystem::exists(svd_tensor)) {
        try {
            const DirectionsTensor dirs =
                load_directions(svd_tensor, out_dir / "dirs_matched_svd.meta");
            bool ortho_ok = true;
            bool order_ok = true;
            for (int l = 0; l < dirs.n_layers; ++l) {
                for (int a = 0; a < dirs.n_dirs; ++a) {
                    const Vector& va = dirs.at(l, a);
                    if (a + 1 < dirs.n_dirs &&
                        dirs.at(l, a + 1).norm() > va.norm() * (1.0 + 1e-5)) {
                        order_ok = false;
                    }
                    if (va.norm() == 0.0) {
                        continue;
                    }
                    for (int b = a + 1; b < dirs.n_dirs; ++b) {
                        const Vector& vb = dirs.at(l, b);
                        if (vb.norm() == 0.0) {
                            continue;
                        }
                        if (std::abs(va.dot(vb)) / (va.norm() * vb.norm()) > 1e-5) {
                            ortho_ok = false;
                        }
                    }
                }
            }
            check("matched_svd pairwise orthogonality", ortho_ok);
            check("matched_svd singular ordering", order_ok);
        } catch (const std::exception& e) {
            check("matched_svd tensor readable", false, e.what());
        }
    }

    const auto summary_path = out_dir / "summary.json";
    if (!std::filesystem::exists(summary_path)) {
        check("summary.json present", false);
        return failures;
    }
    json summary;
    try {
        summary = json::parse(read_text_file(summary_path));
        check("summary.json parses", true);
    } catch (const std::exception& e) {
        check("summary.json parses", false, e.what());
        return failures;
    }

    if (summary.contains("sweeps")) {
        bool sum_ok = true;
        bool kl_ok = true;
        bool eff_ok = true;
        const int n_eval = summary.contains("protocol")
                               ? summary.at("protocol").at("n_eval_prompts").get<int>()
                               : 10;
        for (const auto& [tag, records] : summary.at("sweeps").items()) {
            (void)tag;
            for (const auto& r : records) {
                const int total = r.at("refusals").get<int>() + r.at("evasive").get<int>() +
                                  r.at("comply").get<int>();
                if (total != n_eval) {
                    sum_ok = false;
                }
                const double kl = r.at("kl").get<double>();
                if (!(kl >= 0.0)) {
                    kl_ok = false;
                }
                if (!r.at("efficiency").is_null()) {
                    const double eff = r.at("efficiency").get<double>();
                    const double expect = double(total - r.at("refusals").get<int>()) / kl;
                    if (std::abs(eff - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
                        eff_ok = false;
                    }
                } else if (kl > 0.0 && total - r.at("refusals").get<int>() != 0) {
                    // efficiency must be present whenever it is defined
                    eff_ok = false;
                }
            }
        }
        check("records satisfy R + evasive + comply = n", sum_ok);
        check("kl >= 0 on every record", kl_ok);
        check("efficiency = (n - R) / kl where defined", eff_ok);
    }

    if (summary.contains("capture")) {
        bool range_ok = true;
        for (const auto& [method, rep] : summary.at("capture").items()) {
            (void)method;
            for (const auto& lr : rep.at("layers")) {
                for (const auto& v : lr.at("per_pair")) {
                    const double pct = v.get<double>();
                    if (pct < 0.0 || pct > 100.0) {
                        range_ok = false;
                    }
                }
            }
        }
        check("capture percentages within [0, 100]", range_ok);
    }

    // table files must re-render byte-identically from the summary
    auto compare_table = [&](const std::string& file, const std::string& rendered) {
        const auto path = out_dir / file;
        if (!std::filesystem::exists(path)) {
            return; // table not part of this run
        }
        check("table " + file + " re-derivable from summary",
              read_text_file(path) == rendered);
    };
    if (summary.contains("sweeps")) {
        for (const auto& [tag, records] : summary.at("sweeps").items()) {
            (void)records;
            compare_table("sweep_" + tag + ".csv", render_sweep_csv(summary, tag));
            compare_table("r_grid_" + tag + ".csv", render_r_grid_csv(summary, tag));
            compare_table("plot_" + tag + ".csv", render_plot_data_csv(summary, tag));
        }
        compare_table("table1.csv", render_table1_csv(summary, "unmatched_som"));
    }
    compare_table("synergy.csv", render_synergy_csv(summary));
    compare_table("capture.csv", render_capture_csv(summary));
    compare_table("capture_layers.csv", render_capture_layers_csv(summary));

    return failures;
}

} // namespace abw
