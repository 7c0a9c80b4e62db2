#include "abw/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "abw/seeding.hpp"
#include "abw/text_format.hpp"

namespace abw {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

long long parse_int(const std::string& v, int line) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument("trailing");
        }
        return x;
    } catch (const std::exception&) {
        throw ParseError("expected an integer, got '" + v + "'", line);
    }
}

double parse_double(const std::string& v, int line) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument("trailing");
        }
        return x;
    } catch (const std::exception&) {
        throw ParseError("expected a number, got '" + v + "'", line);
    }
}

} // namespace

std::vector<std::pair<int, int>> RunConfig::synergy_pairs() const {
    if (!synergy.pairs.empty()) {
        return synergy.pairs;
    }
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i + 1 < abliteration.layers.size(); ++i) {
        pairs.emplace_back(abliteration.layers[i], abliteration.layers[i + 1]);
    }
    return pairs;
}

double RunConfig::capture_spread() const {
    return capture.sub_topic_spread >= 0.0 ? capture.sub_topic_spread
                                           : 0.15 * world.topic_scale;
}

void RunConfig::validate() const {
    world.validate();
    som.validate();
    if (sampling.n_harmful_per_cat < 1 || sampling.n_matched_per_cat < 1 ||
        sampling.n_unmatched < 1) {
        throw InvalidConfigError("sampling counts must be positive");
    }
    if (extraction.n_dirs < 1) {
        throw InvalidConfigError("extraction.n_dirs must be positive");
    }
    if (evaluation.n_eval_prompts < 1 || evaluation.n_canaries < 1 ||
        evaluation.kl_prompts < 1 || evaluation.kl_tokens < 1 || evaluation.kl_topk < 1) {
        throw InvalidConfigError("evaluation counts must be positive");
    }
    if (abliteration.layers.empty() || abliteration.weights.empty()) {
        throw InvalidConfigError("abliteration layers and weights must be nonempty");
    }
    for (int l : abliteration.layers) {
        if (l < 0 || l >= world.n_layers) {
            throw InvalidConfigError("abliteration layer out of range: " + std::to_string(l));
        }
    }
    if (capture.n_pairs < 1) {
        throw InvalidConfigError("capture.n_pairs must be positive");
    }
    if (output_dir.empty()) {
        throw InvalidConfigError("output directory must not be empty");
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::set<std::string> seen;
    int line_no = 0;

    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ParseError("malformed section header", line_no);
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("expected key = value", line_no);
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ParseError("missing key", line_no);
        }
        const std::string full = section + "." + key;
        if (!seen.insert(full).second) {
            throw ParseError("duplicate key '" + full + "'", line_no);
        }

        auto as_int = [&](int lo) {
            const long long x = parse_int(value, line_no);
            if (x < lo) {
                throw ParseError("value for '" + full + "' must be >= " + std::to_string(lo),
                                 line_no);
            }
            return int(x);
        };
        auto as_double = [&]() { return parse_double(value, line_no); };

        if (section.empty()) {
            if (key == "seed") {
                cfg.seed = std::uint64_t(parse_int(value, line_no));
            } else if (key == "output_dir") {
                cfg.output_dir = value;
            } else {
                throw ParseError("unknown key '" + key + "'", line_no);
            }
        } else if (section == "world") {
            if (key == "n_categories") {
                cfg.world.n_categories = as_int(1);
            } else if (key == "hidden_dim") {
                cfg.world.hidden_dim = as_int(8);
            } else if (key == "n_layers") {
                cfg.world.n_layers = as_int(1);
            } else if (key == "n_benign_topics") {
                cfg.world.n_benign_topics = as_int(1);
            } else if (key == "topic_scale") {
                cfg.world.topic_scale = as_double();
            } else if (key == "refusal_norm") {
                cfg.world.refusal_norm = as_double();
            } else if (key == "tilt_norm") {
                cfg.world.tilt_norm = as_double();
            } else if (key == "noise_sigma") {
                cfg.world.noise_sigma = as_double();
            } else if (key == "contamination_rate") {
                cfg.world.contamination_rate = as_double();
            } else if (key == "refusal_layer_profile") {
                cfg.world.refusal_layer_profile.clear();
                for (const auto& item : split_list(value)) {
                    cfg.world.refusal_layer_profile.push_back(parse_double(item, line_no));
                }
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "sampling") {
            if (key == "n_harmful_per_cat") {
                cfg.sampling.n_harmful_per_cat = as_int(1);
            } else if (key == "n_matched_per_cat") {
                cfg.sampling.n_matched_per_cat = as_int(1);
            } else if (key == "n_unmatched") {
                cfg.sampling.n_unmatched = as_int(1);
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "som") {
            if (key == "grid_rows") {
                cfg.som.grid_rows = as_int(1);
            } else if (key == "grid_cols") {
                cfg.som.grid_cols = as_int(1);
            } else if (key == "iterations") {
                cfg.som.iterations = as_int(1);
            } else if (key == "initial_learning_rate") {
                cfg.som.initial_learning_rate = as_double();
            } else if (key == "final_learning_rate") {
                cfg.som.final_learning_rate = as_double();
            } else if (key == "initial_radius") {
                cfg.som.initial_radius = as_double();
            } else if (key == "final_radius") {
                cfg.som.final_radius = as_double();
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "extraction") {
            if (key == "configs") {
                cfg.extraction.configs.clear();
                for (const auto& item : split_list(value)) {
                    try {
                        cfg.extraction.configs.push_back(extraction_tag_from_string(item));
                    } catch (const InvalidConfigError& e) {
                        throw ParseError(e.what(), line_no);
                    }
                }
                if (cfg.extraction.configs.empty()) {
                    throw ParseError("extraction.configs must not be empty", line_no);
                }
            } else if (key == "n_dirs") {
                cfg.extraction.n_dirs = as_int(1);
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "abliteration") {
            if (key == "mode") {
                try {
                    cfg.abliteration.mode = remove_mode_from_string(value);
                } catch (const InvalidConfigError& e) {
                    throw ParseError(e.what(), line_no);
                }
            } else if (key == "targets") {
                try {
                    cfg.abliteration.targets = edit_targets_from_string(value);
                } catch (const InvalidConfigError& e) {
                    throw ParseError(e.what(), line_no);
                }
            } else if (key == "layers") {
                cfg.abliteration.layers.clear();
                for (const auto& item : split_list(value)) {
                    cfg.abliteration.layers.push_back(int(parse_int(item, line_no)));
                }
            } else if (key == "weights") {
                cfg.abliteration.weights.clear();
                for (const auto& item : split_list(value)) {
                    cfg.abliteration.weights.push_back(parse_double(item, line_no));
                }
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "evaluation") {
            if (key == "n_eval_prompts") {
                cfg.evaluation.n_eval_prompts = as_int(1);
            } else if (key == "n_canaries") {
                cfg.evaluation.n_canaries = as_int(1);
            } else if (key == "kl_prompts") {
                cfg.evaluation.kl_prompts = as_int(1);
            } else if (key == "kl_tokens") {
                cfg.evaluation.kl_tokens = as_int(1);
            } else if (key == "kl_topk") {
                cfg.evaluation.kl_topk = as_int(1);
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "synergy") {
            if (key == "weight") {
                cfg.synergy.weight = as_double();
            } else if (key == "pairs") {
                cfg.synergy.pairs.clear();
                for (const auto& item : split_list(value)) {
                    const auto colon = item.find(':');
                    if (colon == std::string::npos) {
                        throw ParseError("synergy pair must be 'a:b'", line_no);
                    }
                    cfg.synergy.pairs.emplace_back(
                        int(parse_int(trim(item.substr(0, colon)), line_no)),
                        int(parse_int(trim(item.substr(colon + 1)), line_no)));
                }
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "capture") {
            if (key == "n_pairs") {
                cfg.capture.n_pairs = as_int(1);
            } else if (key == "sub_topic_spread") {
                cfg.capture.sub_topic_spread = as_double();
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else if (section == "output") {
            if (key == "directory") {
                cfg.output_dir = value;
            } else {
                throw ParseError("unknown key '" + full + "'", line_no);
            }
        } else {
            throw ParseError("unknown section '" + section + "'", line_no);
        }
    }

    cfg.world.seed = cfg.seed;
    cfg.som.seed = derive_seed(cfg.seed, "som");
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// the output directory is deliberately not echoed: artifacts must compare
// byte-identical across runs regardless of where they were written
std::string effective_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "seed = " << cfg.seed << "\n";
    out << "\n[world]\n";
    out << "n_categories = " << cfg.world.n_categories << "\n";
    out << "hidden_dim = " << cfg.world.hidden_dim << "\n";
    out << "n_layers = " << cfg.world.n_layers << "\n";
    out << "n_benign_topics = " << cfg.world.n_benign_topics << "\n";
    out << "topic_scale = " << format_double(cfg.world.topic_scale) << "\n";
    out << "refusal_norm = " << format_double(cfg.world.refusal_norm) << "\n";
    out << "tilt_norm = " << format_double(cfg.world.tilt_norm) << "\n";
    out << "noise_sigma = " << format_double(cfg.world.noise_sigma) << "\n";
    out << "contamination_rate = " << format_double(cfg.world.contamination_rate) << "\n";
    out << "refusal_layer_profile =";
    const auto profile = cfg.world.effective_profile();
    for (std::size_t i = 0; i < profile.size(); ++i) {
        out << (i == 0 ? " " : ", ") << format_double(profile[i]);
    }
    out << "\n";
    out << "\n[sampling]\n";
    out << "n_harmful_per_cat = " << cfg.sampling.n_harmful_per_cat << "\n";
    out << "n_matched_per_cat = " << cfg.sampling.n_matched_per_cat << "\n";
    out << "n_unmatched = " << cfg.sampling.n_unmatched << "\n";
    out << "\n[som]\n";
    out << "grid_rows = " << cfg.som.grid_rows << "\n";
    out << "grid_cols = " << cfg.som.grid_cols << "\n";
    out << "iterations = " << cfg.som.iterations << "\n";
    out << "initial_learning_rate = " << format_double(cfg.som.initial_learning_rate) << "\n";
    out << "final_learning_rate = " << format_double(cfg.som.final_learning_rate) << "\n";
    out << "initial_radius = " << format_double(cfg.som.initial_radius) << "\n";
    out << "final_radius = " << format_double(cfg.som.final_radius) << "\n";
    out << "\n[extraction]\n";
    out << "configs =";
    for (std::size_t i = 0; i < cfg.extraction.configs.size(); ++i) {
        out << (i == 0 ? " " : ", ") << to_string(cfg.extraction.configs[i]);
    }
    out << "\n";
    out << "n_dirs = " << cfg.extraction.n_dirs << "\n";
    out << "\n[abliteration]\n";
    out << "mode = " << to_string(cfg.abliteration.mode) << "\n";
    out << "targets = " << to_string(cfg.abliteration.targets) << "\n";
    out << "layers =";
    for (std::size_t i = 0; i < cfg.abliteration.layers.size(); ++i) {
        out << (i == 0 ? " " : ", ") << cfg.abliteration.layers[i];
    }
    out << "\n";
    out << "weights =";
    for (std::size_t i = 0; i < cfg.abliteration.weights.size(); ++i) {
        out << (i == 0 ? " " : ", ") << format_double(cfg.abliteration.weights[i]);
    }
    out << "\n";
    out << "\n[evaluation]\n";
    out << "n_eval_prompts = " << cfg.evaluation.n_eval_prompts << "\n";
    out << "n_canaries = " << cfg.evaluation.n_canaries << "\n";
    out << "kl_prompts = " << cfg.evaluation.kl_prompts << "\n";
    out << "kl_tokens = " << cfg.evaluation.kl_tokens << "\n";
    out << "kl_topk = " << cfg.evaluation.kl_topk << "\n";
    out << "\n[synergy]\n";
    out << "weight = " << format_double(cfg.synergy.weight) << "\n";
    out << "pairs =";
    const auto pairs = cfg.synergy_pairs();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out << (i == 0 ? " " : ", ") << pairs[i].first << ":" << pairs[i].second;
    }
    out << "\n";
    out << "\n[capture]\n";
    out << "n_pairs = " << cfg.capture.n_pairs << "\n";
    out << "sub_topic_spread = " << format_double(cfg.capture_spread()) << "\n";
    return out.str();
}

} // namespace abw
