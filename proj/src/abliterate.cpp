#include "abw/abliterate.hpp"

#include <cmath>
#include <set>

namespace abw {

std::string to_string(EditTargets t) {
    switch (t) {
    case EditTargets::attn_out:
        return "attn_out";
    case EditTargets::mlp_down:
        return "mlp_down";
    case EditTargets::both:
        return "both";
    }
    return "unknown";
}

std::string to_string(RemoveMode m) {
    return m == RemoveMode::project ? "project" : "scaled";
}

RemoveMode remove_mode_from_string(const std::string& s) {
    if (s == "project") {
        return RemoveMode::project;
    }
    if (s == "scaled") {
        return RemoveMode::scaled;
    }
    throw InvalidConfigError("unknown removal mode: " + s);
}

EditTargets edit_targets_from_string(const std::string& s) {
    if (s == "attn_out" || s == "attn") {
        return EditTargets::attn_out;
    }
    if (s == "mlp_down" || s == "mlp") {
        return EditTargets::mlp_down;
    }
    if (s == "both") {
        return EditTargets::both;
    }
    throw InvalidConfigError("unknown edit targets: " + s);
}

ToyModel apply_plan(const ToyModel& model, const DirectionsTensor& dirs,
                    const AbliterationPlan& plan) {
    if (dirs.hidden_dim != model.hidden_dim || dirs.n_layers != model.n_layers) {
        throw InvalidInputError("apply_plan: directions tensor does not match model shape");
    }
    std::set<std::pair<int, int>> seen;
    for (const auto& entry : plan.entries) {
        if (entry.layer < 0 || entry.layer >= model.n_layers) {
            throw InvalidInputError("apply_plan: layer out of range");
        }
        if (!(entry.weight >= 0.0) || !std::isfinite(entry.weight)) {
            throw InvalidInputError("apply_plan: weight must be finite and >= 0");
        }
        const std::vector<int>* idx = &entry.direction_indices;
        std::vector<int> all;
        if (idx->empty()) {
            all.resize(dirs.n_dirs);
            for (int d = 0; d < dirs.n_dirs; ++d) {
                all[d] = d;
            }
            idx = &all;
        }
        for (int d : *idx) {
            if (d < 0 || d >= dirs.n_dirs) {
                throw InvalidInputError("apply_plan: direction index out of range");
            }
            if (!seen.insert({entry.layer, d}).second) {
                throw InvalidInputError("apply_plan: duplicate (layer, direction) pair");
            }
        }
    }

    ToyModel edited = model;
    for (const auto& entry : plan.entries) {
        if (entry.weight == 0.0) {
            continue;
        }
        std::vector<int> idx = entry.direction_indices;
        if (idx.empty()) {
            idx.resize(dirs.n_dirs);
            for (int d = 0; d < dirs.n_dirs; ++d) {
                idx[d] = d;
            }
        }
        for (int d : idx) {
            const Vector& dir = dirs.at(entry.layer, d);
            if (dir.norm() == 0.0 && plan.mode == RemoveMode::project) {
                continue; // flagged zero directions carry no projection
            }
            if (plan.targets == EditTargets::attn_out || plan.targets == EditTargets::both) {
                edited.attn_out[entry.layer] =
                    remove_component(edited.attn_out[entry.layer], dir, entry.weight, plan.mode);
            }
            if (plan.targets == EditTargets::mlp_down || plan.targets == EditTargets::both) {
                edited.mlp_down[entry.layer] =
                    remove_component(edited.mlp_down[entry.layer], dir, entry.weight, plan.mode);
            }
        }
    }
    return edited;
}

AbliterationPlan uniform_plan(const std::vector<int>& layer_set, double weight, RemoveMode mode,
                              EditTargets targets) {
    AbliterationPlan plan;
    plan.mode = mode;
    plan.targets = targets;
    plan.entries.reserve(layer_set.size());
    for (int layer : layer_set) {
        plan.entries.push_back(PlanEntry{layer, {}, weight});
    }
    return plan;
}

} // namespace abw
