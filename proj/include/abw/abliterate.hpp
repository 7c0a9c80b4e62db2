#pragma once

#include <string>
#include <vector>

#include "abw/extraction.hpp"
#include "abw/toy_model.hpp"

// Applies extracted directions to a model's weight matrices, producing an
// edited copy. Directions at one layer are applied sequentially in direction-
// index order; for non-orthogonal sets this is order-dependent by design.
namespace abw {

enum class EditTargets { attn_out, mlp_down, both };

std::string to_string(EditTargets t);
std::string to_string(RemoveMode m);
RemoveMode remove_mode_from_string(const std::string& s);
EditTargets edit_targets_from_string(const std::string& s);

struct PlanEntry {
    int layer = 0;
    std::vector<int> direction_indices; // empty selects all directions
    double weight = 0.0;
};

struct AbliterationPlan {
    std::vector<PlanEntry> entries;
    RemoveMode mode = RemoveMode::scaled;
    EditTargets targets = EditTargets::both;
};

ToyModel apply_plan(const ToyModel& model, const DirectionsTensor& dirs,
                    const AbliterationPlan& plan);

AbliterationPlan uniform_plan(const std::vector<int>& layer_set, double weight,
                              RemoveMode mode = RemoveMode::scaled,
                              EditTargets targets = EditTargets::both);

} // namespace abw
