#pragma once

#include <filesystem>

#include "abw/extraction.hpp"
#include "abw/synth_world.hpp"
#include "abw/tensor_io.hpp"
#include "abw/toy_model.hpp"

// File layouts for the workbench's domain objects: binary tensors plus
// plain-text sidecars for non-numeric metadata.
namespace abw {

void save_directions(const DirectionsTensor& dirs, const std::filesystem::path& tensor_path,
                     const std::filesystem::path& meta_path);
DirectionsTensor load_directions(const std::filesystem::path& tensor_path,
                                 const std::filesystem::path& meta_path);

// Model directory: attn_out.abt, mlp_down.abt, readout.abt, unembed.abt,
// model.meta
void save_model(const ToyModel& model, const std::filesystem::path& dir);
ToyModel load_model(const std::filesystem::path& dir);

// Pool directory: harmful.abt / matched.abt / unmatched.abt plus .meta rows
void save_pools(const PoolSet& pools, const std::filesystem::path& dir);
PoolSet load_pools(const std::filesystem::path& dir);

void save_truth(const PlantedTruth& truth, const std::filesystem::path& dir);
PlantedTruth load_truth(const std::filesystem::path& dir);

} // namespace abw
