#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "json.hpp"

#include "abw/config.hpp"
#include "abw/eval.hpp"

// Experiment orchestration: synth -> model -> calibrate -> extract ->
// sweep -> synergy -> capture, with every artifact written under one
// output directory. Outputs contain no timestamps; a rerun with the same
// configuration and seed reproduces every file byte for byte.
namespace abw {

using json = nlohmann::json;

struct PipelineResult {
    std::filesystem::path out_dir;
    json summary;
};

PipelineResult run_pipeline(const RunConfig& cfg);

// Table renderers are pure functions of the summary document; `verify`
// re-renders them and compares bytes, so table files can never drift from
// the summary.
std::string render_sweep_csv(const json& summary, const std::string& tag);
std::string render_r_grid_csv(const json& summary, const std::string& tag);
std::string render_table1_csv(const json& summary, const std::string& tag);
std::string render_plot_data_csv(const json& summary, const std::string& tag);
std::string render_synergy_csv(const json& summary);
std::string render_capture_csv(const json& summary);
std::string render_capture_layers_csv(const json& summary);

json sweep_records_to_json(const std::vector<SweepRecord>& records);

// Long-format plot data (layer, weight, metric, value) for external tooling.
void emit_plot_data(const std::vector<SweepRecord>& records, const std::filesystem::path& path);

// Re-checks invariants on an existing output directory. Prints one line per
// check; returns the number of failed checks.
int verify_outputs(const std::filesystem::path& out_dir, std::ostream& log);

} // namespace abw
