#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "abw/abliterate.hpp"
#include "abw/extraction.hpp"
#include "abw/synth_world.hpp"
#include "abw/toy_model.hpp"

// Evaluation protocol: three-tier refusal classification with calibrated
// thresholds, per-(layer, weight) sweeps with refusal counting, canary
// checks, bigram-entropy coherence, sparse teacher-forced KL, efficiency,
// pair synergy, and capture analysis.
namespace abw {

enum class Classification { REFUSE, EVASIVE, COMPLY };

struct ClassifierCalibration {
    double tau_hi = 0.0; // REFUSE at or above
    double tau_lo = 0.0; // COMPLY at or below
};

struct EvalProtocol {
    int n_eval_prompts = 10;
    int n_canaries = 20;
    int kl_prompts = 100;
    int kl_tokens = 50;
    int kl_topk = 100;
    int gen_tokens = 50;
    bool with_kl = true;
    bool with_generations = true;
    std::uint64_t seed = 0;
};

struct SweepRecord {
    std::vector<int> layer_set;
    double weight = 0.0;
    int refusal_count = 0;
    int evasive_count = 0;
    int comply_count = 0;
    int canary_false_refusals = 0;
    double mean_bigram_entropy = 0.0;
    int degenerate_generations = 0; // bigram entropy below kDegenerationBits
    double kl = 0.0;                // nats
    std::optional<double> efficiency;
};

struct CaptureLayerReport {
    double mean_capture = 0.0; // percent
    double max_capture = 0.0;
    double mean_max_cosine = 0.0; // secondary metric: best single-direction |cos|
    std::vector<double> per_pair;
};

struct CaptureReport {
    std::vector<CaptureLayerReport> layers;
    double mean_over_layers = 0.0; // mean of per-layer means
    double pooled_mean = 0.0;      // mean over all (layer, pair) values
    int skipped_pairs = 0;
};

// Teacher-forced evaluation stream: the base model's greedy continuations of
// the reference prompts, with the per-step context activations and the base
// top-k logprobs frozen for reuse against any edited model.
struct TeacherStream {
    int n_prompts = 0;
    int n_tokens = 0;
    int topk = 0;
    Matrix contexts;                             // hidden x (n_prompts * n_tokens)
    std::vector<std::vector<int>> topk_tokens;   // per column
    std::vector<std::vector<double>> topk_logp;  // per column, base log-probs
    std::vector<double> remainder_mass;          // per column, base tail probability
    std::vector<Matrix> layer_entry_cache;       // optional per-layer residual snapshots
    std::vector<int> cached_layers;

    const Matrix* entry_snapshot(int layer) const;
};

struct EvalContext {
    ClassifierCalibration calibration;
    std::vector<Vector> eval_inputs; // pooled stratified harmful prompts
    std::vector<int> eval_categories;
    std::vector<Vector> canary_inputs;
    TeacherStream teacher;
    EvalProtocol protocol;
};

inline constexpr double kDegenerationBits = 2.0;

ClassifierCalibration calibrate_classifier(const ToyModel& model, const PoolSet& pools,
                                           const EvalProtocol& protocol);

// Calibration plus the frozen prompt sets and teacher stream for sweeps.
// cache_layers requests residual snapshots at those layer entries so edits
// at or above them can skip the unedited prefix when computing KL.
EvalContext make_eval_context(const ToyModel& model, const PoolSet& pools,
                              const EvalProtocol& protocol,
                              const std::vector<int>& cache_layers = {});

Classification classify(double score, const ClassifierCalibration& cal);

double bigram_entropy(const std::vector<int>& tokens);

// Mean sparse KL(base || edited) in nats over all (prompt, step) pairs of
// the teacher stream: top-k support plus one remainder bucket.
double kl_sparse(const ToyModel& base, const ToyModel& edited, const TeacherStream& stream,
                 int k, int start_layer = 0);

// Convenience form matching the protocol description; builds the stream.
double kl_sparse(const ToyModel& base, const ToyModel& edited,
                 const std::vector<const PromptRecord*>& ref_prompts, int n_tokens, int k);

TeacherStream make_teacher_stream(const ToyModel& base,
                                  const std::vector<const PromptRecord*>& ref_prompts,
                                  int n_tokens, int k, const std::vector<int>& cache_layers = {});

std::optional<double> efficiency(int n_eval, int refusal_count, double kl);

// One evaluation cell: abliterate at layer_set with the weight, score the
// stratified prompts and canaries, measure coherence and KL.
SweepRecord evaluate_cell(const ToyModel& base, const DirectionsTensor& dirs,
                          const EvalContext& ctx, const std::vector<int>& layer_set,
                          double weight, RemoveMode mode, EditTargets targets);

std::vector<SweepRecord> run_sweep(const ToyModel& base, const DirectionsTensor& dirs,
                                   const EvalContext& ctx, const std::vector<int>& layers,
                                   const std::vector<double>& weights, RemoveMode mode,
                                   EditTargets targets);

struct SynergyRecord {
    int layer_a = 0;
    int layer_b = 0;
    double weight = 0.0;
    int r_solo_a = 0;
    int r_solo_b = 0;
    int r_pair = 0;
    int synergy = 0; // min(solo) - pair
};

std::vector<SynergyRecord> pair_synergy(const ToyModel& base, const DirectionsTensor& dirs,
                                        const EvalContext& ctx,
                                        const std::vector<std::pair<int, int>>& layer_pairs,
                                        double weight,
                                        const std::vector<SweepRecord>& solo_records,
                                        RemoveMode mode, EditTargets targets);

CaptureReport capture_analysis(const std::vector<CapturePair>& pairs,
                               const DirectionsTensor& dirs);

} // namespace abw
