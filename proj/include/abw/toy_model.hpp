#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "abw/linalg.hpp"
#include "abw/synth_world.hpp"

// A small residual-stream model whose refusal behavior is causally mediated
// by the world's planted refusal feature. Per-layer writes go through the
// attention-output and MLP-down matrices, so weight-matrix edits at the
// right layers can sever the pathway:
//
//   router layers    read the refusal feature and write a routing memo;
//                    the memo direction has one component inside the
//                    harmful-topic deviation span (the editable handle)
//                    and one private component.
//   injection layers read the private memo component and write the refusal
//                    feature back into the stream, where the readout sees it.
namespace abw {

enum class Nonlinearity { tanh_elem, identity };

struct ToyModel {
    int n_layers = 0;
    int hidden_dim = 0;
    int vocab_size = 256;
    std::vector<Matrix> attn_out; // one per layer, hidden x hidden
    std::vector<Matrix> mlp_down; // one per layer, hidden x hidden
    Vector refusal_readout;       // unit
    Matrix unembed;               // vocab x hidden
    double readout_bias = 0.0;
    Nonlinearity nonlinearity = Nonlinearity::tanh_elem;

    std::vector<int> router_layers;    // where evidence is routed into the memo
    std::vector<int> injection_layers; // where the refusal feature is written back
};

struct ForwardTrace {
    std::vector<Vector> residuals; // post-layer residual stream
    double refusal_score = 0.0;
    Vector logits;
};

ToyModel build_model(const PlantedTruth& truth, const WorldSpec& spec, std::uint64_t model_seed,
                     Nonlinearity nonlinearity = Nonlinearity::tanh_elem);

ForwardTrace forward(const ToyModel& model, const Vector& input_activation);

// Final residuals for a batch of inputs (columns), same dynamics as forward.
Matrix forward_final_batch(const ToyModel& model, const Matrix& inputs);

double refusal_score(const ToyModel& model, const Vector& input_activation);

// Logits from a final residual (RMS-normalized before the unembedding).
Vector logits_from_residual(const ToyModel& model, const Vector& final_residual);

std::vector<int> generate(const ToyModel& model, const Vector& input_activation, int n_tokens,
                          std::uint64_t gen_seed);

// The k highest log-softmax entries, descending; ties broken by token id.
std::vector<std::pair<int, double>> topk_logprobs(const ToyModel& model,
                                                  const Vector& input_activation, int k);

Vector log_softmax(const Vector& logits);

// Residual feedback per sampled token during generation. Inhibitory: an
// emitted token suppresses its own re-emission; a positive sign locks
// sampling into a constant sequence.
inline constexpr double kGenerationFeedback = -0.1;

} // namespace abw
