#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dkt/data.hpp"
#include "dkt/model.hpp"
#include "dkt/rng.hpp"

namespace dkt {

struct TrainConfig {
  int batch_size = 20;
  double dropout_rate = 0.5;  // probability of dropping a hidden unit before the output layer
  int iterations = 500;       // one iteration = one minibatch update
  double learning_rate = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int max_sequence_length = 200;  // longer sequences split into consecutive chunks
  double clip_norm = 5.0;         // global gradient-norm clip
  int num_threads = 0;            // 0 = OpenMP default

  void validate() const;  // throws ConfigError
};

// Inverted-dropout scale per step and hidden unit: 0 for dropped units,
// 1/(1-rate) for kept ones. Empty mask = dropout disabled.
using DropoutMask = std::vector<Vec>;

DropoutMask sample_dropout_mask(int steps, int hidden_size, double rate, Rng& rng);

// Forward pass whose output probabilities are computed from the masked
// hidden state; the recurrence itself is untouched.
ForwardTrace forward_with_dropout(const ModelParams& params, const InteractionSequence& seq,
                                  const DropoutMask& mask);

// Mean binary cross-entropy of predicting each step's correctness from the
// previous step's output, probabilities clamped to [1e-7, 1-1e-7].
double next_step_loss(const ForwardTrace& trace, const InteractionSequence& seq);

// Analytic gradients of next_step_loss w.r.t. every parameter tensor.
ModelParams backward_bptt(const ModelParams& params, const InteractionSequence& seq,
                          const DropoutMask& mask, double* loss_out = nullptr);

struct AdamState {
  ModelParams m;  // first moments
  ModelParams v;  // second moments
  std::int64_t step = 0;

  static AdamState init(const ModelConfig& cfg);
};

void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state,
                 const TrainConfig& cfg);

// Mean gradient over a batch, per-sequence gradients reduced in slot-index
// order. The serial version is the reference; the OpenMP version must
// produce bitwise-identical results.
ModelParams batch_gradients_serial(const ModelParams& params,
                                   std::span<const InteractionSequence* const> batch,
                                   std::span<const DropoutMask> masks, double* mean_loss = nullptr);
ModelParams batch_gradients(const ModelParams& params,
                            std::span<const InteractionSequence* const> batch,
                            std::span<const DropoutMask> masks, double* mean_loss = nullptr,
                            int num_threads = 0);

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_log;  // mean batch loss per iteration
};

TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg);

struct EvalMetrics {
  double acc = 0.0;
  double auc = 0.0;
  double loss = 0.0;
  std::int64_t num_predictions = 0;
  bool one_class = false;  // AUC undefined, reported as 0.5
};

// Rank-based AUC with ties counted one half; equals the pairwise count exactly.
double auc_rank(std::span<const double> scores, std::span<const int> labels, bool* one_class);

EvalMetrics metrics_from_predictions(std::span<const double> scores, std::span<const int> labels);

// Pooled next-step metrics over all sequences, dropout disabled.
EvalMetrics evaluate(const ModelParams& params, const Dataset& dataset, int num_threads = 0);

}  // namespace dkt
