#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dkt/linalg.hpp"

namespace dkt {

struct ModelConfig {
  int num_concepts = 0;   // M
  int hidden_size = 0;    // H
  int input_size = 0;     // always 2*M
  std::uint64_t seed = 0; // weight initialization seed

  static ModelConfig make(int num_concepts, int hidden_size, std::uint64_t seed = 0);
  void validate() const;  // throws ConfigError
};

// All LSTM and output-layer weights. Also reused as the tensor bundle for
// gradients and Adam moments, which share these shapes exactly.
struct ModelParams {
  Mat w_fh, w_ih, w_ch, w_oh;  // H x H
  Mat w_fx, w_ix, w_cx, w_ox;  // H x 2M
  Vec b_f, b_i, b_c, b_o;      // H
  Mat w_yh;                    // M x H
  Vec b_y;                     // M

  static ModelParams zeros(const ModelConfig& cfg);
  // Weights uniform in [-1/sqrt(H), +1/sqrt(H)] from cfg.seed, biases zero.
  static ModelParams init(const ModelConfig& cfg);

  bool dims_match(const ModelConfig& cfg) const;
  bool all_finite() const;

  void fill(double v);
  void scale(double s);
  void add_scaled(const ModelParams& other, double s);  // this += s * other
  double squared_norm() const;
};

// Flat views over the 14 tensors, in a fixed order shared by the optimizer,
// gradient clipping and serialization.
std::array<std::span<double>, 14> tensor_views(ModelParams& p);
std::array<std::span<const double>, 14> tensor_views(const ModelParams& p);

struct Interaction {
  std::string question_id;
  int concept_id = 0;
  bool correct = false;
};

struct InteractionSequence {
  std::string learner_id;
  std::vector<Interaction> steps;  // chronological, nonempty
};

// Cached activations of one forward pass, steps indexed 0..T-1.
// hidden[t]/cell[t] hold the state *entering* step t, so
// hidden[0] = cell[0] = 0 and hidden[T]/cell[T] are the final state.
struct ForwardTrace {
  int length = 0;    // T
  int hidden_size = 0;
  int num_concepts = 0;
  std::vector<int> x_index;                        // active one-hot index per step, size T
  std::vector<Vec> forget, input, candidate, out_gate;  // size T
  std::vector<Vec> hidden, cell;                   // size T+1
  std::vector<Vec> prob;                           // y_t per step, size T

  Vec input_dense(int t) const;  // materialized 2M one-hot for step t
};

struct LstmStepResult {
  Vec forget, input, candidate, cell, out_gate, hidden;
};

// One-hot encoding over (concept, correctness): index = concept_id when
// correct, num_concepts + concept_id when incorrect.
int encode_input_index(const Interaction& it, int num_concepts);  // throws ModelError
Vec encode_input(const Interaction& it, int num_concepts);

LstmStepResult lstm_step(const ModelParams& p, const Vec& x, const Vec& h_prev, const Vec& c_prev);

Vec output_step(const ModelParams& p, const Vec& h);

ForwardTrace forward_sequence(const ModelParams& p, const InteractionSequence& seq);

double predict_next(const ModelParams& p, const InteractionSequence& seq, int target_concept);

}  // namespace dkt
