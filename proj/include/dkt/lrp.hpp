#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dkt/model.hpp"

namespace dkt {

struct LrpConfig {
  // Stabilizer added (signed) to every redistribution denominator.
  double epsilon = 0.001;
  // 1 lets biases and the stabilizer absorb an explicit share, 0 conserves
  // that share for the lower-level neurons.
  int delta = 0;

  void validate() const;  // throws ConfigError
};

// sign with sign(0) := +1, as used in all stabilized denominators.
inline double lrp_sign(double x) { return x < 0.0 ? -1.0 : 1.0; }

// Relevance contributions of each input to one upper-layer neuron j through
// a weighted linear connection:
//   R_{i<-j} = (w_ij a_i + delta*(sign(z_j) eps + b_j)/N) / (z_j + sign(z_j) eps) * R_j
// where z_j is the caller-supplied pre-activation. layer_size is N, the
// total number of neurons in the lower layer; pass -1 when the activations
// span is the whole layer.
Vec lrp_linear(std::span<const double> activations, std::span<const double> weights_row,
               double bias, double preact, double relevance, const LrpConfig& cfg,
               int layer_size = -1);

// Accumulating form: out[i] += R_{i<-j}, the sum over upper neurons of
// Eq.-style per-edge shares.
void lrp_linear_accumulate(std::span<const double> activations,
                           std::span<const double> weights_row, double bias, double preact,
                           double relevance, const LrpConfig& cfg, int layer_size,
                           std::span<double> out);

// Multiplicative (gate) connection: the source keeps the full relevance, the
// gate gets none.
inline std::pair<double, double> lrp_gate(double relevance_upper) {
  return {relevance_upper, 0.0};
}

struct CellSplit {
  Vec forget_path;  // share of f_t (.) C_{t-1}
  Vec input_path;   // share of i_t (.) C~_t
};

// Componentwise split of cell relevance across the two addends of
// C_t = f_t (.) C_{t-1} + i_t (.) C~_t, each attenuated by the stabilized
// denominator C_t + sign(C_t) eps.
CellSplit lrp_cell_split(const Vec& forget_gate, const Vec& cell_prev, const Vec& input_gate,
                         const Vec& candidate, const Vec& cell, const Vec& relevance_cell,
                         const LrpConfig& cfg);

// Relevance of every timestep's input, hidden and cell state for one scalar
// prediction. Arrays are 0-based over steps 0..target_timestep.
struct RelevanceTrace {
  int target_timestep = 0;  // step index of the explained prediction
  int target_concept = 0;
  double initial_relevance = 0.0;
  std::vector<Vec> r_x;  // per step, 2M
  std::vector<Vec> r_h;  // per step, H
  std::vector<Vec> r_c;  // per step, H
  std::vector<double> question_relevance;  // sum of r_x per step

  double input_total() const;
  // Relevance absorbed by biases and stabilizers instead of inputs;
  // diagnostic only, never redistributed.
  double residual() const { return initial_relevance - input_total(); }
};

// Full backward recursion from the output neuron of target_concept at
// target_timestep down to the first input. The hidden-state share re-enters
// the cell of the previous timestep where it joins the forget-path share.
RelevanceTrace lrp_sequence(const ModelParams& params, const ForwardTrace& trace,
                            int target_timestep, int target_concept, const LrpConfig& cfg);

// Same recursion started from an explicit initial relevance instead of the
// model output; the recursion is linear in this value.
RelevanceTrace lrp_sequence_with_initial(const ModelParams& params, const ForwardTrace& trace,
                                         int target_timestep, int target_concept,
                                         double initial_relevance, const LrpConfig& cfg);

struct QuestionRelevance {
  int timestep = 0;  // 0-based step
  std::string question_id;
  double relevance = 0.0;
};

std::vector<QuestionRelevance> question_relevances(const RelevanceTrace& rt,
                                                   const InteractionSequence& seq);

}  // namespace dkt
