#include "dkt/lrp.hpp"

#include <cassert>

#include "dkt/error.hpp"

namespace dkt {

void LrpConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (delta != 0 && delta != 1) throw ConfigError("delta must be 0 or 1");
}

void lrp_linear_accumulate(std::span<const double> activations,
                           std::span<const double> weights_row, double bias, double preact,
                           double relevance, const LrpConfig& cfg, int layer_size,
                           std::span<double> out) {
  assert(activations.size() == weights_row.size() && activations.size() == out.size());
  const double n = static_cast<double>(layer_size < 0 ? activations.size() : layer_size);
  const double stabilized = preact + lrp_sign(preact) * cfg.epsilon;
  const double scale = relevance / stabilized;
  const double bias_share =
      cfg.delta == 0 ? 0.0 : (lrp_sign(preact) * cfg.epsilon + bias) / n;
  for (std::size_t i = 0; i < activations.size(); ++i)
    out[i] += (weights_row[i] * activations[i] + bias_share) * scale;
}

Vec lrp_linear(std::span<const double> activations, std::span<const double> weights_row,
               double bias, double preact, double relevance, const LrpConfig& cfg,
               int layer_size) {
  Vec out(activations.size(), 0.0);
  lrp_linear_accumulate(activations, weights_row, bias, preact, relevance, cfg, layer_size, out);
  return out;
}

CellSplit lrp_cell_split(const Vec& forget_gate, const Vec& cell_prev, const Vec& input_gate,
                         const Vec& candidate, const Vec& cell, const Vec& relevance_cell,
                         const LrpConfig& cfg) {
  const std::size_t h = cell.size();
  if (forget_gate.size() != h || cell_prev.size() != h || input_gate.size() != h ||
      candidate.size() != h || relevance_cell.size() != h)
    throw ModelError("lrp_cell_split dimension mismatch");
  CellSplit split;
  split.forget_path.resize(h);
  split.input_path.resize(h);
  for (std::size_t k = 0; k < h; ++k) {
    const double denom = cell[k] + lrp_sign(cell[k]) * cfg.epsilon;
    const double r = relevance_cell[k] / denom;
    split.forget_path[k] = forget_gate[k] * cell_prev[k] * r;
    split.input_path[k] = input_gate[k] * candidate[k] * r;
  }
  return split;
}

double RelevanceTrace::input_total() const {
  double s = 0.0;
  for (const Vec& rx : r_x)
    for (double v : rx) s += v;
  return s;
}

RelevanceTrace lrp_sequence_with_initial(const ModelParams& params, const ForwardTrace& trace,
                                         int target_timestep, int target_concept,
                                         double initial_relevance, const LrpConfig& cfg) {
  cfg.validate();
  if (target_timestep < 0 || target_timestep >= trace.length)
    throw ModelError("lrp_sequence: target timestep out of range");
  if (target_concept < 0 || target_concept >= trace.num_concepts)
    throw ModelError("lrp_sequence: target concept out of range");

  const int h = trace.hidden_size;
  const int x_dim = 2 * trace.num_concepts;
  const int n_steps = target_timestep + 1;
  // One linear layer feeds the candidate: h_{t-1} and x_t jointly.
  const int candidate_layer_size = h + x_dim;

  RelevanceTrace rt;
  rt.target_timestep = target_timestep;
  rt.target_concept = target_concept;
  rt.initial_relevance = initial_relevance;
  rt.r_x.assign(n_steps, Vec(x_dim, 0.0));
  rt.r_h.assign(n_steps, Vec(h, 0.0));
  rt.r_c.assign(n_steps, Vec(h, 0.0));

  // Output layer: redistribute the target neuron's relevance onto h_T; the
  // sigmoid passes relevance through unchanged.
  {
    const Vec& h_last = trace.hidden[target_timestep + 1];
    const double z =
        dot(params.w_yh.row(target_concept), h_last) + params.b_y[target_concept];
    lrp_linear_accumulate(h_last, params.w_yh.row(target_concept), params.b_y[target_concept], z,
                          initial_relevance, cfg, -1, rt.r_h[target_timestep]);
  }

  Vec x_dense;
  for (int t = target_timestep; t >= 0; --t) {
    // h_t = o_t (.) tanh(C_t): gate rule, tanh transparent -> all of R_h
    // joins the cell.
    for (int k = 0; k < h; ++k) rt.r_c[t][k] += rt.r_h[t][k];

    CellSplit split = lrp_cell_split(trace.forget[t], trace.cell[t], trace.input[t],
                                     trace.candidate[t], trace.cell[t + 1], rt.r_c[t], cfg);

    // Forget path feeds the previous cell directly.
    if (t > 0)
      for (int k = 0; k < h; ++k) rt.r_c[t - 1][k] += split.forget_path[k];

    // Candidate path: redistribute through W_ch h_{t-1} + W_cx x_t + b_c.
    const Vec& h_prev = trace.hidden[t];
    const int xi = trace.x_index[t];
    if (cfg.delta == 1) x_dense = trace.input_dense(t);
    for (int j = 0; j < h; ++j) {
      const double z = dot(params.w_ch.row(j), h_prev) + params.w_cx(j, xi) + params.b_c[j];
      const double rel = split.input_path[j];
      if (t > 0)
        lrp_linear_accumulate(h_prev, params.w_ch.row(j), params.b_c[j], z, rel, cfg,
                              candidate_layer_size, rt.r_h[t - 1]);
      if (cfg.delta == 0) {
        // Only the active one-hot entry has a nonzero numerator.
        rt.r_x[t][xi] += params.w_cx(j, xi) / (z + lrp_sign(z) * cfg.epsilon) * rel;
      } else {
        lrp_linear_accumulate(x_dense, params.w_cx.row(j), params.b_c[j], z, rel, cfg,
                              candidate_layer_size, rt.r_x[t]);
      }
    }
  }

  rt.question_relevance.resize(n_steps);
  for (int t = 0; t < n_steps; ++t) {
    double s = 0.0;
    for (double v : rt.r_x[t]) s += v;
    rt.question_relevance[t] = s;
  }
  return rt;
}

RelevanceTrace lrp_sequence(const ModelParams& params, const ForwardTrace& trace,
                            int target_timestep, int target_concept, const LrpConfig& cfg) {
  if (target_timestep < 0 || target_timestep >= trace.length)
    throw ModelError("lrp_sequence: target timestep out of range");
  if (target_concept < 0 || target_concept >= trace.num_concepts)
    throw ModelError("lrp_sequence: target concept out of range");
  const double initial = trace.prob[target_timestep][target_concept];
  return lrp_sequence_with_initial(params, trace, target_timestep, target_concept, initial, cfg);
}

std::vector<QuestionRelevance> question_relevances(const RelevanceTrace& rt,
                                                   const InteractionSequence& seq) {
  if (rt.target_timestep >= static_cast<int>(seq.steps.size()))
    throw ModelError("question_relevances: relevance trace does not match sequence");
  std::vector<QuestionRelevance> out;
  out.reserve(rt.question_relevance.size());
  for (int t = 0; t < static_cast<int>(rt.question_relevance.size()); ++t)
    out.push_back({t, seq.steps[t].question_id, rt.question_relevance[t]});
  return out;
}

}  // namespace dkt
