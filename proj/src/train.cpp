#include "dkt/train.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dkt/error.hpp"

namespace dkt {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double bce(double p, int label) {
  p = clamp_prob(p);
  return label ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (max_sequence_length < 2) throw ConfigError("max_sequence_length must be >= 2");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (num_threads < 0) throw ConfigError("num_threads must be >= 0");
}

DropoutMask sample_dropout_mask(int steps, int hidden_size, double rate, Rng& rng) {
  DropoutMask mask(steps, Vec(hidden_size, 1.0));
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int t = 0; t < steps; ++t)
    for (int k = 0; k < hidden_size; ++k)
      mask[t][k] = uniform_real(rng) < rate ? 0.0 : keep_scale;
  return mask;
}

ForwardTrace forward_with_dropout(const ModelParams& params, const InteractionSequence& seq,
                                  const DropoutMask& mask) {
  ForwardTrace tr = forward_sequence(params, seq);
  if (mask.empty()) return tr;
  if (static_cast<int>(mask.size()) != tr.length ||
      static_cast<int>(mask[0].size()) != tr.hidden_size)
    throw ModelError("dropout mask shape mismatch");
  Vec h_masked(tr.hidden_size);
  for (int t = 0; t < tr.length; ++t) {
    for (int k = 0; k < tr.hidden_size; ++k) h_masked[k] = tr.hidden[t + 1][k] * mask[t][k];
    tr.prob[t] = output_step(params, h_masked);
  }
  return tr;
}

double next_step_loss(const ForwardTrace& trace, const InteractionSequence& seq) {
  const int T = trace.length;
  if (static_cast<int>(seq.steps.size()) != T)
    throw ModelError("next_step_loss: trace/sequence length mismatch");
  if (T < 2) throw ModelError("next_step_loss: sequence has no prediction points");
  double sum = 0.0;
  for (int t = 0; t + 1 < T; ++t) {
    const Interaction& next = seq.steps[t + 1];
    sum += bce(trace.prob[t][next.concept_id], next.correct ? 1 : 0);
  }
  return sum / static_cast<double>(T - 1);
}

ModelParams backward_bptt(const ModelParams& params, const InteractionSequence& seq,
                          const DropoutMask& mask, double* loss_out) {
  const int T = static_cast<int>(seq.steps.size());
  if (T < 2) throw ModelError("backward_bptt: sequence has no prediction points");
  const ForwardTrace tr = forward_with_dropout(params, seq, mask);
  const int h = tr.hidden_size;
  const double scale = 1.0 / static_cast<double>(T - 1);

  ModelParams grads = ModelParams::zeros(
      ModelConfig::make(tr.num_concepts, h));

  Vec dh_next(h, 0.0), dc_next(h, 0.0);
  Vec dh(h), dc(h), da_f(h), da_i(h), da_c(h), da_o(h), h_masked(h), tanh_c(h);
  double loss = 0.0;

  // The last step's activations feed nothing, so backpropagation starts at
  // the last step that carries a prediction.
  for (int t = T - 2; t >= 0; --t) {
    std::copy(dh_next.begin(), dh_next.end(), dh.begin());

    // Output-layer loss at step t targets step t+1.
    const Interaction& next = seq.steps[t + 1];
    const int d = next.concept_id;
    const int label = next.correct ? 1 : 0;
    const double y = tr.prob[t][d];
    loss += bce(y, label);
    // Derivative of the clamped cross-entropy through the sigmoid; zero in
    // the clamped region.
    const double dz = (y > kProbClamp && y < 1.0 - kProbClamp)
                          ? scale * (y - static_cast<double>(label))
                          : 0.0;
    const bool dropped = !mask.empty();
    for (int k = 0; k < h; ++k)
      h_masked[k] = dropped ? tr.hidden[t + 1][k] * mask[t][k] : tr.hidden[t + 1][k];
    for (int k = 0; k < h; ++k) grads.w_yh(d, k) += dz * h_masked[k];
    grads.b_y[d] += dz;
    for (int k = 0; k < h; ++k) {
      const double g = params.w_yh(d, k) * dz;
      dh[k] += dropped ? g * mask[t][k] : g;
    }

    // h_t = o_t (.) tanh(C_t)
    for (int k = 0; k < h; ++k) {
      tanh_c[k] = std::tanh(tr.cell[t + 1][k]);
      const double o = tr.out_gate[t][k];
      da_o[k] = dh[k] * tanh_c[k] * o * (1.0 - o);
      dc[k] = dc_next[k] + dh[k] * o * (1.0 - tanh_c[k] * tanh_c[k]);
    }
    // C_t = f (.) C_{t-1} + i (.) c~
    for (int k = 0; k < h; ++k) {
      const double f = tr.forget[t][k], i = tr.input[t][k], ct = tr.candidate[t][k];
      da_f[k] = dc[k] * tr.cell[t][k] * f * (1.0 - f);
      da_i[k] = dc[k] * ct * i * (1.0 - i);
      da_c[k] = dc[k] * i * (1.0 - ct * ct);
      dc_next[k] = dc[k] * f;
    }

    const Vec& h_prev = tr.hidden[t];
    const int xi = tr.x_index[t];
    add_outer(grads.w_fh, da_f, h_prev);
    add_outer(grads.w_ih, da_i, h_prev);
    add_outer(grads.w_ch, da_c, h_prev);
    add_outer(grads.w_oh, da_o, h_prev);
    add_to_column(grads.w_fx, xi, da_f);
    add_to_column(grads.w_ix, xi, da_i);
    add_to_column(grads.w_cx, xi, da_c);
    add_to_column(grads.w_ox, xi, da_o);
    for (int k = 0; k < h; ++k) {
      grads.b_f[k] += da_f[k];
      grads.b_i[k] += da_i[k];
      grads.b_c[k] += da_c[k];
      grads.b_o[k] += da_o[k];
    }

    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    matvec_transpose_add(params.w_fh, da_f, dh_next);
    matvec_transpose_add(params.w_ih, da_i, dh_next);
    matvec_transpose_add(params.w_ch, da_c, dh_next);
    matvec_transpose_add(params.w_oh, da_o, dh_next);
  }

  if (loss_out != nullptr) *loss_out = loss * scale;
  return grads;
}

AdamState AdamState::init(const ModelConfig& cfg) {
  AdamState s;
  s.m = ModelParams::zeros(cfg);
  s.v = ModelParams::zeros(cfg);
  s.step = 0;
  return s;
}

void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state,
                 const TrainConfig& cfg) {
  auto p = tensor_views(params);
  auto g = tensor_views(grads);
  auto m = tensor_views(state.m);
  auto v = tensor_views(state.v);
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k].size() != g[k].size() || p[k].size() != m[k].size())
      throw ModelError("adam_update: tensor shape mismatch");

  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t j = 0; j < p[k].size(); ++j) {
      const double gj = g[k][j];
      m[k][j] = b1 * m[k][j] + (1.0 - b1) * gj;
      v[k][j] = b2 * v[k][j] + (1.0 - b2) * gj * gj;
      const double m_hat = m[k][j] / corr1;
      const double v_hat = v[k][j] / corr2;
      p[k][j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

ModelParams batch_gradients_serial(const ModelParams& params,
                                   std::span<const InteractionSequence* const> batch,
                                   std::span<const DropoutMask> masks, double* mean_loss) {
  if (batch.empty()) throw ModelError("empty batch");
  if (masks.size() != batch.size()) throw ModelError("mask count must match batch size");
  ModelParams sum = ModelParams::zeros(ModelConfig::make(params.w_yh.rows(), params.w_fh.rows()));
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double loss = 0.0;
    ModelParams g = backward_bptt(params, *batch[i], masks[i], &loss);
    sum.add_scaled(g, 1.0);
    loss_sum += loss;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  sum.scale(inv);
  if (mean_loss != nullptr) *mean_loss = loss_sum * inv;
  return sum;
}

ModelParams batch_gradients(const ModelParams& params,
                            std::span<const InteractionSequence* const> batch,
                            std::span<const DropoutMask> masks, double* mean_loss,
                            int num_threads) {
  if (batch.empty()) throw ModelError("empty batch");
  if (masks.size() != batch.size()) throw ModelError("mask count must match batch size");

  const int n = static_cast<int>(batch.size());
  std::vector<ModelParams> slots(n);
  std::vector<double> losses(n, 0.0);

  // Exceptions must not unwind out of the parallel region.
  std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) num_threads(num_threads > 0 ? num_threads \
                                                                       : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      slots[i] = backward_bptt(params, *batch[i], masks[i], &losses[i]);
    } catch (...) {
#pragma omp critical
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  // Fixed-order reduction keeps the result bitwise equal to the serial path.
  ModelParams sum = ModelParams::zeros(ModelConfig::make(params.w_yh.rows(), params.w_fh.rows()));
  double loss_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    sum.add_scaled(slots[i], 1.0);
    loss_sum += losses[i];
  }
  const double inv = 1.0 / static_cast<double>(n);
  sum.scale(inv);
  if (mean_loss != nullptr) *mean_loss = loss_sum * inv;
  return sum;
}

namespace {

// Split long sequences into consecutive chunks and drop anything without a
// prediction point.
std::vector<InteractionSequence> chunk_for_training(const Dataset& dataset, int max_len) {
  std::vector<InteractionSequence> out;
  for (const InteractionSequence& seq : dataset.sequences) {
    const int T = static_cast<int>(seq.steps.size());
    for (int start = 0; start < T; start += max_len) {
      const int len = std::min(max_len, T - start);
      if (len < 2) continue;
      InteractionSequence chunk;
      chunk.learner_id = seq.learner_id;
      chunk.steps.assign(seq.steps.begin() + start, seq.steps.begin() + start + len);
      out.push_back(std::move(chunk));
    }
  }
  return out;
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  model_cfg.validate();
  cfg.validate();
  if (dataset.sequences.empty()) throw DataError("train: empty dataset");
  if (dataset.num_concepts() > model_cfg.num_concepts)
    throw DataError("train: dataset has more concepts than the model");

  const std::vector<InteractionSequence> chunks =
      chunk_for_training(dataset, cfg.max_sequence_length);
  if (chunks.empty()) throw DataError("train: no sequences with a prediction point");

  TrainResult result;
  result.params = ModelParams::init(model_cfg);
  AdamState adam = AdamState::init(model_cfg);
  Rng rng(cfg.seed);

  std::vector<std::size_t> order(chunks.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on first use

  std::vector<const InteractionSequence*> batch;
  std::vector<DropoutMask> masks;
  result.loss_log.reserve(cfg.iterations);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    batch.clear();
    masks.clear();
    if (cursor >= order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    const std::size_t take = std::min<std::size_t>(cfg.batch_size, order.size() - cursor);
    for (std::size_t i = 0; i < take; ++i) batch.push_back(&chunks[order[cursor++]]);
    for (const InteractionSequence* seq : batch)
      masks.push_back(sample_dropout_mask(static_cast<int>(seq->steps.size()),
                                          model_cfg.hidden_size, cfg.dropout_rate, rng));

    double mean_loss = 0.0;
    ModelParams grads = batch_gradients(result.params, batch, masks, &mean_loss, cfg.num_threads);

    const double norm = std::sqrt(grads.squared_norm());
    if (norm > cfg.clip_norm) grads.scale(cfg.clip_norm / norm);

    adam_update(result.params, grads, adam, cfg);
    result.loss_log.push_back(mean_loss);
  }
  return result;
}

double auc_rank(std::span<const double> scores, std::span<const int> labels, bool* one_class) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  long long n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  const long long n_neg = static_cast<long long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    if (one_class != nullptr) *one_class = true;
    return 0.5;
  }
  if (one_class != nullptr) *one_class = false;

  // Midranks over tied scores; the positive rank sum then counts each
  // (pos, neg) pair once, ties as one half.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

EvalMetrics metrics_from_predictions(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw DataError("metrics: no prediction points");
  EvalMetrics m;
  m.num_predictions = static_cast<std::int64_t>(scores.size());
  long long hits = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= 0.5 ? 1 : 0;
    hits += pred == labels[i] ? 1 : 0;
    loss += bce(scores[i], labels[i]);
  }
  m.acc = static_cast<double>(hits) / static_cast<double>(scores.size());
  m.loss = loss / static_cast<double>(scores.size());
  m.auc = auc_rank(scores, labels, &m.one_class);
  return m;
}

EvalMetrics evaluate(const ModelParams& params, const Dataset& dataset, int num_threads) {
  const int n = static_cast<int>(dataset.sequences.size());
  std::vector<std::vector<std::pair<double, int>>> slots(n);

  std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) num_threads(num_threads > 0 ? num_threads \
                                                                       : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      const InteractionSequence& seq = dataset.sequences[i];
      if (seq.steps.size() < 2) continue;
      const ForwardTrace tr = forward_sequence(params, seq);
      auto& out = slots[i];
      out.reserve(seq.steps.size() - 1);
      for (int t = 0; t + 1 < tr.length; ++t) {
        const Interaction& next = seq.steps[t + 1];
        out.emplace_back(tr.prob[t][next.concept_id], next.correct ? 1 : 0);
      }
    } catch (...) {
#pragma omp critical
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& slot : slots)
    for (const auto& [s, l] : slot) {
      scores.push_back(s);
      labels.push_back(l);
    }
  if (scores.empty()) throw DataError("evaluate: no valid prediction points");
  return metrics_from_predictions(scores, labels);
}

}  // namespace dkt
