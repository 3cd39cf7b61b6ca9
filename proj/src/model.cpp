#include "dkt/model.hpp"

#include <cmath>
#include <string>

#include "dkt/error.hpp"
#include "dkt/rng.hpp"

namespace dkt {

ModelConfig ModelConfig::make(int num_concepts, int hidden_size, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.num_concepts = num_concepts;
  cfg.hidden_size = hidden_size;
  cfg.input_size = 2 * num_concepts;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  if (num_concepts < 1) throw ConfigError("num_concepts must be >= 1");
  if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
  if (input_size != 2 * num_concepts) throw ConfigError("input_size must equal 2*num_concepts");
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const int h = cfg.hidden_size, m = cfg.num_concepts, x = cfg.input_size;
  ModelParams p;
  p.w_fh = Mat(h, h); p.w_ih = Mat(h, h); p.w_ch = Mat(h, h); p.w_oh = Mat(h, h);
  p.w_fx = Mat(h, x); p.w_ix = Mat(h, x); p.w_cx = Mat(h, x); p.w_ox = Mat(h, x);
  p.b_f = Vec(h, 0.0); p.b_i = Vec(h, 0.0); p.b_c = Vec(h, 0.0); p.b_o = Vec(h, 0.0);
  p.w_yh = Mat(m, h);
  p.b_y = Vec(m, 0.0);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
  ModelParams p = zeros(cfg);
  Rng rng(cfg.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
  for (Mat* w : {&p.w_fh, &p.w_ih, &p.w_ch, &p.w_oh, &p.w_fx, &p.w_ix, &p.w_cx, &p.w_ox, &p.w_yh}) {
    for (double& v : w->data()) v = uniform_real(rng, -bound, bound);
  }
  return p;
}

std::array<std::span<double>, 14> tensor_views(ModelParams& p) {
  return {std::span<double>(p.w_fh.data()), std::span<double>(p.w_ih.data()),
          std::span<double>(p.w_ch.data()), std::span<double>(p.w_oh.data()),
          std::span<double>(p.w_fx.data()), std::span<double>(p.w_ix.data()),
          std::span<double>(p.w_cx.data()), std::span<double>(p.w_ox.data()),
          std::span<double>(p.b_f),         std::span<double>(p.b_i),
          std::span<double>(p.b_c),         std::span<double>(p.b_o),
          std::span<double>(p.w_yh.data()), std::span<double>(p.b_y)};
}

std::array<std::span<const double>, 14> tensor_views(const ModelParams& p) {
  return {std::span<const double>(p.w_fh.data()), std::span<const double>(p.w_ih.data()),
          std::span<const double>(p.w_ch.data()), std::span<const double>(p.w_oh.data()),
          std::span<const double>(p.w_fx.data()), std::span<const double>(p.w_ix.data()),
          std::span<const double>(p.w_cx.data()), std::span<const double>(p.w_ox.data()),
          std::span<const double>(p.b_f),         std::span<const double>(p.b_i),
          std::span<const double>(p.b_c),         std::span<const double>(p.b_o),
          std::span<const double>(p.w_yh.data()), std::span<const double>(p.b_y)};
}

bool ModelParams::dims_match(const ModelConfig& cfg) const {
  const int h = cfg.hidden_size, m = cfg.num_concepts, x = cfg.input_size;
  auto mat_is = [](const Mat& w, int r, int c) { return w.rows() == r && w.cols() == c; };
  return mat_is(w_fh, h, h) && mat_is(w_ih, h, h) && mat_is(w_ch, h, h) && mat_is(w_oh, h, h) &&
         mat_is(w_fx, h, x) && mat_is(w_ix, h, x) && mat_is(w_cx, h, x) && mat_is(w_ox, h, x) &&
         static_cast<int>(b_f.size()) == h && static_cast<int>(b_i.size()) == h &&
         static_cast<int>(b_c.size()) == h && static_cast<int>(b_o.size()) == h &&
         mat_is(w_yh, m, h) && static_cast<int>(b_y.size()) == m;
}

bool ModelParams::all_finite() const {
  for (auto view : tensor_views(*this))
    for (double v : view)
      if (!std::isfinite(v)) return false;
  return true;
}

void ModelParams::fill(double v) {
  for (auto view : tensor_views(*this))
    for (double& x : view) x = v;
}

void ModelParams::scale(double s) {
  for (auto view : tensor_views(*this))
    for (double& x : view) x *= s;
}

void ModelParams::add_scaled(const ModelParams& other, double s) {
  auto mine = tensor_views(*this);
  auto theirs = tensor_views(other);
  for (std::size_t k = 0; k < mine.size(); ++k) {
    if (mine[k].size() != theirs[k].size()) throw ModelError("tensor shape mismatch in add_scaled");
    for (std::size_t j = 0; j < mine[k].size(); ++j) mine[k][j] += s * theirs[k][j];
  }
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (auto view : tensor_views(*this))
    for (double v : view) s += v * v;
  return s;
}

int encode_input_index(const Interaction& it, int num_concepts) {
  if (it.concept_id < 0 || it.concept_id >= num_concepts)
    throw ModelError("concept_id " + std::to_string(it.concept_id) + " out of range [0, " +
                     std::to_string(num_concepts) + ")");
  return it.correct ? it.concept_id : num_concepts + it.concept_id;
}

Vec encode_input(const Interaction& it, int num_concepts) {
  Vec x(2 * static_cast<std::size_t>(num_concepts), 0.0);
  x[encode_input_index(it, num_concepts)] = 1.0;
  return x;
}

Vec ForwardTrace::input_dense(int t) const {
  Vec x(2 * static_cast<std::size_t>(num_concepts), 0.0);
  x[x_index[t]] = 1.0;
  return x;
}

namespace {

void check_step_dims(const ModelParams& p, std::size_t x_size, std::size_t h_size,
                     std::size_t c_size) {
  if (static_cast<int>(x_size) != p.w_fx.cols() || static_cast<int>(h_size) != p.w_fh.cols() ||
      c_size != h_size)
    throw ModelError("lstm_step dimension mismatch");
}

// Shared cell update; x enters either dense or as its active one-hot index.
LstmStepResult lstm_cell(const ModelParams& p, const Vec* x_dense, int x_active,
                         const Vec& h_prev, const Vec& c_prev) {
  const int h = p.w_fh.rows();
  Vec a_f(p.b_f), a_i(p.b_i), a_c(p.b_c), a_o(p.b_o);
  matvec_add(p.w_fh, h_prev, a_f);
  matvec_add(p.w_ih, h_prev, a_i);
  matvec_add(p.w_ch, h_prev, a_c);
  matvec_add(p.w_oh, h_prev, a_o);
  if (x_dense != nullptr) {
    matvec_add(p.w_fx, *x_dense, a_f);
    matvec_add(p.w_ix, *x_dense, a_i);
    matvec_add(p.w_cx, *x_dense, a_c);
    matvec_add(p.w_ox, *x_dense, a_o);
  } else {
    add_column(p.w_fx, x_active, a_f);
    add_column(p.w_ix, x_active, a_i);
    add_column(p.w_cx, x_active, a_c);
    add_column(p.w_ox, x_active, a_o);
  }
  LstmStepResult r;
  r.forget.resize(h); r.input.resize(h); r.candidate.resize(h);
  r.cell.resize(h); r.out_gate.resize(h); r.hidden.resize(h);
  for (int k = 0; k < h; ++k) {
    r.forget[k] = sigmoid(a_f[k]);
    r.input[k] = sigmoid(a_i[k]);
    r.candidate[k] = std::tanh(a_c[k]);
    r.cell[k] = r.forget[k] * c_prev[k] + r.input[k] * r.candidate[k];
    r.out_gate[k] = sigmoid(a_o[k]);
    r.hidden[k] = r.out_gate[k] * std::tanh(r.cell[k]);
  }
  return r;
}

}  // namespace

LstmStepResult lstm_step(const ModelParams& p, const Vec& x, const Vec& h_prev, const Vec& c_prev) {
  check_step_dims(p, x.size(), h_prev.size(), c_prev.size());
  for (double v : x)
    if (!std::isfinite(v)) throw ModelError("non-finite input to lstm_step");
  return lstm_cell(p, &x, -1, h_prev, c_prev);
}

Vec output_step(const ModelParams& p, const Vec& h) {
  if (static_cast<int>(h.size()) != p.w_yh.cols()) throw ModelError("output_step dimension mismatch");
  Vec y(p.b_y);
  matvec_add(p.w_yh, h, y);
  for (double& v : y) v = sigmoid(v);
  return y;
}

ForwardTrace forward_sequence(const ModelParams& p, const InteractionSequence& seq) {
  if (seq.steps.empty()) throw ModelError("forward_sequence: empty sequence");
  const int h = p.w_fh.rows();
  const int m = p.w_yh.rows();
  const int T = static_cast<int>(seq.steps.size());
  if (p.w_fx.cols() != 2 * m) throw ModelError("forward_sequence: inconsistent parameter shapes");

  ForwardTrace tr;
  tr.length = T;
  tr.hidden_size = h;
  tr.num_concepts = m;
  tr.x_index.resize(T);
  tr.forget.resize(T); tr.input.resize(T); tr.candidate.resize(T); tr.out_gate.resize(T);
  tr.prob.resize(T);
  tr.hidden.assign(T + 1, Vec(h, 0.0));
  tr.cell.assign(T + 1, Vec(h, 0.0));

  for (int t = 0; t < T; ++t) {
    tr.x_index[t] = encode_input_index(seq.steps[t], m);
    LstmStepResult s = lstm_cell(p, nullptr, tr.x_index[t], tr.hidden[t], tr.cell[t]);
    tr.forget[t] = std::move(s.forget);
    tr.input[t] = std::move(s.input);
    tr.candidate[t] = std::move(s.candidate);
    tr.out_gate[t] = std::move(s.out_gate);
    tr.hidden[t + 1] = std::move(s.hidden);
    tr.cell[t + 1] = std::move(s.cell);
    tr.prob[t] = output_step(p, tr.hidden[t + 1]);
  }
  return tr;
}

double predict_next(const ModelParams& p, const InteractionSequence& seq, int target_concept) {
  if (target_concept < 0 || target_concept >= p.w_yh.rows())
    throw ModelError("predict_next: target concept out of range");
  ForwardTrace tr = forward_sequence(p, seq);
  return tr.prob[tr.length - 1][target_concept];
}

}  // namespace dkt
