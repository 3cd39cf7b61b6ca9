#include "dkt/model_io.hpp"

#include <fstream>

#include <json.hpp>

#include "dkt/error.hpp"

namespace dkt {

namespace {

using nlohmann::json;

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const json& j, int rows, int cols, const char* name) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw ModelDimensionError(std::string("weights.") + name + ": expected " +
                              std::to_string(rows) + " rows");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw ModelDimensionError(std::string("weights.") + name + ": expected " +
                                std::to_string(cols) + " columns in row " + std::to_string(r));
    for (int c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw ModelFormatError(std::string("weights.") + name + ": non-numeric entry");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

Vec vector_from_json(const json& j, int n, const char* name) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    throw ModelDimensionError(std::string("weights.") + name + ": expected length " + std::to_string(n));
  Vec v(n);
  for (int i = 0; i < n; ++i) {
    if (!j[i].is_number()) throw ModelFormatError(std::string("weights.") + name + ": non-numeric entry");
    v[i] = j[i].get<double>();
  }
  return v;
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ModelFormatError(std::string("missing key: ") + key);
  return *it;
}

}  // namespace

void save_model(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  cfg.validate();
  if (!params.dims_match(cfg)) throw ModelError("save_model: parameter shapes do not match config");
  if (!params.all_finite()) throw ModelError("save_model: non-finite parameter values");

  json j;
  j["format_version"] = 1;
  j["num_concepts"] = cfg.num_concepts;
  j["hidden_size"] = cfg.hidden_size;
  json w;
  w["w_fh"] = matrix_to_json(params.w_fh);
  w["w_fx"] = matrix_to_json(params.w_fx);
  w["b_f"] = params.b_f;
  w["w_ih"] = matrix_to_json(params.w_ih);
  w["w_ix"] = matrix_to_json(params.w_ix);
  w["b_i"] = params.b_i;
  w["w_ch"] = matrix_to_json(params.w_ch);
  w["w_cx"] = matrix_to_json(params.w_cx);
  w["b_c"] = params.b_c;
  w["w_oh"] = matrix_to_json(params.w_oh);
  w["w_ox"] = matrix_to_json(params.w_ox);
  w["b_o"] = params.b_o;
  w["w_yh"] = matrix_to_json(params.w_yh);
  w["b_y"] = params.b_y;
  j["weights"] = std::move(w);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

std::pair<ModelParams, ModelConfig> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ModelFormatError("malformed model file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ModelFormatError("model file is not a JSON object");

  const json& ver = require(j, "format_version");
  if (!ver.is_number_integer() || ver.get<int>() != 1)
    throw ModelVersionError("unsupported format_version (expected 1)");

  const json& jm = require(j, "num_concepts");
  const json& jh = require(j, "hidden_size");
  if (!jm.is_number_integer() || !jh.is_number_integer())
    throw ModelFormatError("num_concepts/hidden_size must be integers");

  ModelConfig cfg;
  try {
    cfg = ModelConfig::make(jm.get<int>(), jh.get<int>());
  } catch (const ConfigError& e) {
    throw ModelDimensionError(e.what());
  }
  const int h = cfg.hidden_size, m = cfg.num_concepts, x = cfg.input_size;

  const json& w = require(j, "weights");
  if (!w.is_object()) throw ModelFormatError("weights must be an object");

  ModelParams p;
  p.w_fh = matrix_from_json(require(w, "w_fh"), h, h, "w_fh");
  p.w_fx = matrix_from_json(require(w, "w_fx"), h, x, "w_fx");
  p.b_f = vector_from_json(require(w, "b_f"), h, "b_f");
  p.w_ih = matrix_from_json(require(w, "w_ih"), h, h, "w_ih");
  p.w_ix = matrix_from_json(require(w, "w_ix"), h, x, "w_ix");
  p.b_i = vector_from_json(require(w, "b_i"), h, "b_i");
  p.w_ch = matrix_from_json(require(w, "w_ch"), h, h, "w_ch");
  p.w_cx = matrix_from_json(require(w, "w_cx"), h, x, "w_cx");
  p.b_c = vector_from_json(require(w, "b_c"), h, "b_c");
  p.w_oh = matrix_from_json(require(w, "w_oh"), h, h, "w_oh");
  p.w_ox = matrix_from_json(require(w, "w_ox"), h, x, "w_ox");
  p.b_o = vector_from_json(require(w, "b_o"), h, "b_o");
  p.w_yh = matrix_from_json(require(w, "w_yh"), m, h, "w_yh");
  p.b_y = vector_from_json(require(w, "b_y"), m, "b_y");

  if (!p.all_finite()) throw ModelFormatError("model file contains non-finite values");
  return {std::move(p), cfg};
}

}  // namespace dkt
