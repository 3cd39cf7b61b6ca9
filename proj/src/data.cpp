#include "dkt/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dkt/error.hpp"
#include "dkt/rng.hpp"

namespace dkt {

namespace {

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// One CSV line -> fields. Handles quoted fields with embedded commas and
// doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

long long parse_int_field(const std::string& s, const char* col, long long line_no) {
  const std::string t = trim(s);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw DataError(std::string("line ") + std::to_string(line_no) + ": column '" + col +
                    "' is not an integer: '" + t + "'");
  return v;
}

std::vector<std::string> split_skills(const std::string& raw) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : raw) {
    if (c == ',' || c == ';') {
      std::string p = trim(cur);
      if (!p.empty()) parts.push_back(std::move(p));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  std::string p = trim(cur);
  if (!p.empty()) parts.push_back(std::move(p));
  return parts;
}

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n") != std::string::npos;
}

std::string csv_escape(const std::string& s) {
  if (!needs_quoting(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

std::vector<RawRecord> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());

  const std::vector<std::string> names = split_csv_line(line);
  int col_order = -1, col_user = -1, col_problem = -1, col_skill = -1, col_correct = -1;
  for (int i = 0; i < static_cast<int>(names.size()); ++i) {
    const std::string n = to_lower(trim(names[i]));
    if (n == "order_id") col_order = i;
    else if (n == "user_id") col_user = i;
    else if (n == "problem_id") col_problem = i;
    else if (n == "skill_id") col_skill = i;
    else if (n == "correct") col_correct = i;
  }
  std::string missing;
  if (col_order < 0) missing += " order_id";
  if (col_user < 0) missing += " user_id";
  if (col_problem < 0) missing += " problem_id";
  if (col_skill < 0) missing += " skill_id";
  if (col_correct < 0) missing += " correct";
  if (!missing.empty()) throw DataError("missing required columns:" + missing);

  std::vector<RawRecord> records;
  long long line_no = 1;
  long long row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    const int needed = std::max({col_order, col_user, col_problem, col_skill, col_correct});
    if (static_cast<int>(f.size()) <= needed)
      throw DataError("line " + std::to_string(line_no) + ": expected at least " +
                      std::to_string(needed + 1) + " fields, got " + std::to_string(f.size()));

    RawRecord r;
    r.order_id = parse_int_field(f[col_order], "order_id", line_no);
    r.user_id = trim(f[col_user]);
    r.problem_id = trim(f[col_problem]);
    r.skill_id = trim(f[col_skill]);
    const long long c = parse_int_field(f[col_correct], "correct", line_no);
    if (c != 0 && c != 1)
      throw DataError("line " + std::to_string(line_no) + ": 'correct' must be 0 or 1, got " +
                      std::to_string(c));
    if (r.user_id.empty())
      throw DataError("line " + std::to_string(line_no) + ": missing user_id");
    if (r.problem_id.empty())
      throw DataError("line " + std::to_string(line_no) + ": missing problem_id");
    r.correct = static_cast<int>(c);
    r.row = row++;
    records.push_back(std::move(r));
  }
  return records;
}

void write_records_csv(const std::vector<RawRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "order_id,user_id,problem_id,skill_id,correct\n";
  for (const RawRecord& r : records) {
    out << r.order_id << ',' << csv_escape(r.user_id) << ',' << csv_escape(r.problem_id) << ','
        << csv_escape(r.skill_id) << ',' << r.correct << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

int ConceptVocab::require(const std::string& skill) const {
  auto it = index_of.find(skill);
  if (it == index_of.end()) throw DataError("unknown concept: '" + skill + "'");
  return it->second;
}

ConceptVocab ConceptVocab::from_labels(std::vector<std::string> sorted_labels) {
  ConceptVocab v;
  v.skills = std::move(sorted_labels);
  for (int i = 0; i < static_cast<int>(v.skills.size()); ++i) v.index_of[v.skills[i]] = i;
  return v;
}

long long Dataset::num_records() const {
  long long n = 0;
  for (const auto& s : sequences) n += static_cast<long long>(s.steps.size());
  return n;
}

long long Dataset::num_questions() const {
  std::set<std::string> qs;
  for (const auto& s : sequences)
    for (const auto& step : s.steps) qs.insert(step.question_id);
  return static_cast<long long>(qs.size());
}

Dataset build_dataset(const std::vector<RawRecord>& records, int min_sequence_length,
                      const ConceptVocab* fixed_vocab) {
  if (min_sequence_length < 1) throw ConfigError("min_sequence_length must be >= 1");
  if (records.empty()) throw DataError("no records");

  struct Expanded {
    long long order_id;
    long long row;
    std::string problem_id;
    std::string skill;
    int correct;
  };

  // Labeled records only, one per skill; users kept in first-appearance order.
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<Expanded>> by_user;
  for (const RawRecord& r : records) {
    const std::vector<std::string> skills = split_skills(r.skill_id);
    if (skills.empty()) continue;
    auto it = by_user.find(r.user_id);
    if (it == by_user.end()) {
      user_order.push_back(r.user_id);
      it = by_user.emplace(r.user_id, std::vector<Expanded>{}).first;
    }
    for (const std::string& s : skills)
      it->second.push_back({r.order_id, r.row, r.problem_id, s, r.correct});
  }

  std::set<std::string> seen_keys;
  std::vector<std::pair<std::string, std::vector<Expanded>>> kept;
  for (const std::string& user : user_order) {
    auto& recs = by_user[user];
    std::stable_sort(recs.begin(), recs.end(), [](const Expanded& a, const Expanded& b) {
      return a.order_id != b.order_id ? a.order_id < b.order_id : a.row < b.row;
    });
    if (static_cast<int>(recs.size()) < min_sequence_length) continue;

    std::string key;
    for (const Expanded& e : recs) {
      key += e.problem_id;
      key.push_back('\x1f');
      key += e.skill;
      key.push_back('\x1f');
      key.push_back(e.correct ? '1' : '0');
      key.push_back('\x1e');
    }
    if (!seen_keys.insert(key).second) continue;  // duplicate exercise sequence
    kept.emplace_back(user, std::move(recs));
  }
  if (kept.empty()) throw DataError("no sequences left after filtering");

  Dataset ds;
  if (fixed_vocab != nullptr) {
    ds.vocab = *fixed_vocab;
  } else {
    std::set<std::string> labels;
    for (const auto& [user, recs] : kept)
      for (const Expanded& e : recs) labels.insert(e.skill);
    ds.vocab = ConceptVocab::from_labels({labels.begin(), labels.end()});
  }

  for (auto& [user, recs] : kept) {
    InteractionSequence seq;
    seq.learner_id = user;
    seq.steps.reserve(recs.size());
    for (const Expanded& e : recs)
      seq.steps.push_back({e.problem_id, ds.vocab.require(e.skill), e.correct != 0});
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

std::vector<RawRecord> to_records(const Dataset& ds) {
  std::vector<RawRecord> records;
  long long row = 0;
  for (const auto& seq : ds.sequences) {
    long long order = 0;
    for (const auto& step : seq.steps) {
      RawRecord r;
      r.order_id = order++;
      r.user_id = seq.learner_id;
      r.problem_id = step.question_id;
      r.skill_id = ds.vocab.skills.at(step.concept_id);
      r.correct = step.correct ? 1 : 0;
      r.row = row++;
      records.push_back(std::move(r));
    }
  }
  return records;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0, 1)");
  const std::size_t n = ds.sequences.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);

  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train && i < n; ++i) in_train[order[i]] = true;

  Dataset train, test;
  train.vocab = ds.vocab;
  test.vocab = ds.vocab;
  for (std::size_t i = 0; i < n; ++i)
    (in_train[i] ? train : test).sequences.push_back(ds.sequences[i]);
  return {std::move(train), std::move(test)};
}

void BktParams::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (num_concepts < 1) throw ConfigError("num_concepts must be >= 1");
  if (!prob(p_init) || !prob(p_learn) || !prob(p_slip) || !prob(p_guess))
    throw ConfigError("BKT probabilities must lie in [0, 1]");
  if (p_slip + p_guess >= 1.0) throw ConfigError("p_slip + p_guess must be < 1");
  if (num_students < 0 || questions_per_student < 0) throw ConfigError("negative counts");
  if (problems_per_concept < 1) throw ConfigError("problems_per_concept must be >= 1");
  if (!concept_groups.empty()) {
    if (static_cast<int>(concept_groups.size()) != num_concepts)
      throw ConfigError("concept_groups must have one entry per concept");
    for (int g : concept_groups)
      if (g < 0) throw ConfigError("concept group ids must be >= 0");
  }
}

int BktParams::group_of(int concept_id) const {
  return concept_groups.empty() ? concept_id : concept_groups[concept_id];
}

int BktParams::num_groups() const {
  if (concept_groups.empty()) return num_concepts;
  int g = 0;
  for (int v : concept_groups) g = std::max(g, v + 1);
  return g;
}

std::vector<RawRecord> generate_synthetic_records(const BktParams& params) {
  params.validate();
  Rng rng(params.seed);
  std::vector<RawRecord> records;
  records.reserve(static_cast<std::size_t>(params.num_students) * params.questions_per_student);

  int id_width = 1;
  for (int v = params.num_students; v >= 10; v /= 10) ++id_width;

  std::vector<bool> mastered(params.num_groups());
  long long row = 0;
  for (int s = 0; s < params.num_students; ++s) {
    for (int g = 0; g < params.num_groups(); ++g) mastered[g] = bernoulli(rng, params.p_init);

    std::string sid = std::to_string(s);
    sid = "s" + std::string(id_width - static_cast<int>(sid.size()), '0') + sid;

    for (int q = 0; q < params.questions_per_student; ++q) {
      const int concept_id = static_cast<int>(uniform_below(rng, params.num_concepts));
      const int problem = static_cast<int>(uniform_below(rng, params.problems_per_concept));
      const int group = params.group_of(concept_id);
      const double p_correct = mastered[group] ? 1.0 - params.p_slip : params.p_guess;
      const bool correct = bernoulli(rng, p_correct);
      if (!mastered[group] && bernoulli(rng, params.p_learn)) mastered[group] = true;

      RawRecord r;
      r.order_id = row;
      r.user_id = sid;
      r.problem_id = "p" + std::to_string(concept_id) + "_" + std::to_string(problem);
      r.skill_id = "c" + std::to_string(concept_id);
      r.correct = correct ? 1 : 0;
      r.row = row++;
      records.push_back(std::move(r));
    }
  }
  return records;
}

Dataset generate_synthetic(const BktParams& params) {
  std::vector<RawRecord> records = generate_synthetic_records(params);
  if (records.empty()) return Dataset{};
  return build_dataset(records, 1);
}

std::string dataset_summary_json(const Dataset& ds) {
  nlohmann::json j;
  j["num_records"] = ds.num_records();
  j["num_questions"] = ds.num_questions();
  j["num_concepts"] = ds.num_concepts();
  j["num_students"] = ds.num_students();
  return j.dump();
}

}  // namespace dkt
