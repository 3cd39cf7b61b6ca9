#include "dkt/experiments.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "dkt/error.hpp"
#include "dkt/format.hpp"
#include "dkt/rng.hpp"

namespace dkt {

std::string to_string(PredictionGroup g) {
  return g == PredictionGroup::positive ? "positive" : "negative";
}

std::string to_string(SequenceGroup g) {
  switch (g) {
    case SequenceGroup::correct_positive: return "correct_positive";
    case SequenceGroup::correct_negative: return "correct_negative";
    case SequenceGroup::false_positive: return "false_positive";
    case SequenceGroup::false_negative: return "false_negative";
  }
  return "?";
}

std::string to_string(DeletionStrategy s) {
  return s == DeletionStrategy::relevance_ordered ? "relevance_ordered" : "random";
}

std::optional<SequenceGroup> classify_prediction(double probability, bool actual) {
  if (probability == 0.5) return std::nullopt;
  const bool positive = probability > 0.5;
  const bool correct = positive == actual;
  if (correct)
    return positive ? SequenceGroup::correct_positive : SequenceGroup::correct_negative;
  return positive ? SequenceGroup::false_positive : SequenceGroup::false_negative;
}

namespace {

void check_prefix_args(int prefix_len, int target_index) {
  if (prefix_len < 1) throw ConfigError("prefix_len must be >= 1");
  if (target_index < prefix_len)
    throw ConfigError("target_index must not fall inside the prefix");
}

SequenceExplanation explain_one(const ModelParams& params, const InteractionSequence& seq,
                                int seq_index, int prefix_len, int target_index,
                                const LrpConfig& cfg) {
  InteractionSequence prefix;
  prefix.learner_id = seq.learner_id;
  prefix.steps.assign(seq.steps.begin(), seq.steps.begin() + prefix_len);

  const Interaction& target = seq.steps[target_index];
  const ForwardTrace tr = forward_sequence(params, prefix);

  SequenceExplanation ex;
  ex.seq_index = seq_index;
  ex.sequence_id = seq.learner_id;
  ex.target_concept = target.concept_id;
  ex.actual = target.correct;
  ex.probability = tr.prob[prefix_len - 1][target.concept_id];

  const RelevanceTrace rt = lrp_sequence(params, tr, prefix_len - 1, target.concept_id, cfg);
  ex.relevances = rt.question_relevance;
  ex.correct.reserve(prefix_len);
  for (const Interaction& it : prefix.steps) ex.correct.push_back(it.correct ? 1 : 0);
  return ex;
}

}  // namespace

std::vector<SequenceExplanation> explain_prefixes_serial(const ModelParams& params,
                                                         const Dataset& dataset, int prefix_len,
                                                         int target_index, const LrpConfig& cfg) {
  check_prefix_args(prefix_len, target_index);
  cfg.validate();
  std::vector<SequenceExplanation> out;
  for (int i = 0; i < static_cast<int>(dataset.sequences.size()); ++i) {
    const InteractionSequence& seq = dataset.sequences[i];
    if (static_cast<int>(seq.steps.size()) <= target_index) continue;
    out.push_back(explain_one(params, seq, i, prefix_len, target_index, cfg));
  }
  return out;
}

std::vector<SequenceExplanation> explain_prefixes(const ModelParams& params, const Dataset& dataset,
                                                  int prefix_len, int target_index,
                                                  const LrpConfig& cfg, int num_threads) {
  check_prefix_args(prefix_len, target_index);
  cfg.validate();
  const int n = static_cast<int>(dataset.sequences.size());
  std::vector<std::optional<SequenceExplanation>> slots(n);

  std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) num_threads(num_threads > 0 ? num_threads \
                                                                       : omp_get_max_threads())
  for (int i = 0; i < n; ++i) {
    try {
      const InteractionSequence& seq = dataset.sequences[i];
      if (static_cast<int>(seq.steps.size()) <= target_index) continue;
      slots[i] = explain_one(params, seq, i, prefix_len, target_index, cfg);
    } catch (...) {
#pragma omp critical
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<SequenceExplanation> out;
  for (auto& s : slots)
    if (s.has_value()) out.push_back(std::move(*s));
  return out;
}

double consistent_rate(std::span<const Interaction> prefix, std::span<const double> relevances) {
  if (prefix.size() != relevances.size())
    throw ModelError("consistent_rate: prefix/relevance length mismatch");
  if (prefix.empty()) throw ModelError("consistent_rate: empty prefix");
  long long consistent = 0;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const bool ok = prefix[i].correct ? relevances[i] > 0.0 : relevances[i] < 0.0;
    consistent += ok ? 1 : 0;
  }
  return static_cast<double>(consistent) / static_cast<double>(prefix.size());
}

namespace {

double rate_from_flags(std::span<const unsigned char> correct, std::span<const double> relevances) {
  long long consistent = 0;
  for (std::size_t i = 0; i < correct.size(); ++i)
    consistent += (correct[i] ? relevances[i] > 0.0 : relevances[i] < 0.0) ? 1 : 0;
  return static_cast<double>(consistent) / static_cast<double>(correct.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int histogram_bin(double rate) {
  const int b = static_cast<int>(rate * 10.0);
  return std::clamp(b, 0, 9);
}

}  // namespace

double ConsistencyReport::median_rate(std::optional<PredictionGroup> group) const {
  std::vector<double> rates;
  for (const ConsistencyEntry& e : entries)
    if (!group.has_value() || e.group == *group) rates.push_back(e.consistent_rate);
  return median(std::move(rates));
}

ConsistencyReport consistency_study(const ModelParams& params, const Dataset& dataset,
                                    int prefix_len, int target_index, const LrpConfig& cfg,
                                    int num_threads) {
  const std::vector<SequenceExplanation> explanations =
      explain_prefixes(params, dataset, prefix_len, target_index, cfg, num_threads);

  ConsistencyReport report;
  report.num_evaluated = static_cast<long long>(explanations.size());
  for (const SequenceExplanation& ex : explanations) {
    const auto group = classify_prediction(ex.probability, ex.actual);
    if (!group.has_value()) {
      ++report.num_ties_excluded;
      continue;
    }
    if (*group == SequenceGroup::false_positive || *group == SequenceGroup::false_negative)
      continue;
    ++report.num_correct;
    ConsistencyEntry entry;
    entry.sequence_id = ex.sequence_id;
    entry.group = *group == SequenceGroup::correct_positive ? PredictionGroup::positive
                                                            : PredictionGroup::negative;
    entry.consistent_rate = rate_from_flags(ex.correct, ex.relevances);
    entry.relevances = ex.relevances;
    entry.correct = ex.correct;
    const int bin = histogram_bin(entry.consistent_rate);
    if (entry.group == PredictionGroup::positive) {
      ++report.num_positive;
      ++report.hist_positive[bin];
    } else {
      ++report.num_negative;
      ++report.hist_negative[bin];
    }
    report.entries.push_back(std::move(entry));
  }
  if (report.entries.empty()) throw DataError("consistency_study: no correctly predicted sequences");
  return report;
}

std::vector<int> deletion_order(std::span<const double> relevances, bool decreasing) {
  std::vector<int> order(relevances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (relevances[a] != relevances[b])
      return decreasing ? relevances[a] > relevances[b] : relevances[a] < relevances[b];
    return a < b;
  });
  return order;
}

const DeletionCurve* DeletionStudyResult::find(DeletionStrategy s, SequenceGroup g) const {
  for (const DeletionCurve& c : curves)
    if (c.strategy == s && c.group == g) return &c;
  return nullptr;
}

namespace {

// Re-run the shortened prefix from scratch and score the target question.
bool correct_after_deletion(const ModelParams& params, const InteractionSequence& full,
                            int prefix_len, std::span<const int> delete_first_k, int k,
                            int target_concept, bool actual) {
  std::vector<bool> deleted(prefix_len, false);
  for (int j = 0; j < k; ++j) deleted[delete_first_k[j]] = true;
  InteractionSequence shortened;
  shortened.learner_id = full.learner_id;
  for (int t = 0; t < prefix_len; ++t)
    if (!deleted[t]) shortened.steps.push_back(full.steps[t]);
  if (shortened.steps.empty()) return false;

  const ForwardTrace tr = forward_sequence(params, shortened);
  const double p = tr.prob[tr.length - 1][target_concept];
  return (p > 0.5) == actual;
}

}  // namespace

DeletionStudyResult deletion_study(const ModelParams& params, const Dataset& dataset,
                                   int prefix_len, int max_deletions, int num_random_repeats,
                                   std::uint64_t seed, const LrpConfig& cfg,
                                   DeletionOrderPolicy policy, int num_threads) {
  if (max_deletions < 0 || max_deletions >= prefix_len)
    throw ConfigError("max_deletions must be in [0, prefix_len)");
  if (num_random_repeats < 1) throw ConfigError("num_random_repeats must be >= 1");

  const std::vector<SequenceExplanation> explanations =
      explain_prefixes(params, dataset, prefix_len, prefix_len, cfg, num_threads);

  DeletionStudyResult result;

  struct Member {
    const SequenceExplanation* ex;
    const InteractionSequence* seq;
  };
  std::map<SequenceGroup, std::vector<Member>> groups;
  long long ties = 0;
  for (const SequenceExplanation& ex : explanations) {
    const auto g = classify_prediction(ex.probability, ex.actual);
    if (!g.has_value()) {
      ++ties;
      continue;
    }
    groups[*g].push_back({&ex, &dataset.sequences[ex.seq_index]});
  }
  if (ties > 0)
    result.notes.push_back(std::to_string(ties) + " sequence(s) at probability 0.5 excluded");

  const std::array<SequenceGroup, 4> all_groups = {
      SequenceGroup::correct_positive, SequenceGroup::correct_negative,
      SequenceGroup::false_positive, SequenceGroup::false_negative};

  Rng rng(seed);
  for (SequenceGroup g : all_groups) {
    auto it = groups.find(g);
    if (it == groups.end() || it->second.empty()) {
      result.notes.push_back("group " + to_string(g) + " empty, curve omitted");
      continue;
    }
    const std::vector<Member>& members = it->second;
    const int n = static_cast<int>(members.size());

    const bool positive_prediction =
        g == SequenceGroup::correct_positive || g == SequenceGroup::false_positive;
    const bool false_group =
        g == SequenceGroup::false_positive || g == SequenceGroup::false_negative;
    bool decreasing = true;
    if (policy == DeletionOrderPolicy::signed_by_prediction) decreasing = positive_prediction;
    else if (policy == DeletionOrderPolicy::signed_inverted_false)
      decreasing = positive_prediction != false_group;

    // Random permutations drawn up front, single RNG stream, fixed order.
    std::vector<std::vector<std::vector<int>>> perms(n);
    for (int i = 0; i < n; ++i) {
      perms[i].resize(num_random_repeats);
      for (int r = 0; r < num_random_repeats; ++r) {
        std::vector<int> perm(prefix_len);
        std::iota(perm.begin(), perm.end(), 0);
        shuffle(perm, rng);
        perms[i][r] = std::move(perm);
      }
    }

    std::vector<std::vector<long long>> ordered_hits(n), random_hits(n);
    std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) num_threads(num_threads > 0 ? num_threads \
                                                                       : omp_get_max_threads())
    for (int i = 0; i < n; ++i) {
      try {
        const Member& m = members[i];
        const std::vector<int> order = deletion_order(m.ex->relevances, decreasing);
        ordered_hits[i].assign(max_deletions + 1, 0);
        random_hits[i].assign(max_deletions + 1, 0);
        for (int k = 0; k <= max_deletions; ++k) {
          ordered_hits[i][k] = correct_after_deletion(params, *m.seq, prefix_len, order, k,
                                                      m.ex->target_concept, m.ex->actual)
                                   ? 1
                                   : 0;
          for (int r = 0; r < num_random_repeats; ++r)
            random_hits[i][k] += correct_after_deletion(params, *m.seq, prefix_len, perms[i][r], k,
                                                        m.ex->target_concept, m.ex->actual)
                                     ? 1
                                     : 0;
        }
      } catch (...) {
#pragma omp critical
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);

    DeletionCurve ordered{DeletionStrategy::relevance_ordered, g, {}, 1};
    DeletionCurve random{DeletionStrategy::random, g, {}, num_random_repeats};
    for (int k = 0; k <= max_deletions; ++k) {
      long long oh = 0, rh = 0;
      for (int i = 0; i < n; ++i) {
        oh += ordered_hits[i][k];
        rh += random_hits[i][k];
      }
      ordered.points.emplace_back(k, static_cast<double>(oh) / static_cast<double>(n));
      random.points.emplace_back(
          k, static_cast<double>(rh) / (static_cast<double>(n) * num_random_repeats));
    }
    result.curves.push_back(std::move(ordered));
    result.curves.push_back(std::move(random));
  }
  return result;
}

ConceptGraph aggregate_concept_pairs(const std::vector<std::tuple<int, int, double>>& pairs) {
  struct Acc {
    double sum_abs = 0.0;
    long long count = 0;
  };
  std::map<std::pair<int, int>, Acc> acc;
  for (const auto& [src, tgt, rel] : pairs) {
    if (src == tgt) continue;
    Acc& a = acc[{tgt, src}];
    a.sum_abs += std::abs(rel);
    a.count += 1;
  }

  ConceptGraph graph;
  if (acc.empty()) {
    graph.notes.push_back("no valid concept pairs");
    return graph;
  }
  for (const auto& [key, a] : acc) {
    ConceptEdge e;
    e.target = key.first;
    e.source = key.second;
    e.mean_abs_relevance = a.sum_abs / static_cast<double>(a.count);
    e.support = a.count;
    graph.edges.push_back(e);
  }
  // Strongest incoming edge per target; ties resolved toward the smaller
  // source id by the (target, source) map order.
  std::map<int, ConceptEdge*> best;
  for (ConceptEdge& e : graph.edges) {
    auto it = best.find(e.target);
    if (it == best.end() || e.mean_abs_relevance > it->second->mean_abs_relevance)
      best[e.target] = &e;
  }
  for (auto& [tgt, edge] : best) edge->argmax_for_target = true;
  return graph;
}

ConceptGraph concept_graph(const ModelParams& params, const Dataset& dataset, int prefix_len,
                           const LrpConfig& cfg, int num_threads) {
  const std::vector<SequenceExplanation> explanations =
      explain_prefixes(params, dataset, prefix_len, prefix_len, cfg, num_threads);

  std::vector<std::tuple<int, int, double>> pairs;
  for (const SequenceExplanation& ex : explanations) {
    const auto g = classify_prediction(ex.probability, ex.actual);
    if (!g.has_value()) continue;
    if (*g != SequenceGroup::correct_positive && *g != SequenceGroup::correct_negative) continue;
    const InteractionSequence& seq = dataset.sequences[ex.seq_index];
    for (int t = 0; t < prefix_len; ++t)
      pairs.emplace_back(seq.steps[t].concept_id, ex.target_concept, ex.relevances[t]);
  }
  return aggregate_concept_pairs(pairs);
}

void export_graph(const ConceptGraph& graph, GraphFormat format,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (format == GraphFormat::dot) {
    out << "digraph concepts {\n";
    for (const ConceptEdge& e : graph.edges) {
      out << "  c" << e.source << " -> c" << e.target << " [label=\""
          << format_double(e.mean_abs_relevance) << "\", support=" << e.support;
      if (e.argmax_for_target) out << ", style=bold";
      out << "];\n";
    }
    out << "}\n";
  } else {
    nlohmann::json j;
    j["edges"] = nlohmann::json::array();
    for (const ConceptEdge& e : graph.edges) {
      nlohmann::json je;
      je["source"] = e.source;
      je["target"] = e.target;
      je["mean_abs_relevance"] = e.mean_abs_relevance;
      je["support"] = e.support;
      je["argmax_for_target"] = e.argmax_for_target;
      j["edges"].push_back(std::move(je));
    }
    j["notes"] = graph.notes;
    out << j.dump(1) << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ConceptGraph import_graph_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed graph file: ") + e.what());
  }
  ConceptGraph g;
  for (const auto& je : j.at("edges")) {
    ConceptEdge e;
    e.source = je.at("source").get<int>();
    e.target = je.at("target").get<int>();
    e.mean_abs_relevance = je.at("mean_abs_relevance").get<double>();
    e.support = je.at("support").get<long long>();
    e.argmax_for_target = je.at("argmax_for_target").get<bool>();
    g.edges.push_back(e);
  }
  if (j.contains("notes"))
    for (const auto& n : j["notes"]) g.notes.push_back(n.get<std::string>());
  return g;
}

void write_consistency_csv(const ConsistencyReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "sequence_id,group,consistent_rate\n";
  for (const ConsistencyEntry& e : report.entries)
    out << e.sequence_id << ',' << to_string(e.group) << ',' << format_double(e.consistent_rate)
        << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_consistency_histogram_json(const ConsistencyReport& report,
                                      const std::filesystem::path& path) {
  nlohmann::json j;
  j["bin_width"] = 0.1;
  j["positive"] = report.hist_positive;
  j["negative"] = report.hist_negative;
  j["num_evaluated"] = report.num_evaluated;
  j["num_correct"] = report.num_correct;
  j["num_positive"] = report.num_positive;
  j["num_negative"] = report.num_negative;
  j["num_ties_excluded"] = report.num_ties_excluded;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

void write_deletion_csv(const DeletionStudyResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "strategy,group,num_deleted,accuracy\n";
  for (const DeletionCurve& c : result.curves)
    for (const auto& [k, acc] : c.points)
      out << to_string(c.strategy) << ',' << to_string(c.group) << ',' << k << ','
          << format_double(acc) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dkt
