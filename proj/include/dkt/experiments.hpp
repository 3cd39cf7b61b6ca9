#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dkt/data.hpp"
#include "dkt/lrp.hpp"
#include "dkt/model.hpp"

namespace dkt {

enum class PredictionGroup { positive, negative };

enum class SequenceGroup { correct_positive, correct_negative, false_positive, false_negative };

std::string to_string(PredictionGroup g);
std::string to_string(SequenceGroup g);

// Group membership of one prediction: positive above 0.5, negative below;
// exactly 0.5 belongs to neither.
std::optional<SequenceGroup> classify_prediction(double probability, bool actual);

// Prediction for the question at target_index from the first prefix_len
// steps, plus per-question relevance of that prediction.
struct SequenceExplanation {
  int seq_index = 0;
  std::string sequence_id;
  double probability = 0.0;
  bool actual = false;
  int target_concept = 0;
  std::vector<double> relevances;        // per prefix question
  std::vector<unsigned char> correct;    // per prefix question
};

// The shared per-sequence sweep behind all three studies. Sequences shorter
// than target_index+1 are skipped. The serial version is the reference; the
// OpenMP version must match it bitwise.
std::vector<SequenceExplanation> explain_prefixes(const ModelParams& params, const Dataset& dataset,
                                                  int prefix_len, int target_index,
                                                  const LrpConfig& cfg, int num_threads = 0);
std::vector<SequenceExplanation> explain_prefixes_serial(const ModelParams& params,
                                                         const Dataset& dataset, int prefix_len,
                                                         int target_index, const LrpConfig& cfg);

// Fraction of prefix questions whose relevance sign agrees with the answer:
// correct answers need relevance > 0, incorrect ones < 0; zero relevance
// counts as inconsistent.
double consistent_rate(std::span<const Interaction> prefix, std::span<const double> relevances);

struct ConsistencyEntry {
  std::string sequence_id;
  PredictionGroup group = PredictionGroup::positive;
  double consistent_rate = 0.0;
  std::vector<double> relevances;
  std::vector<unsigned char> correct;
};

struct ConsistencyReport {
  std::vector<ConsistencyEntry> entries;  // correctly predicted sequences only
  std::array<long long, 10> hist_positive{};  // bin width 0.1 over [0,1]
  std::array<long long, 10> hist_negative{};
  long long num_evaluated = 0;
  long long num_correct = 0;
  long long num_positive = 0;
  long long num_negative = 0;
  long long num_ties_excluded = 0;  // predictions exactly at 0.5

  double median_rate(std::optional<PredictionGroup> group = std::nullopt) const;
};

ConsistencyReport consistency_study(const ModelParams& params, const Dataset& dataset,
                                    int prefix_len, int target_index, const LrpConfig& cfg,
                                    int num_threads = 0);

enum class DeletionStrategy { relevance_ordered, random };

// How per-group relevance values translate into a deletion order.
//
// prediction_support removes the strongest supporters of the prediction
// first. With the initial relevance fixed to the (positive) output
// probability, the stabilized output-layer denominator is negative whenever
// the prediction is below 0.5, so supporters of a negative prediction carry
// positive relevance; decreasing order therefore removes supporters first
// for both prediction signs. signed_by_prediction instead orders by the
// prediction sign alone (decreasing relevance for positive predictions,
// increasing for negative) and signed_inverted_false keeps that ordering
// for the correctly predicted groups while flipping the false ones.
enum class DeletionOrderPolicy { prediction_support, signed_by_prediction, signed_inverted_false };

std::string to_string(DeletionStrategy s);

struct DeletionCurve {
  DeletionStrategy strategy = DeletionStrategy::relevance_ordered;
  SequenceGroup group = SequenceGroup::correct_positive;
  std::vector<std::pair<int, double>> points;  // (num_deleted, accuracy)
  int num_repeats = 1;
};

struct DeletionStudyResult {
  std::vector<DeletionCurve> curves;
  std::vector<std::string> notes;  // skipped groups, excluded ties

  const DeletionCurve* find(DeletionStrategy s, SequenceGroup g) const;
};

// Deletion positions for one sequence: indices sorted by relevance
// (decreasing or increasing), ties broken by earlier timestep.
std::vector<int> deletion_order(std::span<const double> relevances, bool decreasing);

DeletionStudyResult deletion_study(
    const ModelParams& params, const Dataset& dataset, int prefix_len, int max_deletions,
    int num_random_repeats, std::uint64_t seed, const LrpConfig& cfg,
    DeletionOrderPolicy policy = DeletionOrderPolicy::prediction_support, int num_threads = 0);

struct ConceptEdge {
  int source = 0;
  int target = 0;
  double mean_abs_relevance = 0.0;
  long long support = 0;
  bool argmax_for_target = false;
};

struct ConceptGraph {
  std::vector<ConceptEdge> edges;  // sorted by (target, source)
  std::vector<std::string> notes;
};

// Aggregation kernel: (source concept, target concept, relevance) samples to
// mean-|relevance| edges, self-loops dropped, argmax edge flagged per target.
ConceptGraph aggregate_concept_pairs(const std::vector<std::tuple<int, int, double>>& pairs);

ConceptGraph concept_graph(const ModelParams& params, const Dataset& dataset, int prefix_len,
                           const LrpConfig& cfg, int num_threads = 0);

enum class GraphFormat { dot, json };

void export_graph(const ConceptGraph& graph, GraphFormat format, const std::filesystem::path& path);
ConceptGraph import_graph_json(const std::filesystem::path& path);

// Report writers (external interfaces of this module).
void write_consistency_csv(const ConsistencyReport& report, const std::filesystem::path& path);
void write_consistency_histogram_json(const ConsistencyReport& report,
                                      const std::filesystem::path& path);
void write_deletion_csv(const DeletionStudyResult& result, const std::filesystem::path& path);

}  // namespace dkt
