#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dkt/model.hpp"

namespace dkt {

// One row of an ASSISTments-style interaction log. skill_id may be empty
// (unlabeled) or hold several labels separated by ',' or ';'.
struct RawRecord {
  long long order_id = 0;
  std::string user_id;
  std::string problem_id;
  std::string skill_id;
  int correct = 0;       // {0,1}
  long long row = 0;     // source position, tie-break for ordering
};

struct ConceptVocab {
  std::vector<std::string> skills;                    // index -> label
  std::unordered_map<std::string, int> index_of;      // label -> index

  int size() const { return static_cast<int>(skills.size()); }
  int require(const std::string& skill) const;        // throws DataError on unknown label
  static ConceptVocab from_labels(std::vector<std::string> sorted_labels);
};

struct Dataset {
  std::vector<InteractionSequence> sequences;
  ConceptVocab vocab;

  long long num_records() const;
  long long num_questions() const;  // distinct question ids
  int num_concepts() const { return vocab.size(); }
  long long num_students() const { return static_cast<long long>(sequences.size()); }
};

// Expects a header row with columns (any order, case-insensitive):
// order_id, user_id, problem_id, skill_id, correct.
std::vector<RawRecord> load_csv(const std::filesystem::path& path);

void write_records_csv(const std::vector<RawRecord>& records, const std::filesystem::path& path);

// Filtering and grouping: drops unlabeled records, expands multi-skill rows,
// groups by user ordered by (order_id, row), drops exact-duplicate sequences
// and sequences shorter than min_sequence_length, then builds a dense
// concept vocabulary (or maps against fixed_vocab when given).
Dataset build_dataset(const std::vector<RawRecord>& records, int min_sequence_length,
                      const ConceptVocab* fixed_vocab = nullptr);

// Inverse of build_dataset's representation, for round-trips and export.
std::vector<RawRecord> to_records(const Dataset& ds);

// Seeded sequence-level split; the two sides are disjoint and exhaustive and
// preserve the original relative order.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                          std::uint64_t seed);

// Two-state learner simulator used as a ground-truth generator. Concepts in
// the same group share one latent mastery state, which makes their outcome
// statistics coupled; an empty concept_groups means all concepts independent.
struct BktParams {
  int num_concepts = 5;
  double p_init = 0.3;
  double p_learn = 0.2;
  double p_slip = 0.1;
  double p_guess = 0.2;
  std::vector<int> concept_groups;  // size num_concepts or empty
  int num_students = 2000;
  int questions_per_student = 50;
  int problems_per_concept = 20;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  int group_of(int concept_id) const;
  int num_groups() const;
};

std::vector<RawRecord> generate_synthetic_records(const BktParams& params);
Dataset generate_synthetic(const BktParams& params);

std::string dataset_summary_json(const Dataset& ds);  // {num_records, num_questions, num_concepts, num_students}

}  // namespace dkt
