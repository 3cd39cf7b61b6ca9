#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dkt/error.hpp"
#include "dkt/experiments.hpp"
#include "dkt/train.hpp"
#include "test_util.hpp"

using namespace dkt;

namespace {

// A small trained model over a coupled synthetic dataset, shared by the
// study tests. Concepts 0 and 1 share a mastery group.
struct TrainedFixture {
  Dataset train_ds, test_ds;
  ModelParams params;

  TrainedFixture() {
    BktParams bkt;
    bkt.num_concepts = 3;
    bkt.concept_groups = {0, 0, 1};
    bkt.num_students = 400;
    bkt.questions_per_student = 20;
    bkt.p_init = 0.25;
    bkt.p_learn = 0.2;
    bkt.seed = 17;
    const Dataset ds = generate_synthetic(bkt);
    auto [train_split, test_split] = split_dataset(ds, 0.8, 3);
    train_ds = std::move(train_split);
    test_ds = std::move(test_split);

    TrainConfig tc;
    tc.iterations = 400;
    tc.batch_size = 20;
    tc.dropout_rate = 0.3;
    tc.seed = 5;
    params = train(train_ds, ModelConfig::make(3, 16, 11), tc).params;
  }
};

const TrainedFixture& fixture() {
  static TrainedFixture f;
  return f;
}

}  // namespace

TEST_CASE("consistent_rate definition") {
  std::vector<Interaction> prefix;
  for (int i = 0; i < 4; ++i) prefix.push_back({"q", 0, true});

  SUBCASE("all correct answers with positive relevance") {
    const std::vector<double> rel{0.1, 0.2, 0.3, 0.4};
    CHECK(consistent_rate(prefix, rel) == 1.0);
  }
  SUBCASE("all correct answers with negative relevance") {
    const std::vector<double> rel{-0.1, -0.2, -0.3, -0.4};
    CHECK(consistent_rate(prefix, rel) == 0.0);
  }
  SUBCASE("zero relevance counts as inconsistent") {
    const std::vector<double> rel{0.1, 0.0, 0.2, 0.3};
    CHECK(consistent_rate(prefix, rel) == 0.75);
  }
  SUBCASE("incorrect answers need negative relevance") {
    std::vector<Interaction> mixed = prefix;
    mixed[1].correct = false;
    mixed[3].correct = false;
    const std::vector<double> rel{0.5, -0.5, 0.5, 0.5};
    CHECK(consistent_rate(mixed, rel) == 0.75);
  }
  SUBCASE("twelve of fourteen") {
    std::vector<Interaction> p14(14, {"q", 0, true});
    std::vector<double> rel(14, 1.0);
    rel[3] = -1.0;
    rel[7] = 0.0;
    CHECK(consistent_rate(p14, rel) == doctest::Approx(12.0 / 14.0).epsilon(1e-12));
  }
  SUBCASE("length mismatch") {
    const std::vector<double> rel{0.1};
    CHECK_THROWS_AS(consistent_rate(prefix, rel), ModelError);
  }
}

TEST_CASE("classify_prediction groups") {
  CHECK(classify_prediction(0.8, true) == SequenceGroup::correct_positive);
  CHECK(classify_prediction(0.2, false) == SequenceGroup::correct_negative);
  CHECK(classify_prediction(0.8, false) == SequenceGroup::false_positive);
  CHECK(classify_prediction(0.2, true) == SequenceGroup::false_negative);
  CHECK_FALSE(classify_prediction(0.5, true).has_value());
}

TEST_CASE("explain_prefixes serial and parallel agree bitwise") {
  const TrainedFixture& f = fixture();
  LrpConfig cfg;
  const auto serial = explain_prefixes_serial(f.params, f.test_ds, 10, 10, cfg);
  const auto parallel = explain_prefixes(f.params, f.test_ds, 10, 10, cfg, 4);
  REQUIRE(serial.size() == parallel.size());
  REQUIRE(!serial.empty());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].seq_index == parallel[i].seq_index);
    CHECK(serial[i].probability == parallel[i].probability);
    CHECK(serial[i].relevances == parallel[i].relevances);
  }
}

TEST_CASE("zero model has only ties and no eligible sequences") {
  const TrainedFixture& f = fixture();
  const ModelParams zero = ModelParams::zeros(ModelConfig::make(3, 16));
  LrpConfig cfg;
  CHECK_THROWS_AS(consistency_study(zero, f.test_ds, 10, 10, cfg), DataError);
}

TEST_CASE("consistency_study on the trained fixture") {
  const TrainedFixture& f = fixture();
  LrpConfig cfg;
  const ConsistencyReport report = consistency_study(f.params, f.test_ds, 10, 10, cfg);

  CHECK(report.num_evaluated == static_cast<long long>(f.test_ds.sequences.size()));
  CHECK(report.num_correct == report.num_positive + report.num_negative);
  CHECK(report.num_correct == static_cast<long long>(report.entries.size()));
  CHECK(report.num_correct + report.num_ties_excluded <= report.num_evaluated);

  long long pos_bins = 0, neg_bins = 0;
  for (long long b : report.hist_positive) pos_bins += b;
  for (long long b : report.hist_negative) neg_bins += b;
  CHECK(pos_bins == report.num_positive);
  CHECK(neg_bins == report.num_negative);

  for (const ConsistencyEntry& e : report.entries) {
    CHECK(e.consistent_rate >= 0.0);
    CHECK(e.consistent_rate <= 1.0);
    REQUIRE(e.relevances.size() == 10);
    REQUIRE(e.correct.size() == 10);
    // stored raw data reproduces the rate
    std::vector<Interaction> prefix;
    for (int t = 0; t < 10; ++t) prefix.push_back({"q", 0, e.correct[t] != 0});
    CHECK(consistent_rate(prefix, e.relevances) == e.consistent_rate);
  }

  SUBCASE("observed rates beat sign-shuffled rates in the median") {
    Rng rng(77);
    std::vector<double> shuffled_medians;
    for (int shuffle = 0; shuffle < 50; ++shuffle) {
      std::vector<double> rates;
      for (const ConsistencyEntry& e : report.entries) {
        std::vector<double> rel = e.relevances;
        dkt::shuffle(rel, rng);
        std::vector<Interaction> prefix;
        for (int t = 0; t < 10; ++t) prefix.push_back({"q", 0, e.correct[t] != 0});
        rates.push_back(consistent_rate(prefix, rel));
      }
      std::sort(rates.begin(), rates.end());
      shuffled_medians.push_back(0.5 * (rates[rates.size() / 2 - 1] + rates[rates.size() / 2]));
    }
    double baseline = 0.0;
    for (double m : shuffled_medians) baseline += m;
    baseline /= static_cast<double>(shuffled_medians.size());
    CHECK(report.median_rate() > baseline);
  }
}

TEST_CASE("deletion_order is a sort oracle") {
  const std::vector<double> rel{0.3, -0.1, 0.9, 0.3, 0.0};
  SUBCASE("decreasing") {
    const auto order = deletion_order(rel, true);
    CHECK(order == std::vector<int>{2, 0, 3, 4, 1});  // 0.9, 0.3, 0.3 (tie by step), 0.0, -0.1
  }
  SUBCASE("increasing") {
    const auto order = deletion_order(rel, false);
    CHECK(order == std::vector<int>{1, 4, 0, 3, 2});
  }
  SUBCASE("matches std::sort on random input") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> values(12);
      for (double& v : values) v = uniform_real(rng, -1.0, 1.0);
      const auto order = deletion_order(values, true);
      std::vector<double> sorted;
      for (int idx : order) sorted.push_back(values[idx]);
      std::vector<double> expected = values;
      std::sort(expected.begin(), expected.end(), std::greater<double>());
      CHECK(sorted == expected);
    }
  }
}

TEST_CASE("deletion_study on the trained fixture") {
  const TrainedFixture& f = fixture();
  LrpConfig cfg;
  const DeletionStudyResult result =
      deletion_study(f.params, f.test_ds, 10, 4, 5, 123, cfg);

  SUBCASE("k=0 anchors at the group-defining accuracy") {
    for (const DeletionCurve& c : result.curves) {
      REQUIRE(!c.points.empty());
      CHECK(c.points.front().first == 0);
      const bool correct_group = c.group == SequenceGroup::correct_positive ||
                                 c.group == SequenceGroup::correct_negative;
      CHECK(c.points.front().second == (correct_group ? 1.0 : 0.0));
      CHECK(std::is_sorted(c.points.begin(), c.points.end()));
      for (const auto& [k, acc] : c.points) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
      }
    }
  }
  SUBCASE("fixed seed reproduces the random curves") {
    const DeletionStudyResult again =
        deletion_study(f.params, f.test_ds, 10, 4, 5, 123, cfg);
    REQUIRE(again.curves.size() == result.curves.size());
    for (std::size_t i = 0; i < result.curves.size(); ++i)
      CHECK(again.curves[i].points == result.curves[i].points);
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(deletion_study(f.params, f.test_ds, 10, 10, 5, 1, cfg), ConfigError);
    CHECK_THROWS_AS(deletion_study(f.params, f.test_ds, 10, 2, 0, 1, cfg), ConfigError);
  }
}

TEST_CASE("deletion_study omits empty groups with a note") {
  // A saturated model predicts ~1 for everything: only the groups with
  // actual=1 (correct_positive) and actual=0 (false_positive) appear.
  const auto cfg = ModelConfig::make(2, 2);
  ModelParams p = ModelParams::zeros(cfg);
  p.b_y.assign(2, 30.0);
  BktParams bkt;
  bkt.num_concepts = 2;
  bkt.num_students = 10;
  bkt.questions_per_student = 6;
  bkt.seed = 8;
  const Dataset ds = generate_synthetic(bkt);
  LrpConfig lrp_cfg;
  const DeletionStudyResult result = deletion_study(p, ds, 4, 2, 3, 9, lrp_cfg);
  CHECK(result.find(DeletionStrategy::relevance_ordered, SequenceGroup::correct_negative) ==
        nullptr);
  CHECK(result.find(DeletionStrategy::relevance_ordered, SequenceGroup::false_negative) == nullptr);
  bool noted = false;
  for (const std::string& n : result.notes)
    noted = noted || n.find("correct_negative") != std::string::npos;
  CHECK(noted);
}

TEST_CASE("aggregate_concept_pairs arithmetic") {
  SUBCASE("mean of absolute relevances with support") {
    const ConceptGraph g = aggregate_concept_pairs({{0, 1, 0.2}, {0, 1, -0.4}});
    REQUIRE(g.edges.size() == 1);
    CHECK(g.edges[0].source == 0);
    CHECK(g.edges[0].target == 1);
    CHECK(g.edges[0].mean_abs_relevance == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(g.edges[0].support == 2);
    CHECK(g.edges[0].argmax_for_target);
  }
  SUBCASE("self loops are dropped") {
    const ConceptGraph g = aggregate_concept_pairs({{2, 2, 0.9}});
    CHECK(g.edges.empty());
    CHECK(!g.notes.empty());
  }
  SUBCASE("argmax per target") {
    const ConceptGraph g =
        aggregate_concept_pairs({{0, 2, 0.1}, {1, 2, 0.5}, {0, 3, 0.7}, {1, 3, 0.2}});
    REQUIRE(g.edges.size() == 4);
    for (const ConceptEdge& e : g.edges) {
      const bool expected = (e.target == 2 && e.source == 1) || (e.target == 3 && e.source == 0);
      CHECK(e.argmax_for_target == expected);
    }
  }
}

TEST_CASE("concept_graph on the trained fixture") {
  const TrainedFixture& f = fixture();
  LrpConfig cfg;
  const ConceptGraph graph = concept_graph(f.params, f.test_ds, 10, cfg);
  REQUIRE(!graph.edges.empty());

  SUBCASE("edges point at predicted concepts and skip self loops") {
    for (const ConceptEdge& e : graph.edges) {
      CHECK(e.source != e.target);
      CHECK(e.support >= 1);
      CHECK(e.mean_abs_relevance >= 0.0);
    }
  }
  SUBCASE("the coupled concept is the strongest source for its partner") {
    // concepts 0 and 1 share a mastery group in the fixture generator
    const int c0 = f.test_ds.vocab.require("c0");
    const int c1 = f.test_ds.vocab.require("c1");
    for (const ConceptEdge& e : graph.edges) {
      if (e.target == c0 && e.argmax_for_target) CHECK(e.source == c1);
      if (e.target == c1 && e.argmax_for_target) CHECK(e.source == c0);
    }
  }
}

TEST_CASE("graph export and import") {
  testutil::TempDir dir("graph");
  ConceptGraph g;
  g.edges.push_back({0, 1, 0.125, 4, true});
  g.edges.push_back({2, 1, 0.0625, 2, false});

  SUBCASE("json round trip preserves all fields") {
    const auto path = dir.path() / "graph.json";
    export_graph(g, GraphFormat::json, path);
    const ConceptGraph back = import_graph_json(path);
    REQUIRE(back.edges.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back.edges[i].source == g.edges[i].source);
      CHECK(back.edges[i].target == g.edges[i].target);
      CHECK(back.edges[i].mean_abs_relevance == g.edges[i].mean_abs_relevance);
      CHECK(back.edges[i].support == g.edges[i].support);
      CHECK(back.edges[i].argmax_for_target == g.edges[i].argmax_for_target);
    }
  }
  SUBCASE("dot output") {
    const auto path = dir.path() / "graph.dot";
    export_graph(g, GraphFormat::dot, path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("digraph concepts {") == 0);
    CHECK(text.find("c0 -> c1 [label=\"0.125\", support=4, style=bold];") != std::string::npos);
    CHECK(text.find("c2 -> c1 [label=\"0.0625\", support=2];") != std::string::npos);
    CHECK(text.back() == '\n');
  }
  SUBCASE("empty graph is still a valid digraph") {
    const auto path = dir.path() / "empty.dot";
    export_graph(ConceptGraph{}, GraphFormat::dot, path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text == "digraph concepts {\n}\n");
  }
}

TEST_CASE("report writers") {
  testutil::TempDir dir("reports");
  ConsistencyReport report;
  ConsistencyEntry e;
  e.sequence_id = "u1";
  e.group = PredictionGroup::positive;
  e.consistent_rate = 0.875;
  report.entries.push_back(e);
  report.hist_positive[8] = 1;
  report.num_evaluated = 1;
  report.num_correct = 1;
  report.num_positive = 1;

  write_consistency_csv(report, dir.path() / "c.csv");
  std::ifstream in(dir.path() / "c.csv");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "sequence_id,group,consistent_rate\nu1,positive,0.875\n");

  write_consistency_histogram_json(report, dir.path() / "h.json");
  std::ifstream jin(dir.path() / "h.json");
  std::string jtext((std::istreambuf_iterator<char>(jin)), std::istreambuf_iterator<char>());
  CHECK(jtext.find("\"num_positive\": 1") != std::string::npos);

  DeletionStudyResult dr;
  dr.curves.push_back({DeletionStrategy::random, SequenceGroup::correct_positive, {{0, 1.0}, {1, 0.75}}, 5});
  write_deletion_csv(dr, dir.path() / "d.csv");
  std::ifstream din(dir.path() / "d.csv");
  std::string dtext((std::istreambuf_iterator<char>(din)), std::istreambuf_iterator<char>());
  CHECK(dtext ==
        "strategy,group,num_deleted,accuracy\n"
        "random,correct_positive,0,1\n"
        "random,correct_positive,1,0.75\n");
}
