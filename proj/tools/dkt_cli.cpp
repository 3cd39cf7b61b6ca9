// Command-line entry point: synthesize data, train, evaluate, explain
// predictions and run the validation studies.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dkt/data.hpp"
#include "dkt/error.hpp"
#include "dkt/experiments.hpp"
#include "dkt/format.hpp"
#include "dkt/lrp.hpp"
#include "dkt/model.hpp"
#include "dkt/model_io.hpp"
#include "dkt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;
  bool verbose = false;
};

// All outputs stay inside the configured output directory.
fs::path out_path(const GlobalOpts& g, const std::string& name) {
  fs::path p(name);
  if (p.is_absolute()) throw dkt::ConfigError("output file names must be relative: " + name);
  fs::create_directories(g.output_dir);
  return fs::path(g.output_dir) / p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw dkt::IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw dkt::IoError("write failed: " + path.string());
}

void save_vocab(const dkt::ConceptVocab& vocab, const fs::path& path) {
  json j;
  j["skills"] = vocab.skills;
  write_text(path, j.dump(1) + "\n");
}

dkt::ConceptVocab load_vocab(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw dkt::IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw dkt::DataError(std::string("malformed vocab file: ") + e.what());
  }
  std::vector<std::string> skills;
  for (const auto& s : j.at("skills")) skills.push_back(s.get<std::string>());
  return dkt::ConceptVocab::from_labels(std::move(skills));
}

std::string metrics_json(const dkt::EvalMetrics& m) {
  json j;
  j["acc"] = m.acc;
  j["auc"] = m.auc;
  j["loss"] = m.loss;
  j["num_predictions"] = m.num_predictions;
  j["one_class_flag"] = m.one_class;
  return j.dump(1) + "\n";
}

std::vector<int> parse_group_list(const std::string& spec) {
  std::vector<int> groups;
  if (spec.empty()) return groups;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      groups.push_back(std::stoi(cur));
      cur.clear();
    }
  };
  for (char c : spec) {
    if (c == ',') flush();
    else cur.push_back(c);
  }
  flush();
  return groups;
}

// "1,2,3" or "1..5" (inclusive).
std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
  std::vector<std::uint64_t> seeds;
  const auto range_pos = spec.find("..");
  if (range_pos != std::string::npos) {
    const std::uint64_t a = std::stoull(spec.substr(0, range_pos));
    const std::uint64_t b = std::stoull(spec.substr(range_pos + 2));
    if (b < a) throw dkt::ConfigError("invalid seed range: " + spec);
    for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
    return seeds;
  }
  std::string cur;
  for (char c : spec + ",") {
    if (c == ',') {
      if (!cur.empty()) seeds.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (seeds.empty()) throw dkt::ConfigError("empty seed list");
  return seeds;
}

int resolve_concept(const std::string& token, const dkt::ConceptVocab* vocab, int num_concepts) {
  if (vocab != nullptr && vocab->size() > 0) return vocab->require(token);
  int idx = 0;
  try {
    idx = std::stoi(token);
  } catch (const std::exception&) {
    throw dkt::DataError("unknown concept: '" + token + "' (no vocabulary loaded)");
  }
  if (idx < 0 || idx >= num_concepts)
    throw dkt::DataError("concept index " + std::to_string(idx) + " out of range [0, " +
                         std::to_string(num_concepts) + ")");
  return idx;
}

// "concept:0,concept:1,..." -> interaction sequence.
dkt::InteractionSequence parse_interactions(const std::string& spec,
                                            const dkt::ConceptVocab* vocab, int num_concepts) {
  dkt::InteractionSequence seq;
  seq.learner_id = "cli";
  std::string cur;
  int step = 0;
  auto flush = [&] {
    if (cur.empty()) return;
    const auto colon = cur.rfind(':');
    if (colon == std::string::npos || colon + 2 != cur.size() ||
        (cur[colon + 1] != '0' && cur[colon + 1] != '1'))
      throw dkt::ConfigError("bad interaction token '" + cur + "', expected CONCEPT:0 or CONCEPT:1");
    dkt::Interaction it;
    it.question_id = "q" + std::to_string(++step);
    it.concept_id = resolve_concept(cur.substr(0, colon), vocab, num_concepts);
    it.correct = cur[colon + 1] == '1';
    seq.steps.push_back(std::move(it));
    cur.clear();
  };
  for (char c : spec + ",") {
    if (c == ',') flush();
    else if (!std::isspace(static_cast<unsigned char>(c))) cur.push_back(c);
  }
  if (seq.steps.empty()) throw dkt::ConfigError("empty interaction sequence");
  return seq;
}

struct ModelBundle {
  dkt::ModelParams params;
  dkt::ModelConfig config;
  dkt::ConceptVocab vocab;  // may be empty
};

ModelBundle load_bundle(const std::string& model_path, const std::string& vocab_path) {
  auto [params, config] = dkt::load_model(model_path);
  ModelBundle b{std::move(params), config, {}};
  if (!vocab_path.empty()) {
    b.vocab = load_vocab(vocab_path);
    if (b.vocab.size() != config.num_concepts)
      throw dkt::DataError("vocabulary size " + std::to_string(b.vocab.size()) +
                           " does not match model num_concepts " +
                           std::to_string(config.num_concepts));
  }
  return b;
}

dkt::Dataset load_dataset_for_model(const std::string& data_path, const ModelBundle& bundle,
                                    int min_sequence_length) {
  const auto records = dkt::load_csv(data_path);
  if (bundle.vocab.size() > 0)
    return dkt::build_dataset(records, min_sequence_length, &bundle.vocab);
  return dkt::build_dataset(records, min_sequence_length);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dkt - LSTM knowledge tracing with relevance-propagation explanations"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from a TOML-like config file; flags win");

  GlobalOpts g;
  app.add_option("--output", g.output_dir, "Output directory for all written files")
      ->envname("DKT_OUTPUT")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Seed for every random choice of the command")
      ->envname("DKT_SEED")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "OpenMP threads (0 = library default)")
      ->envname("DKT_THREADS")
      ->capture_default_str();
  app.add_flag("--verbose", g.verbose, "Chattier progress output")->envname("DKT_VERBOSE");

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction log");
  dkt::BktParams bkt;
  std::string groups_spec;
  std::string synth_out = "synthetic.csv";
  synth->add_option("--students", bkt.num_students, "")->capture_default_str();
  synth->add_option("--questions", bkt.questions_per_student, "Questions per student")
      ->capture_default_str();
  synth->add_option("--concepts", bkt.num_concepts, "")->capture_default_str();
  synth->add_option("--p-init", bkt.p_init, "")->capture_default_str();
  synth->add_option("--p-learn", bkt.p_learn, "")->capture_default_str();
  synth->add_option("--p-slip", bkt.p_slip, "")->capture_default_str();
  synth->add_option("--p-guess", bkt.p_guess, "")->capture_default_str();
  synth->add_option("--problems-per-concept", bkt.problems_per_concept, "")->capture_default_str();
  synth->add_option("--groups", groups_spec,
                    "Comma list mapping each concept to a shared mastery group");
  synth->add_option("--out", synth_out, "CSV file name")->capture_default_str();
  synth->callback([&] {
    bkt.seed = g.seed;
    bkt.concept_groups = parse_group_list(groups_spec);
    bkt.validate();
    const auto records = dkt::generate_synthetic_records(bkt);
    const fs::path path = out_path(g, synth_out);
    dkt::write_records_csv(records, path);
    std::cout << "wrote " << records.size() << " records for " << bkt.num_students
              << " students to " << path.string() << "\n";
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train a model from an interaction log");
  std::string train_data;
  std::string seeds_spec;
  std::string model_out = "model.json";
  int hidden_size = 64;
  int min_seq_len = 2;
  double train_fraction = 0.8;
  dkt::TrainConfig tc;
  train_cmd->add_option("--data", train_data, "Interaction CSV")->required();
  train_cmd->add_option("--hidden", hidden_size, "Hidden state size")->capture_default_str();
  train_cmd->add_option("--iterations", tc.iterations, "Minibatch updates")->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size, "")->capture_default_str();
  train_cmd->add_option("--learning-rate", tc.learning_rate, "")->capture_default_str();
  train_cmd->add_option("--dropout", tc.dropout_rate, "Dropout rate on the output-layer input")
      ->capture_default_str();
  train_cmd->add_option("--max-seq-len", tc.max_sequence_length, "Chunk longer sequences")
      ->capture_default_str();
  train_cmd->add_option("--clip-norm", tc.clip_norm, "Global gradient-norm clip")
      ->capture_default_str();
  train_cmd->add_option("--min-seq-len", min_seq_len, "Drop shorter sequences")
      ->capture_default_str();
  train_cmd->add_option("--train-fraction", train_fraction, "")->capture_default_str();
  train_cmd->add_option("--seeds", seeds_spec, "Seed sweep, e.g. 1,2,3 or 1..10");
  train_cmd->add_option("--model-out", model_out, "Model file name")->capture_default_str();
  train_cmd->callback([&] {
    tc.num_threads = g.threads;
    tc.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw dkt::ConfigError("train_fraction must be in (0, 1)");

    const auto records = dkt::load_csv(train_data);
    const dkt::Dataset dataset = dkt::build_dataset(records, min_seq_len);
    if (g.verbose) std::cout << dkt::dataset_summary_json(dataset) << "\n";

    std::vector<std::uint64_t> seeds =
        seeds_spec.empty() ? std::vector<std::uint64_t>{g.seed} : parse_seed_list(seeds_spec);
    const bool sweep = seeds.size() > 1;

    const fs::path vocab_path = out_path(g, "vocab.json");
    save_vocab(dataset.vocab, vocab_path);

    for (std::uint64_t seed : seeds) {
      auto [train_ds, test_ds] = dkt::split_dataset(dataset, train_fraction, seed);
      const dkt::ModelConfig mc = dkt::ModelConfig::make(dataset.num_concepts(), hidden_size, seed);
      dkt::TrainConfig run_tc = tc;
      run_tc.seed = seed;
      const dkt::TrainResult result = dkt::train(train_ds, mc, run_tc);
      const dkt::EvalMetrics metrics = dkt::evaluate(result.params, test_ds, g.threads);

      const std::string suffix = sweep ? "_s" + std::to_string(seed) : "";
      fs::path model_path = out_path(g, model_out);
      if (sweep)
        model_path = out_path(g, model_path.stem().string() + suffix +
                                     model_path.extension().string());
      dkt::save_model(result.params, mc, model_path);

      std::string log = "iteration,loss\n";
      for (std::size_t i = 0; i < result.loss_log.size(); ++i)
        log += std::to_string(i + 1) + "," + dkt::format_double(result.loss_log[i]) + "\n";
      write_text(out_path(g, "training_log" + suffix + ".csv"), log);
      write_text(out_path(g, "metrics" + suffix + ".json"), metrics_json(metrics));

      std::cout << "seed " << seed << ": acc=" << metrics.acc << " auc=" << metrics.auc
                << " loss=" << metrics.loss << " model=" << model_path.string() << "\n";
    }
  });

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on an interaction log");
  std::string eval_model, eval_vocab, eval_data;
  eval_cmd->add_option("--model", eval_model, "")->required();
  eval_cmd->add_option("--vocab", eval_vocab, "")->required();
  eval_cmd->add_option("--data", eval_data, "")->required();
  eval_cmd->callback([&] {
    const ModelBundle bundle = load_bundle(eval_model, eval_vocab);
    const dkt::Dataset dataset = load_dataset_for_model(eval_data, bundle, 2);
    const dkt::EvalMetrics metrics = dkt::evaluate(bundle.params, dataset, g.threads);
    write_text(out_path(g, "metrics.json"), metrics_json(metrics));
    std::cout << "acc=" << metrics.acc << " auc=" << metrics.auc << " loss=" << metrics.loss
              << " n=" << metrics.num_predictions << (metrics.one_class ? " (one-class)" : "")
              << "\n";
  });

  // ---- explain ----
  auto* explain_cmd = app.add_subcommand("explain", "Per-question relevance for one prediction");
  std::string ex_model, ex_vocab, ex_interactions, ex_data, ex_user, ex_target;
  std::string ex_out = "explanation.json";
  int ex_prefix_len = 0;
  dkt::LrpConfig lrp_cfg;
  explain_cmd->add_option("--model", ex_model, "")->required();
  explain_cmd->add_option("--vocab", ex_vocab, "Vocabulary JSON written by train");
  explain_cmd->add_option("--interactions", ex_interactions,
                          "Inline sequence, e.g. 'frac:1,frac:0,dec:1'");
  explain_cmd->add_option("--data", ex_data, "Interaction CSV (use with --user)");
  explain_cmd->add_option("--user", ex_user, "Learner id to pick from --data");
  explain_cmd->add_option("--target-concept", ex_target, "Concept of the next question")
      ->required();
  explain_cmd->add_option("--prefix-len", ex_prefix_len, "Truncate the sequence first");
  explain_cmd->add_option("--epsilon", lrp_cfg.epsilon, "")->capture_default_str();
  explain_cmd->add_option("--delta", lrp_cfg.delta, "")->capture_default_str();
  explain_cmd->add_option("--out", ex_out, "")->capture_default_str();
  explain_cmd->callback([&] {
    lrp_cfg.validate();
    if (ex_interactions.empty() && ex_data.empty())
      throw dkt::ConfigError("provide --interactions or --data/--user");
    if (!ex_data.empty() && ex_user.empty()) throw dkt::ConfigError("--data requires --user");
    const ModelBundle bundle = load_bundle(ex_model, ex_vocab);
    const dkt::ConceptVocab* vocab = bundle.vocab.size() > 0 ? &bundle.vocab : nullptr;

    dkt::InteractionSequence seq;
    if (!ex_interactions.empty()) {
      seq = parse_interactions(ex_interactions, vocab, bundle.config.num_concepts);
    } else if (!ex_data.empty()) {
      if (ex_user.empty()) throw dkt::ConfigError("--data requires --user");
      if (vocab == nullptr) throw dkt::ConfigError("--data requires --vocab");
      const dkt::Dataset ds = load_dataset_for_model(ex_data, bundle, 1);
      const auto it = std::find_if(ds.sequences.begin(), ds.sequences.end(),
                                   [&](const auto& s) { return s.learner_id == ex_user; });
      if (it == ds.sequences.end()) throw dkt::DataError("no sequence for user '" + ex_user + "'");
      seq = *it;
    } else {
      throw dkt::ConfigError("provide --interactions or --data/--user");
    }
    if (ex_prefix_len > 0 && ex_prefix_len < static_cast<int>(seq.steps.size()))
      seq.steps.resize(ex_prefix_len);

    const int target = resolve_concept(ex_target, vocab, bundle.config.num_concepts);
    const dkt::ForwardTrace tr = dkt::forward_sequence(bundle.params, seq);
    const dkt::RelevanceTrace rt =
        dkt::lrp_sequence(bundle.params, tr, tr.length - 1, target, lrp_cfg);
    const auto qrel = dkt::question_relevances(rt, seq);

    json j;
    j["header"] = {{"target_concept", target},
                   {"predicted_probability", rt.initial_relevance},
                   {"epsilon", lrp_cfg.epsilon},
                   {"delta", lrp_cfg.delta}};
    j["questions"] = json::array();
    for (const auto& q : qrel) {
      const dkt::Interaction& step = seq.steps[q.timestep];
      j["questions"].push_back({{"timestep", q.timestep},
                                {"question_id", q.question_id},
                                {"concept_id", step.concept_id},
                                {"correct", step.correct},
                                {"relevance", q.relevance}});
    }
    write_text(out_path(g, ex_out), j.dump(1) + "\n");

    std::cout << "prediction " << rt.initial_relevance << " for concept "
              << (vocab != nullptr ? vocab->skills[target] : std::to_string(target)) << "\n";
    for (const auto& q : qrel)
      std::cout << "  q" << q.timestep + 1 << " (" << q.question_id << ", "
                << (seq.steps[q.timestep].correct ? "correct" : "incorrect")
                << "): " << q.relevance << "\n";
  });

  // ---- experiment ----
  auto* exp_cmd = app.add_subcommand("experiment", "Validation studies on a trained model");
  exp_cmd->require_subcommand(1);
  std::string xp_model, xp_vocab, xp_data;
  int xp_prefix_len = 14;
  int xp_target_index = -1;  // default: question right after the prefix
  dkt::LrpConfig xp_lrp;
  exp_cmd->add_option("--model", xp_model, "")->required();
  exp_cmd->add_option("--vocab", xp_vocab, "")->required();
  exp_cmd->add_option("--data", xp_data, "")->required();
  exp_cmd->add_option("--prefix-len", xp_prefix_len, "")->capture_default_str();
  exp_cmd->add_option("--epsilon", xp_lrp.epsilon, "")->capture_default_str();
  exp_cmd->add_option("--delta", xp_lrp.delta, "")->capture_default_str();

  auto* cons_cmd = exp_cmd->add_subcommand("consistency", "Relevance-sign consistency rates");
  cons_cmd->add_option("--target-index", xp_target_index,
                       "Question to predict (default: first after the prefix)");
  cons_cmd->callback([&] {
    const ModelBundle bundle = load_bundle(xp_model, xp_vocab);
    const dkt::Dataset dataset = load_dataset_for_model(xp_data, bundle, 2);
    const int target_index = xp_target_index < 0 ? xp_prefix_len : xp_target_index;
    const dkt::ConsistencyReport report = dkt::consistency_study(
        bundle.params, dataset, xp_prefix_len, target_index, xp_lrp, g.threads);
    dkt::write_consistency_csv(report, out_path(g, "consistency.csv"));
    dkt::write_consistency_histogram_json(report, out_path(g, "consistency_histogram.json"));
    std::cout << "median consistent rate " << report.median_rate() << " over "
              << report.num_correct << " correctly predicted sequences (" << report.num_positive
              << " positive, " << report.num_negative << " negative)\n";
  });

  auto* del_cmd = exp_cmd->add_subcommand("deletion", "Accuracy under relevance-ordered deletion");
  int xp_max_deletions = 10;
  int xp_repeats = 10;
  std::string deletion_order_name = "support";
  del_cmd->add_option("--max-deletions", xp_max_deletions, "")->capture_default_str();
  del_cmd->add_option("--repeats", xp_repeats, "Random-baseline repeats")->capture_default_str();
  del_cmd->add_option("--deletion-order", deletion_order_name,
                      "support (strongest prediction support first), signed (decreasing for "
                      "positive predictions, increasing for negative) or signed-inverted-false")
      ->capture_default_str();
  del_cmd->callback([&] {
    dkt::DeletionOrderPolicy policy;
    if (deletion_order_name == "support")
      policy = dkt::DeletionOrderPolicy::prediction_support;
    else if (deletion_order_name == "signed")
      policy = dkt::DeletionOrderPolicy::signed_by_prediction;
    else if (deletion_order_name == "signed-inverted-false")
      policy = dkt::DeletionOrderPolicy::signed_inverted_false;
    else
      throw dkt::ConfigError(
          "--deletion-order must be 'support', 'signed' or 'signed-inverted-false'");

    const ModelBundle bundle = load_bundle(xp_model, xp_vocab);
    const dkt::Dataset dataset = load_dataset_for_model(xp_data, bundle, 2);
    const dkt::DeletionStudyResult result =
        dkt::deletion_study(bundle.params, dataset, xp_prefix_len, xp_max_deletions, xp_repeats,
                            g.seed, xp_lrp, policy, g.threads);
    dkt::write_deletion_csv(result, out_path(g, "deletion_curves.csv"));
    for (const std::string& note : result.notes) std::cout << "note: " << note << "\n";
    const auto* cp =
        result.find(dkt::DeletionStrategy::relevance_ordered, dkt::SequenceGroup::correct_positive);
    if (cp != nullptr && cp->points.size() > 1)
      std::cout << "correct_positive accuracy " << cp->points.front().second << " -> "
                << cp->points.back().second << " after " << cp->points.back().first
                << " ordered deletions\n";
    std::cout << "wrote " << result.curves.size() << " deletion curves\n";
  });

  auto* graph_cmd = exp_cmd->add_subcommand("concept-graph", "Concept relationship graph");
  graph_cmd->callback([&] {
    const ModelBundle bundle = load_bundle(xp_model, xp_vocab);
    const dkt::Dataset dataset = load_dataset_for_model(xp_data, bundle, 2);
    const dkt::ConceptGraph graph =
        dkt::concept_graph(bundle.params, dataset, xp_prefix_len, xp_lrp, g.threads);
    dkt::export_graph(graph, dkt::GraphFormat::dot, out_path(g, "concept_graph.dot"));
    dkt::export_graph(graph, dkt::GraphFormat::json, out_path(g, "concept_graph.json"));
    for (const std::string& note : graph.notes) std::cout << "note: " << note << "\n";
    std::cout << "wrote " << graph.edges.size() << " edges\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const dkt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dkt::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const dkt::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dkt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
