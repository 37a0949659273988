#include "hyperbert/cli.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hyperbert/config.hpp"
#include "hyperbert/dataset.hpp"
#include "hyperbert/errors.hpp"
#include "hyperbert/io.hpp"
#include "hyperbert/training.hpp"

namespace hyperbert {

namespace {

struct CommonOptions {
  std::string config_path;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<Index> runs;
  std::string dataset;
  bool singletons = false;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common(CLI::App* sub, CommonOptions& c, bool dataset_required = false) {
  sub->add_option("--config", c.config_path, "Config file with [model], [pretrain], [finetune], [data]")
      ->check(CLI::ExistingFile);
  sub->add_option("--profile", c.profile, "Default profile")->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--runs", c.runs, "Number of runs");
  auto* ds = sub->add_option("--dataset", c.dataset, "Directory with nodes.tsv, edges.txt, splits.txt "
                                                     "(synthetic data from [data] when omitted)");
  if (dataset_required) ds->required();
  sub->add_flag("--singletons", c.singletons, "Give isolated nodes a singleton hyperedge");
  for (const auto& [key, value] : to_key_values(ExperimentConfig::desk())) {
    if (key == "seed" || key == "runs") continue;
    const std::string k = key;
    sub->add_option_function<std::string>(
           "--" + key, [&c, k](const std::string& v) { c.overrides.emplace_back(k, v); },
           "(desk default " + value + ")")
        ->group("Config keys");
  }
}

ExperimentConfig resolve_config(const CommonOptions& c) {
  ExperimentConfig cfg = profile_config(c.profile);
  if (!c.config_path.empty()) apply_config(cfg, read_config_file(c.config_path));
  for (const auto& [key, value] : c.overrides) apply_key_value(cfg, key, value);
  if (c.seed) cfg.seed = *c.seed;
  if (c.runs) cfg.runs = *c.runs;
  cfg.validate();
  return cfg;
}

TahgDataset dataset_for(const CommonOptions& c, const ExperimentConfig& cfg) {
  if (c.dataset.empty()) return generate_synthetic(cfg.data.synthetic);
  LoadOptions opts;
  opts.add_singleton_edges = c.singletons;
  return load_tahg_dir(c.dataset, opts);
}

void emit(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
  } else {
    write_file_atomically(path, content);
  }
}

std::span<const NodeId> split_of(const TahgDataset& ds, const std::string& name) {
  if (name == "train") return ds.splits.train;
  if (name == "val") return ds.splits.val;
  if (name == "test") return ds.splits.test;
  throw ConfigError("unknown split '" + name + "'");
}

void print_stats(std::ostream& out, const DatasetStats& s) {
  out << "nodes " << s.num_nodes << "\nhyperedges " << s.num_hyperedges << "\nclasses " << s.num_classes
      << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-attributed hypergraph encoder: pretraining, fine-tuning and evaluation", "hyperbert"};
  app.require_subcommand(1);
  app.fallthrough(false);

  CommonOptions common;
  std::string out_path;
  std::string curve_path;
  std::string checkpoint_path;
  std::string head_path;
  std::string split = "test";
  std::string variant;
  std::string expect;
  std::optional<Index> expect_nodes, expect_edges, expect_classes;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, common);
  synth->add_option("--out", out_path, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Recount a dataset and compare with expected statistics");
  add_common(validate, common, true);
  validate->add_option("--expect", expect, "Published statistics to compare with (cora, pubmed, dblp-a, "
                                           "cora-ca, imdb)");
  validate->add_option("--nodes", expect_nodes, "Expected node count");
  validate->add_option("--hyperedges", expect_edges, "Expected hyperedge count");
  validate->add_option("--classes", expect_classes, "Expected class count");

  auto* inspect = app.add_subcommand("inspect", "Summarize a dataset or a checkpoint");
  add_common(inspect, common);
  inspect->add_option("--checkpoint", checkpoint_path, "Checkpoint file");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Pretrain the backbone and write a checkpoint");
  add_common(pretrain_cmd, common);
  pretrain_cmd->add_option("--out", out_path, "Checkpoint file")->required();
  pretrain_cmd->add_option("--curve", curve_path, "Loss curve CSV");

  auto* finetune_cmd = app.add_subcommand("finetune", "Train a classifier head on a frozen checkpoint");
  add_common(finetune_cmd, common);
  finetune_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  finetune_cmd->add_option("--out", out_path, "Head file");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Accuracy of a checkpoint and head on one split");
  add_common(evaluate_cmd, common);
  evaluate_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  evaluate_cmd->add_option("--head", head_path, "Head file")->required();
  evaluate_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* experiment = app.add_subcommand("experiment", "Pretrain, fine-tune and test over several runs");
  add_common(experiment, common);
  experiment->add_option("--out", out_path, "Run report CSV (stdout when omitted)");

  auto* ablate = app.add_subcommand("ablate", "Run one ablation variant over several runs");
  add_common(ablate, common);
  ablate->add_option("--variant", variant,
                     "full, no-semantic, no-structural, no-alignment, gnn-structural or no-pretrain")
      ->required();
  ablate->add_option("--out", out_path, "Run report CSV (stdout when omitted)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const ExperimentConfig cfg = resolve_config(common);

    if (synth->parsed()) {
      const TahgDataset ds = generate_synthetic(cfg.data.synthetic);
      write_tahg(ds, out_path);
      out << "wrote " << out_path << "\n";
      print_stats(out, ds.stats());
      return 0;
    }

    if (validate->parsed()) {
      const TahgDataset ds = dataset_for(common, cfg);
      DatasetStats expected = ds.stats();
      if (!expect.empty()) {
        const auto published = published_stats(expect);
        if (!published) throw ConfigError("no published statistics for '" + expect + "'");
        expected = *published;
      }
      if (expect_nodes) expected.num_nodes = *expect_nodes;
      if (expect_edges) expected.num_hyperedges = *expect_edges;
      if (expect_classes) expected.num_classes = *expect_classes;
      const StatsReport report = validate_stats(ds, expected);
      print_stats(out, report.actual);
      for (const auto& m : report.mismatches) out << "mismatch " << m << "\n";
      out << (report.pass ? "PASS" : "FAIL") << "\n";
      return report.pass ? 0 : 1;
    }

    if (inspect->parsed()) {
      if (!checkpoint_path.empty()) {
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        out << "[model]\n";
        for (const auto& [k, v] : to_key_values(ck.config)) out << k << " = " << v << "\n";
        out << "\nvocabulary " << ck.vocab.size() << "\n";
        Index total = 0;
        for (const auto& [name, t] : ck.params.named_parameters()) {
          out << name << " " << t.shape_string() << "\n";
          total += t.size();
        }
        out << "parameters " << total << "\n";
        return 0;
      }
      const TahgDataset ds = dataset_for(common, cfg);
      print_stats(out, ds.stats());
      std::size_t members = 0;
      std::size_t largest = 0;
      for (const auto& e : ds.hypergraph.hyperedges()) {
        members += e.size();
        largest = std::max(largest, e.size());
      }
      const auto edges = ds.hypergraph.num_hyperedges();
      out << "mean_edge_size "
          << format_double(edges ? static_cast<double>(members) / static_cast<double>(edges) : 0.0) << "\n"
          << "max_edge_size " << largest << "\n"
          << "isolated " << isolated_nodes(ds.hypergraph).size() << "\n"
          << "train " << ds.splits.train.size() << "\nval " << ds.splits.val.size() << "\ntest "
          << ds.splits.test.size() << "\n";
      for (Index c = 0; c < ds.num_classes(); ++c) {
        out << "class " << c << " " << ds.label_texts[static_cast<std::size_t>(c)] << " "
            << std::count(ds.labels.begin(), ds.labels.end(), static_cast<int>(c)) << "\n";
      }
      return 0;
    }

    if (pretrain_cmd->parsed()) {
      const TahgDataset ds = dataset_for(common, cfg);
      const RunSeeds seeds = derive_seeds(cfg.seed, 0);
      const Vocabulary vocab = build_vocabulary(ds, cfg.data);
      HyperBertConfig model = cfg.model;
      model.vocab_size = static_cast<Index>(vocab.size());
      const TokenBatch tokens = tokenize_all(ds.texts, vocab, model.max_len);
      Rng rng(seeds.init);
      HyperBertParams params = init_params(model, rng);
      PretrainConfig pre = cfg.pretrain;
      pre.seed = seeds.pretrain;
      const auto curve = pretrain(ds.hypergraph, tokens, model, params, pre);
      if (!curve_path.empty()) {
        std::ostringstream csv;
        write_loss_curve_csv(csv, curve);
        emit(curve_path, csv.str(), out);
      }
      save_checkpoint(out_path, model, params, vocab);
      out << "steps " << curve.size() << "\n";
      if (!curve.empty()) {
        out << "first_loss " << format_double(curve.front().report.total) << "\nlast_loss "
            << format_double(curve.back().report.total) << "\n";
      }
      out << "wrote " << out_path << "\n";
      return 0;
    }

    if (finetune_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint_path);
      const TahgDataset ds = dataset_for(common, cfg);
      const TokenBatch tokens = tokenize_all(ds.texts, ck.vocab, ck.config.max_len);
      const Matrix features = node_features(ds.hypergraph, tokens, ck.config, ck.params);
      FinetuneConfig fine = cfg.finetune;
      fine.seed = derive_seeds(cfg.seed, 0).finetune;
      const FinetuneResult result = train_head(features, ds.labels, ds.num_classes(), ds.splits, fine);
      out << "best_epoch " << result.best_epoch << "\nval_accuracy " << format_double(result.best_val_accuracy)
          << "\n";
      if (!ds.splits.test.empty()) {
        out << "test_accuracy "
            << format_double(evaluate(result.head, features, ds.labels, ds.splits.test)) << "\n";
      }
      if (!out_path.empty()) {
        save_head(out_path, result.head);
        out << "wrote " << out_path << "\n";
      }
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint_path);
      const ClassifierHead head = load_head(head_path);
      const TahgDataset ds = dataset_for(common, cfg);
      const TokenBatch tokens = tokenize_all(ds.texts, ck.vocab, ck.config.max_len);
      const Matrix features = node_features(ds.hypergraph, tokens, ck.config, ck.params);
      if (head.num_classes() != ds.num_classes()) {
        throw DataError("head predicts " + std::to_string(head.num_classes()) + " classes, dataset has " +
                        std::to_string(ds.num_classes()));
      }
      out << split << "_accuracy " << format_double(evaluate(head, features, ds.labels, split_of(ds, split)))
          << "\n";
      return 0;
    }

    if (experiment->parsed() || ablate->parsed()) {
      const TahgDataset ds = dataset_for(common, cfg);
      const RunReport report =
          ablate->parsed() ? run_ablation(ds, cfg, variant) : run_experiment(ds, cfg);
      std::ostringstream csv;
      write_run_report_csv(csv, report);
      emit(out_path, csv.str(), out);
      if (!out_path.empty()) {
        out << "mean " << format_double(report.mean) << "\nstd " << format_double(report.std) << "\nwrote "
            << out_path << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace hyperbert
