#include "mgproto/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "mgproto/checkpoint.hpp"
#include "mgproto/config.hpp"
#include "mgproto/dataset_io.hpp"
#include "mgproto/errors.hpp"
#include "mgproto/gradcheck.hpp"
#include "mgproto/grounding.hpp"
#include "mgproto/metrics.hpp"
#include "mgproto/report.hpp"
#include "mgproto/trainer.hpp"

namespace mgproto {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::optional<double> abstain_threshold;
  std::size_t keep = 0;
  bool renormalize = false;
  std::string checkpoint;
  std::string data;
  std::string id_data;
  std::string ood_data;
  std::size_t instances = 20;
};

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::size_t> labels_of(std::span<const Sample> samples) {
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(static_cast<std::size_t>(s.label));
  return labels;
}

bool all_labelled(std::span<const Sample> samples) {
  return std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.label >= 0; });
}

void check_compatible(const Checkpoint& ckpt, std::span<const Sample> samples, const std::string& what) {
  if (!ckpt.net) throw ContractError("checkpoint has no network parameters");
  if (samples.empty()) throw ContractError(what + " is empty");
  if (samples.front().raw.dim() != ckpt.net->raw_dim()) {
    throw ContractError(what + " has raw dim " + std::to_string(samples.front().raw.dim()) +
                        " but the checkpoint expects " + std::to_string(ckpt.net->raw_dim()));
  }
  for (const auto& s : samples) {
    if (s.label >= static_cast<int>(ckpt.head.num_classes())) {
      throw ContractError(what + " has label " + std::to_string(s.label) + " outside the checkpoint's " +
                          std::to_string(ckpt.head.num_classes()) + " classes");
    }
  }
}

void write_grounding_csv(const fs::path& path, const std::vector<GroundingEntry>& record) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "class_id,prototype,sample_id,i,j,likelihood\n";
  for (const auto& e : record) {
    out << e.class_id << ',' << e.prototype << ',' << e.sample_id << ',' << e.i << ',' << e.j << ','
        << format_number(e.likelihood) << '\n';
  }
}

void write_splits(const fs::path& dir, const Dataset& data, const SyntheticSpec& spec) {
  make_dir(dir);
  nlohmann::ordered_json meta;
  meta["seed"] = data.seed;
  meta["spec"] = spec_to_json(spec);
  meta["split"] = "train";
  write_split(dir / "train.bin", data.train, meta);
  meta["split"] = "test";
  write_split(dir / "test.bin", data.test, meta);
  if (!data.ood.empty()) {
    meta["split"] = "ood";
    write_split(dir / "ood.bin", data.ood, meta);
  }
}

ExperimentConfig resolve_config(const Options& o) {
  auto cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.threads) cfg.train.threads = *o.threads;
  cfg.validate();
  return cfg;
}

int cmd_train(const Options& o) {
  const auto cfg = resolve_config(o);
  const fs::path out = cfg.output_dir;
  make_dir(out);
  const auto threads = cfg.train.threads;

  const auto data = generate_dataset(cfg.data, cfg.seed);
  write_splits(out / "data", data, cfg.data);

  auto state = init_state(cfg.train, data.train, cfg.seed);
  const auto history = train(state, data.train, cfg.train);
  const double acc_trained = evaluate_accuracy(state.net, state.head, data.test, threads);

  const auto grounded = state.point_based ? hard_replace_baseline(state, data.train, threads)
                                          : ground_prototypes(state, data.train, threads);
  const double acc = evaluate_accuracy(state.net, grounded.head, data.test, threads);

  ScoreSet scores{ood_scores(state.net, grounded.head, data.test, threads),
                  ood_scores(state.net, grounded.head, data.ood, threads)};

  std::vector<MetricRow> rows = {
      {"accuracy_before_grounding", "test", acc_trained},
      {"accuracy", "test", acc},
      {"accuracy", "train", evaluate_accuracy(state.net, grounded.head, data.train, threads)},
      {"grounding_drop", "test", acc_trained - acc},
      {"final_loss_total", "train", history.back().loss.total},
      {"parameter_count", "model", static_cast<double>(state.net.parameter_count())},
  };
  if (scores.id_scores.size() >= 20 && !scores.ood_scores.empty()) {
    rows.push_back({"fpr95", "ood", fpr95(scores)});
    rows.push_back({"auroc", "ood", auroc(scores)});
  }
  if (grounded.head.num_prototypes() >= 2) {
    // Trained means first; grounding can snap several of them onto one patch.
    for (const auto& mix : state.head.classes) {
      rows.push_back({"diversity_distance", "class_" + std::to_string(mix.class_id), diversity_distance(mix)});
    }
    for (const auto& mix : grounded.head.classes) {
      rows.push_back({"diversity_distance_grounded", "class_" + std::to_string(mix.class_id),
                      diversity_distance(mix)});
    }
  }

  ReportInputs report{rows, std::nullopt, grounded.head, history, cfg.histogram_bins};
  if (!scores.ood_scores.empty()) report.scores = scores;
  emit_report(out, report);

  const Checkpoint ckpt{grounded.head, state.net};
  write_checkpoint(out / "checkpoint.bin", ckpt);
  write_text(out / "checkpoint.json", checkpoint_to_json(ckpt));
  write_grounding_csv(out / "grounding.csv", grounded.record);
  write_text(out / "config.json", config_to_json(cfg).dump(2) + "\n");

  std::cout << "trained " << cfg.train.epochs << " epochs, " << history.size() << " steps\n"
            << "test accuracy " << format_number(acc_trained) << " -> " << format_number(acc)
            << (state.point_based ? " after replacement\n" : " after grounding\n")
            << "checkpoint " << (out / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const auto ckpt = read_checkpoint(o.checkpoint);
  const auto samples = read_split(o.data);
  check_compatible(ckpt, samples, "dataset " + o.data);
  const std::size_t threads = o.threads.value_or(1);
  const auto& net = *ckpt.net;
  std::vector<MetricRow> rows;

  if (all_labelled(samples)) {
    const auto pred = predict(net, ckpt.head, samples, threads);
    const auto labels = labels_of(samples);
    const double acc = accuracy(pred, labels);
    rows.push_back({"accuracy", "eval", acc});
    std::cout << "accuracy " << format_number(acc) << "\n";
    const auto n_classes = ckpt.head.num_classes();
    const auto counts = confusion_counts(pred, labels, n_classes);
    std::cout << "confusion (rows true, columns predicted)\n";
    for (std::size_t t = 0; t < n_classes; ++t) {
      for (std::size_t p = 0; p < n_classes; ++p) {
        std::cout << (p ? " " : "") << counts[t * n_classes + p];
        rows.push_back({"confusion_" + std::to_string(t) + "_" + std::to_string(p), "eval",
                        static_cast<double>(counts[t * n_classes + p])});
      }
      std::cout << "\n";
    }
  } else {
    std::cout << "dataset contains unlabelled (OoD) samples; accuracy not reported\n";
  }

  if (o.abstain_threshold) {
    const auto scores = ood_scores(net, ckpt.head, samples, threads);
    const auto abstained = std::count_if(scores.begin(), scores.end(),
                                         [&](double s) { return s < *o.abstain_threshold; });
    const double rate = static_cast<double>(abstained) / static_cast<double>(samples.size());
    rows.push_back({"abstention_rate", "eval", rate});
    std::cout << "abstention rate " << format_number(rate) << " at threshold "
              << format_number(*o.abstain_threshold) << "\n";
  }
  if (!o.out.empty()) emit_report(o.out, ReportInputs{rows, std::nullopt, ckpt.head, {}, 30});
  return kExitOk;
}

int cmd_ood(const Options& o) {
  const auto ckpt = read_checkpoint(o.checkpoint);
  const auto id = read_split(o.id_data);
  const auto ood = read_split(o.ood_data);
  check_compatible(ckpt, id, "ID dataset " + o.id_data);
  check_compatible(ckpt, ood, "OoD dataset " + o.ood_data);
  const std::size_t threads = o.threads.value_or(1);
  ScoreSet scores{ood_scores(*ckpt.net, ckpt.head, id, threads), ood_scores(*ckpt.net, ckpt.head, ood, threads)};
  const double f = fpr95(scores);
  const double a = auroc(scores);
  const double threshold = o.abstain_threshold.value_or(id_quantile(scores.id_scores, 0.05));
  auto rate = [&](const std::vector<double>& s) {
    const auto n = std::count_if(s.begin(), s.end(), [&](double v) { return v < threshold; });
    return static_cast<double>(n) / static_cast<double>(s.size());
  };
  std::vector<MetricRow> rows = {{"fpr95", "ood", f},
                                 {"auroc", "ood", a},
                                 {"abstain_threshold", "ood", threshold},
                                 {"abstention_rate", "id", rate(scores.id_scores)},
                                 {"abstention_rate", "ood", rate(scores.ood_scores)}};
  std::cout << "fpr95 " << format_number(f) << "\nauroc " << format_number(a) << "\nabstain threshold "
            << format_number(threshold) << "\n";
  const fs::path out = o.out.empty() ? fs::path("ood_report") : fs::path(o.out);
  emit_report(out, ReportInputs{rows, scores, std::nullopt, {}, 30});
  return kExitOk;
}

int cmd_prune(const Options& o) {
  const auto ckpt = read_checkpoint(o.checkpoint);
  const std::size_t m = ckpt.head.num_prototypes();
  if (o.keep < 1 || o.keep > m) {
    throw ContractError("--keep must lie in [1, " + std::to_string(m) + "], got " + std::to_string(o.keep));
  }
  const Checkpoint pruned{prune(ckpt.head, o.keep, o.renormalize), ckpt.net};
  const fs::path out = o.out.empty() ? fs::path("pruned") : fs::path(o.out);
  make_dir(out);
  write_checkpoint(out / "checkpoint.bin", pruned);
  write_text(out / "checkpoint.json", checkpoint_to_json(pruned));

  std::ofstream table(out / "prune.csv", std::ios::trunc);
  if (!table) throw std::runtime_error("cannot write " + (out / "prune.csv").string());
  table << "stage,prototypes,accuracy\n";
  if (o.data.empty()) {
    table << "before," << m << ",\nafter," << o.keep << ",\n";
    std::cout << "prototypes " << m << " -> " << o.keep << "\n";
    return kExitOk;
  }
  const auto samples = read_split(o.data);
  check_compatible(ckpt, samples, "dataset " + o.data);
  if (!all_labelled(samples)) throw ContractError("pruning comparison needs a labelled dataset");
  const std::size_t threads = o.threads.value_or(1);
  const double before = evaluate_accuracy(*ckpt.net, ckpt.head, samples, threads);
  const double after = evaluate_accuracy(*pruned.net, pruned.head, samples, threads);
  table << "before," << m << ',' << format_number(before) << "\nafter," << o.keep << ',' << format_number(after)
        << '\n';
  char line[128];
  std::snprintf(line, sizeof line, "prototypes %zu -> %zu, accuracy %.4f -> %.4f\n", m, o.keep, before, after);
  std::cout << line;
  return kExitOk;
}

int cmd_gen_data(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto data = generate_dataset(cfg.data, cfg.seed);
  write_splits(cfg.output_dir, data, cfg.data);
  std::cout << "wrote " << data.train.size() << " train, " << data.test.size() << " test, " << data.ood.size()
            << " ood samples to " << cfg.output_dir << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Options& o) {
  GradcheckOptions opts;
  opts.instances = o.instances;
  if (o.seed) opts.seed = *o.seed;
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  std::cout << "case,instances,coordinates,max_rel_error,status\n";
  for (const auto& c : run_gradcheck(opts)) {
    const bool pass = c.max_rel_error < kTolerance;
    ok = ok && pass;
    std::cout << c.name << ',' << c.instances << ',' << c.coordinates << ',' << format_number(c.max_rel_error) << ','
              << (pass ? "pass" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Gaussian mixture prototype experiments", "mgproto"};
  app.require_subcommand(1);
  Options o;

  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto* train_cmd = app.add_subcommand("train", "Train, ground and evaluate on generated data");
  train_cmd->add_option("--config", o.config, "Experiment config (JSON)")->required();
  train_cmd->add_option("--seed", o.seed, "Override the config seed");
  train_cmd->add_option("--out", o.out, "Override the output directory");
  add_threads(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion counts of a checkpoint");
  eval_cmd->add_option("--checkpoint", o.checkpoint)->required();
  eval_cmd->add_option("--data", o.data, "Dataset split file")->required();
  eval_cmd->add_option("--abstain-threshold", o.abstain_threshold, "Abstain when p(x) is below this");
  eval_cmd->add_option("--out", o.out, "Report directory");
  add_threads(eval_cmd);

  auto* ood_cmd = app.add_subcommand("ood", "FPR95, AUROC and score histogram");
  ood_cmd->add_option("--checkpoint", o.checkpoint)->required();
  ood_cmd->add_option("--id-data", o.id_data)->required();
  ood_cmd->add_option("--ood-data", o.ood_data)->required();
  ood_cmd->add_option("--abstain-threshold", o.abstain_threshold,
                      "Abstention threshold (default: 5th percentile of ID scores)");
  ood_cmd->add_option("--out", o.out, "Report directory");
  add_threads(ood_cmd);

  auto* prune_cmd = app.add_subcommand("prune", "Keep the top prototypes of each class by prior");
  prune_cmd->add_option("--checkpoint", o.checkpoint)->required();
  prune_cmd->add_option("--keep", o.keep, "Prototypes kept per class")->required();
  prune_cmd->add_option("--data", o.data, "Labelled split for the before/after comparison");
  prune_cmd->add_flag("--renormalize", o.renormalize, "Renormalize retained priors");
  prune_cmd->add_option("--out", o.out, "Output directory");
  add_threads(prune_cmd);

  auto* gen_cmd = app.add_subcommand("gen-data", "Write train/test/ood splits");
  gen_cmd->add_option("--config", o.config)->required();
  gen_cmd->add_option("--seed", o.seed);
  gen_cmd->add_option("--out", o.out);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of all analytic gradients");
  grad_cmd->add_option("--seed", o.seed);
  grad_cmd->add_option("--instances", o.instances)->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*ood_cmd) return cmd_ood(o);
    if (*prune_cmd) return cmd_prune(o);
    if (*gen_cmd) return cmd_gen_data(o);
    if (*grad_cmd) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int k = 1; k < argc; ++k) args.emplace_back(argv[k]);
  return run_cli(args);
}

}  // namespace mgproto
