#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eened/eened.hpp"

// Command-line front end: `train`, `eval`, `gradcheck` and `predict`.
//
// Exit codes: 0 success, 1 configuration error, 2 data/checkpoint error,
// 3 runtime error, 4 gradient check failure. Results go to `out`,
// diagnostics to `err`.

namespace eened::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kRuntimeError = 3, kGradcheckFailure = 4 };

/// `acc=<f> f1_pos=<f> f1_neg=<f>`, shared by training and evaluation output.
inline std::string summary(const Metrics& m) {
  return "acc=" + fixed6(m.accuracy()) + " f1_pos=" + fixed6(m.f1_positive()) + " f1_neg=" + fixed6(m.f1_negative());
}

inline std::string confusion_line(const Metrics& m) {
  return "confusion tp=" + std::to_string(m.tp) + " fp=" + std::to_string(m.fp) + " tn=" + std::to_string(m.tn) +
         " fn=" + std::to_string(m.fn);
}

/// Flat `key = value` file turned into `--key=value` arguments. Underscores in
/// keys map to dashes; `true`/`false` values toggle flags.
inline std::vector<std::string> config_file_args(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    for (auto& c : key)
      if (c == '_') c = '-';
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key + "=" + value);
    }
  }
  return args;
}

struct DataOptions {
  std::string data;
  bool toy = false;
  int toy_rows = 256;
  int toy_length = 64;
  bool no_header = false;
  bool no_id_column = false;
  std::string split_mode = "published";
  double test_fraction = 0.2;

  void add_to(CLI::App& app) {
    app.add_option("--data", data, "Seizure CSV or EENEDDS1 dataset cache");
    app.add_flag("--toy", toy, "Use the built-in synthetic two-class dataset");
    app.add_option("--toy-rows", toy_rows, "Rows in the synthetic dataset");
    app.add_option("--toy-length", toy_length, "Samples per synthetic segment (train only; eval uses the checkpoint's)");
    app.add_flag("--no-header", no_header, "CSV has no header row");
    app.add_flag("--no-id-column", no_id_column, "CSV has no leading id column");
    app.add_option("--split", split_mode, "published (7360/1840) or stratified")
        ->check(CLI::IsMember({"published", "stratified"}));
    app.add_option("--test-fraction", test_fraction, "Held-out fraction for --split stratified");
  }

  void validate() const {
    if (toy && !data.empty()) throw ConfigError("--toy and --data are mutually exclusive");
    if (!toy && data.empty()) throw ConfigError("one of --data or --toy is required");
    if (toy && toy_rows < 4) throw ConfigError("--toy-rows must be >= 4");
    if (toy && toy_length < 4) throw ConfigError("--toy-length must be >= 4");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("--test-fraction must be in (0, 1)");
    if (!toy && !std::filesystem::exists(data)) throw DataError("data file not found: " + data);
  }

  /// Raw (un-normalized) rows with split tags assigned.
  Dataset load(std::uint64_t seed, std::size_t toy_t_in) const {
    Dataset ds;
    if (toy) {
      ds = make_toy_dataset(static_cast<std::size_t>(toy_rows), toy_t_in, seed);
    } else if (is_dataset_cache(data)) {
      ds = load_dataset_cache(data);
    } else {
      ds = make_dataset(parse_csv(data, {!no_header, !no_id_column}));
    }
    split(ds, split_mode == "stratified" ? SplitPlan::stratified(ds, test_fraction) : SplitPlan::published(), seed);
    return ds;
  }
};

struct ModelOptions {
  ModelConfig cfg;
  CLI::Option* d_model = nullptr;
  CLI::Option* n_heads = nullptr;
  CLI::Option* head_dim = nullptr;
  CLI::Option* conv_kernel = nullptr;
  CLI::Option* conv_pad = nullptr;
  std::vector<CLI::Option*> all;

  void add_to(CLI::App& app) {
    d_model = app.add_option("--d-model", cfg.d_model, "Model width D");
    all.push_back(d_model);
    all.push_back(app.add_option("--n-blocks", cfg.n_blocks, "Encoder blocks"));
    n_heads = app.add_option("--n-heads", cfg.n_heads, "Attention heads H");
    all.push_back(n_heads);
    head_dim = app.add_option("--head-dim", cfg.head_dim, "Per-head width (default D / H)");
    all.push_back(head_dim);
    conv_kernel = app.add_option("--conv-kernel", cfg.conv_kernel, "Depthwise kernel size (odd)");
    all.push_back(conv_kernel);
    conv_pad = app.add_option("--conv-pad", cfg.conv_pad, "Depthwise padding (default (K - 1) / 2)");
    all.push_back(conv_pad);
    all.push_back(app.add_option("--d-pwff", cfg.d_pwff, "Feed-forward hidden width"));
    all.push_back(app.add_option("--dropout", cfg.dropout_p, "Dropout probability"));
    all.push_back(app.add_option("--classifier-hidden", cfg.classifier_hidden, "Hidden width of the classifier head"));
  }

  /// Applies the toy preset to every option the user did not set.
  void apply_toy_preset() {
    ModelConfig toy;
    toy.d_model = 32;
    toy.n_blocks = 2;
    toy.n_heads = 4;
    toy.d_pwff = 64;
    toy.classifier_hidden = 32;
    toy.t_in = 64;
    const ModelConfig given = cfg;
    ModelConfig merged = toy;
    auto keep = [&](std::size_t idx, auto ModelConfig::*field) {
      if (all[idx]->count() > 0) merged.*field = given.*field;
    };
    keep(0, &ModelConfig::d_model);
    keep(1, &ModelConfig::n_blocks);
    keep(2, &ModelConfig::n_heads);
    keep(3, &ModelConfig::head_dim);
    keep(4, &ModelConfig::conv_kernel);
    keep(5, &ModelConfig::conv_pad);
    keep(6, &ModelConfig::d_pwff);
    keep(7, &ModelConfig::dropout_p);
    keep(8, &ModelConfig::classifier_hidden);
    merged.seed = given.seed;
    cfg = merged;
  }

  /// Derives head_dim and conv_pad when not given, then validates.
  void finalize() {
    if (head_dim->count() == 0) {
      if (cfg.n_heads < 1 || cfg.d_model % cfg.n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(cfg.d_model) + ") must be divisible by n_heads (" +
                          std::to_string(cfg.n_heads) + "): n_heads * head_dim must equal d_model");
      }
      cfg.head_dim = cfg.d_model / cfg.n_heads;
    }
    if (conv_pad->count() == 0) cfg.conv_pad = (cfg.conv_kernel - 1) / 2;
    cfg.validate();
  }
};

struct TrainOptions {
  TrainConfig cfg;
  std::vector<CLI::Option*> all;

  void add_to(CLI::App& app) {
    all.push_back(app.add_option("--epochs", cfg.epochs, "Training epochs"));
    all.push_back(app.add_option("--batch-size", cfg.batch_size, "Segments per optimizer step"));
    all.push_back(app.add_option("--lr", cfg.lr, "Adam learning rate"));
    all.push_back(app.add_option("--beta1", cfg.adam_beta1, "Adam first-moment decay"));
    all.push_back(app.add_option("--beta2", cfg.adam_beta2, "Adam second-moment decay"));
    all.push_back(app.add_option("--adam-eps", cfg.adam_eps, "Adam denominator epsilon"));
    all.push_back(app.add_option("--weight-decay", cfg.weight_decay, "L2 penalty added to the gradient"));
    all.push_back(app.add_option("--eval-every", cfg.eval_every, "Evaluate every N epochs"));
    all.push_back(app.add_option("--warmup-steps", cfg.warmup_steps, "Linear learning-rate warmup steps"));
  }

  void apply_toy_preset() {
    if (all[0]->count() == 0) cfg.epochs = 8;
    if (all[1]->count() == 0) cfg.batch_size = 16;
    if (all[2]->count() == 0) cfg.lr = 1e-3;
  }
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
}

inline void check_writable(const std::string& path) {
  if (path.empty()) return;
  const auto parent = std::filesystem::absolute(path).parent_path();
  if (!std::filesystem::is_directory(parent)) throw DataError("output directory does not exist: " + parent.string());
}

/// Reads one segment: a comma-separated row, optionally with a leading
/// non-numeric id and a trailing label. Non-numeric rows (headers) are skipped.
inline std::vector<double> read_segment(const std::string& path, int row, std::size_t t_in) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input " + path);
  std::string line;
  int data_row = 0;
  while (std::getline(in, line)) {
    auto fields = detail::split_fields(line);
    if (fields.size() == 1 && fields[0].empty()) continue;
    std::size_t first = 0;
    if (!fields.empty() && !detail::parse_number(fields[0])) first = 1;
    std::vector<double> values;
    bool numeric = true;
    for (std::size_t i = first; i < fields.size(); ++i) {
      auto v = detail::parse_number(fields[i]);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (!numeric || values.empty()) continue;
    if (data_row++ != row) continue;
    if (values.size() == t_in + 1) values.pop_back();
    if (values.size() != t_in) {
      throw DataError("input row has " + std::to_string(values.size()) + " features, model expects " +
                      std::to_string(t_in));
    }
    return values;
  }
  throw DataError("input " + path + " has no data row " + std::to_string(row));
}

inline std::vector<double> parse_feature_list(const std::string& text, std::size_t t_in) {
  std::vector<double> values;
  for (auto f : detail::split_fields(text)) {
    auto v = detail::parse_number(f);
    if (!v) throw DataError("non-numeric feature '" + std::string(f) + "'");
    values.push_back(*v);
  }
  if (values.size() != t_in) {
    throw DataError("got " + std::to_string(values.size()) + " features, model expects " + std::to_string(t_in));
  }
  return values;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);

  // Config-file arguments go first so explicit flags override them.
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        continue;
      }
      auto extra = config_file_args(path);
      args.insert(args.begin() + (args.empty() ? 0 : 1), extra.begin(), extra.end());
      break;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  CLI::App app{"EENED seizure detector: train, evaluate, gradient-check and predict"};
  app.name("eened");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  DataOptions train_data;
  ModelOptions model_opts;
  TrainOptions train_opts;
  std::string train_out, train_log, train_metrics, save_cache;
  std::uint64_t seed = 0;
  train_data.add_to(*train_cmd);
  model_opts.add_to(*train_cmd);
  train_opts.add_to(*train_cmd);
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "Per-epoch log file (default: <out>.log)");
  train_cmd->add_option("--metrics-out", train_metrics, "Write the final metrics report here");
  train_cmd->add_option("--save-cache", save_cache, "Also write the ingested dataset as an EENEDDS1 cache");
  train_cmd->add_option("--seed", seed, "Seed for initialization, split, shuffling and dropout");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  DataOptions eval_data;
  std::string eval_ckpt, eval_metrics, eval_split = "test";
  double eval_threshold = 0.5;
  std::uint64_t eval_seed = 0;
  eval_data.add_to(*eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--threshold", eval_threshold, "Decision threshold on p(epileptic)");
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Split seed (default: the checkpoint's seed)");
  eval_cmd->add_option("--on", eval_split, "Which split to score")->check(CLI::IsMember({"test", "train"}));
  eval_cmd->add_option("--metrics-out", eval_metrics, "Write the metrics report here");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Check reverse-mode gradients against finite differences");
  grad_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string grad_module = "all", grad_fault;
  GradcheckOptions grad_opts;
  grad_cmd->add_option("--module", grad_module, "all, tensor, pwff, mhsa, conv, block or model");
  grad_cmd->add_option("--tolerance", grad_opts.tolerance, "Maximum relative error");
  grad_cmd->add_option("--max-coords", grad_opts.max_coords, "Coordinates sampled per tensor");
  grad_cmd->add_option("--inject-fault", grad_fault, "Negate the backward pass of this op (negative control)");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Score one EEG segment");
  pred_cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string pred_ckpt, pred_input, pred_features;
  int pred_row = 0;
  double pred_threshold = 0.5;
  pred_cmd->add_option("--checkpoint", pred_ckpt, "Checkpoint to score with")->required();
  auto* input_opt = pred_cmd->add_option("--input", pred_input, "CSV file holding the segment");
  auto* feat_opt = pred_cmd->add_option("--features", pred_features, "Inline comma-separated segment");
  input_opt->excludes(feat_opt);
  pred_cmd->add_option("--row", pred_row, "Data row of --input to score (0-based)");
  pred_cmd->add_option("--threshold", pred_threshold, "Decision threshold on p(epileptic)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (*train_cmd) {
      model_opts.cfg.seed = seed;
      train_opts.cfg.seed = seed;
      if (train_data.toy) {
        model_opts.apply_toy_preset();
        train_opts.apply_toy_preset();
        if (train_data.split_mode == "published" && train_cmd->count("--split") == 0) train_data.split_mode = "stratified";
      }
      model_opts.finalize();
      train_opts.cfg.validate();
      train_data.validate();
      if (train_log.empty()) train_log = train_out + ".log";
      check_writable(train_out);
      check_writable(train_log);
      check_writable(train_metrics);
      check_writable(save_cache);

      const auto start = std::chrono::steady_clock::now();
      Dataset ds = train_data.load(seed, static_cast<std::size_t>(train_data.toy_length));
      if (!save_cache.empty()) save_dataset_cache(ds, save_cache);
      model_opts.cfg.t_in = static_cast<int>(ds.t_in);
      model_opts.cfg.validate();
      normalize(ds);
      out << "data rows=" << ds.size() << " train=" << ds.indices(Split::train).size()
          << " test=" << ds.indices(Split::test).size() << " t_in=" << ds.t_in << '\n';

      std::string log_text;
      auto result = train(model_init<float>(model_opts.cfg), ds, train_opts.cfg, [&](const EpochLog& e) {
        out << e.line() << '\n' << std::flush;
        log_text += e.line() + '\n';
      });
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const std::string final_line = "final epoch=" + std::to_string(result.best_epoch) + " " + summary(result.best_metrics);
      out << final_line << '\n' << confusion_line(result.best_metrics) << '\n';
      out << "elapsed_seconds=" << fixed6(seconds) << '\n';
      log_text += final_line + '\n';
      save_checkpoint(result.best, train_out);
      write_text(train_log, log_text);
      if (!train_metrics.empty()) write_text(train_metrics, metrics_report(result.best_metrics));
      return kOk;
    }

    if (*eval_cmd) {
      if (!(eval_threshold > 0.0 && eval_threshold < 1.0)) throw ConfigError("--threshold must be in (0, 1)");
      if (eval_data.toy && eval_cmd->count("--split") == 0) eval_data.split_mode = "stratified";
      eval_data.validate();
      check_writable(eval_metrics);
      if (!std::filesystem::exists(eval_ckpt)) throw DataError("checkpoint not found: " + eval_ckpt);
      const EenedModel<float> model = load_checkpoint(eval_ckpt);
      const std::uint64_t split_seed = eval_seed_opt->count() ? eval_seed : model.config.seed;
      Dataset ds = eval_data.load(split_seed, static_cast<std::size_t>(model.config.t_in));
      if (static_cast<int>(ds.t_in) != model.config.t_in) {
        throw DataError("data segments have " + std::to_string(ds.t_in) + " samples, checkpoint expects " +
                        std::to_string(model.config.t_in));
      }
      for (auto& v : ds.x) v = model.input_norm.apply(v);
      ds.norm = model.input_norm;
      ds.normalized = true;
      const Metrics m = evaluate(model, ds, eval_split == "train" ? Split::train : Split::test, eval_threshold);
      out << summary(m) << " f1_macro=" << fixed6(m.f1_macro()) << " precision=" << fixed6(m.precision())
          << " recall=" << fixed6(m.recall()) << '\n'
          << confusion_line(m) << '\n';
      if (!eval_metrics.empty()) write_text(eval_metrics, metrics_report(m));
      return kOk;
    }

    if (*grad_cmd) {
      if (!(grad_opts.tolerance > 0.0)) throw ConfigError("--tolerance must be > 0");
      if (!grad_fault.empty()) {
        auto kind = op_from_name(grad_fault);
        if (!kind || *kind == OpKind::leaf) throw ConfigError("--inject-fault: unknown op '" + grad_fault + "'");
        grad_opts.fault = kind;
      }
      const auto start = std::chrono::steady_clock::now();
      const auto results = run_gradcheck_suite(grad_module, grad_opts);
      std::vector<std::string> failed;
      for (const auto& r : results) {
        out << (r.pass ? "PASS " : "FAIL ") << r.check << " max_rel_err=" << std::scientific << std::setprecision(3)
            << r.max_rel_err << std::defaultfloat << '\n';
        if (!r.pass) {
          failed.push_back(r.check);
          for (const auto& t : r.tensors) {
            if (t.max_rel_err >= grad_opts.tolerance) {
              out << "  " << t.name << " rel_err=" << std::scientific << std::setprecision(3) << t.max_rel_err
                  << std::defaultfloat << " coords=" << t.coords << '\n';
            }
          }
        }
      }
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out << "checks=" << results.size() << " failed=" << failed.size() << " elapsed_seconds=" << fixed6(seconds) << '\n';
      if (!failed.empty()) {
        std::string list;
        for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
        err << "gradcheck failed: " << list << '\n';
        return kGradcheckFailure;
      }
      return kOk;
    }

    if (*pred_cmd) {
      if (!(pred_threshold > 0.0 && pred_threshold < 1.0)) throw ConfigError("--threshold must be in (0, 1)");
      if (pred_input.empty() && pred_features.empty()) throw ConfigError("one of --input or --features is required");
      if (pred_row < 0) throw ConfigError("--row must be >= 0");
      if (!std::filesystem::exists(pred_ckpt)) throw DataError("checkpoint not found: " + pred_ckpt);
      const EenedModel<float> model = load_checkpoint(pred_ckpt);
      const auto t_in = static_cast<std::size_t>(model.config.t_in);
      const std::vector<double> segment =
          pred_features.empty() ? read_segment(pred_input, pred_row, t_in) : parse_feature_list(pred_features, t_in);
      const double p = predict_raw(model, segment);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", p);
      out << "probability=" << buf << " label=" << (p >= pred_threshold ? 1 : 0) << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}

}  // namespace eened::cli
