#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage
// error (unknown flag, bad value, missing input path).

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "form2seq/checkpoint.hpp"
#include "form2seq/evalmetrics.hpp"
#include "form2seq/form_io.hpp"
#include "form2seq/gradcheck.hpp"
#include "form2seq/overlay.hpp"
#include "form2seq/seqmodels.hpp"
#include "form2seq/synthgen.hpp"
#include "form2seq/training.hpp"

namespace form2seq::cli {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_path(const std::string& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::exists(p)) throw UsageError(std::string(flag) + ": no such file or directory: " + p);
}

/// A corpus directory (with manifest.json, read from `split`), a directory of
/// form files, or a single form file.
inline std::vector<NamedForm> load_forms(const fs::path& path, const std::string& split) {
  if (fs::is_regular_file(path)) return {{path.stem().string(), load_form(path)}};
  if (fs::exists(path / "manifest.json")) return load_split(path, split);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<NamedForm> out;
  for (const auto& f : files) out.push_back({f.stem().string(), load_form(f)});
  return out;
}

/// Prediction files keyed by their "form" field.
inline std::map<std::string, Prediction> load_predictions(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(path)) {
    files.push_back(path);
  } else {
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::map<std::string, Prediction> out;
  for (const auto& f : files) {
    Prediction p = prediction_from_json(read_json_file(f));
    if (p.form.empty()) p.form = f.stem().string();
    out[p.form] = std::move(p);
  }
  return out;
}

inline std::set<GroupKind> parse_kinds(const std::string& s) {
  std::set<GroupKind> out;
  std::stringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');) {
    if (tok.empty()) continue;
    auto k = parse_group_kind(tok);
    if (!k) throw UsageError("--kinds: unknown group kind '" + tok + "'");
    out.insert(*k);
  }
  return out;
}

struct Options {
  // shared
  std::string task = "type", variant, config, data, out, split, checkpoint, pred, preset = "full", kinds;
  std::uint64_t seed = 1;
  bool seed_set = false;
  int epochs = 0, batch = 0;
  double lr = 0, iou = 0.4;
  bool mini = false;
  // gen-data
  int n_train = 500, n_dev = 50, n_test = 100;
  bool table = false;
  // gradcheck
  int probes = 20;
  double tolerance = 1e-4;
  // overlay
  double scale = 1.0;
};

inline ModelConfig preset_config(const Options& o) {
  const auto task = parse_task(o.task);
  if (!task) throw UsageError("--task must be one of type, group, cascade, table");
  try {
    if (o.mini || o.preset == "mini") return make_mini_config(*task, o.variant);
    if (o.preset == "desk") return make_desk_config(*task, o.variant);
    if (o.preset == "full") return make_config(*task, o.variant);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  throw UsageError("--preset must be one of full, desk, mini");
}

inline int cmd_gen_data(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  GenParams gp;
  std::optional<TableParams> tp;
  if (!o.config.empty()) {
    require_path(o.config, "--config");
    const json j = read_json_file(o.config);
    if (o.table)
      tp = table_params_from_json(j);
    else
      gp = gen_params_from_json(j);
  } else if (o.table) {
    tp = TableParams{};
  }
  if (o.seed_set) {
    gp.seed = o.seed;
    if (tp) tp->seed = o.seed;
  }
  gen_corpus(o.out, gp, {o.n_train, o.n_dev, o.n_test}, tp);
  std::cout << "wrote " << o.n_train + o.n_dev + o.n_test << (o.table ? " tables" : " forms") << " to " << o.out << "\n";
  return 0;
}

inline int cmd_train(const Options& o) {
  require_path(o.data, "--data");
  if (o.out.empty()) throw UsageError("--out is required");
  TrainConfig tc;
  tc.model = preset_config(o);
  if (!o.config.empty()) {
    require_path(o.config, "--config");
    tc = train_config_from_json(read_json_file(o.config), tc);
  }
  if (o.seed_set) {
    tc.seed = o.seed;
    tc.model.seed = o.seed;
  }
  if (o.epochs > 0) tc.epochs = o.epochs;
  if (o.batch > 0) tc.batch = o.batch;
  if (o.lr > 0) tc.lr = o.lr;
  tc.iou_threshold = o.iou;
  tc.out = o.out;
  tc.threads = env_threads();
  tc.validate();
  const auto train_set = load_forms(o.data, "train");
  const auto dev_set = fs::is_directory(o.data) && fs::exists(fs::path(o.data) / "manifest.json")
                           ? load_split(o.data, "dev")
                           : std::vector<NamedForm>{};
  std::fprintf(stderr, "training %s %s (lr %g, batch %d, %zu train / %zu dev forms, %d worker%s)\n",
               std::string(task_name(tc.model.task)).c_str(), tc.model.variant().c_str(), tc.lr, tc.batch,
               train_set.size(), dev_set.size(), tc.threads, tc.threads == 1 ? "" : "s");
  Form2SeqModel<float> model(tc.model);
  const auto r = train(model, train_set, dev_set, tc);
  std::cout << "best epoch " << r.best_epoch << ", checkpoint " << (fs::path(o.out) / "best.ckpt").string() << "\n";
  return 0;
}

inline int cmd_predict(const Options& o) {
  require_path(o.checkpoint, "--checkpoint");
  require_path(o.data, "--data");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto model = load_model<float>(o.checkpoint);
  const auto forms = load_forms(o.data, o.split);
  fs::create_directories(o.out);
  for (const auto& f : forms)
    write_json_file(fs::path(o.out) / (f.name + ".json"), to_json(predict_structures(f.form, model, model.params(), f.name)));
  std::cout << "wrote " << forms.size() << " predictions to " << o.out << "\n";
  return 0;
}

inline int cmd_eval(const Options& o) {
  require_path(o.data, "--data");
  require_path(o.pred, "--pred");
  const auto gold = load_forms(o.data, o.split);
  const auto preds = load_predictions(o.pred);
  MetricsReport report;
  report.iou_threshold = o.iou;
  if (!o.kinds.empty()) {
    report.kinds = parse_kinds(o.kinds);
  } else {
    std::set<GroupKind> kinds;
    for (const auto& [name, p] : preds)
      for (const auto& g : p.groups) kinds.insert(g.kind);
    report.kinds = kinds;
  }
  std::size_t missing = 0;
  for (const auto& g : gold) {
    auto it = preds.find(g.name);
    if (it == preds.end()) {
      ++missing;
      continue;
    }
    accumulate(report, g.form, it->second);
  }
  if (missing == gold.size()) throw std::runtime_error("no prediction matches any gold form");
  if (missing) std::fprintf(stderr, "warning: %zu gold forms have no prediction\n", missing);
  std::cout << to_text(report);
  if (!o.out.empty()) write_json_file(o.out, to_json(report));
  return 0;
}

inline int cmd_gradcheck(const Options& o) {
  const auto cfg = [&] {
    Options m = o;
    m.mini = m.mini || (o.preset == "full" && o.config.empty());
    auto c = preset_config(m);
    if (o.seed_set) c.seed = o.seed;
    return c;
  }();
  const auto r = check_model_gradients(cfg, miniature_form(), static_cast<std::size_t>(o.probes), cfg.seed + 2);
  const bool ok = r.max_rel_error <= o.tolerance;
  std::printf("%s %s: max rel. err %.3e over %zu probes (worst %s) -> %s\n", std::string(task_name(cfg.task)).c_str(),
              cfg.variant().c_str(), r.max_rel_error, r.probes, r.worst_param.c_str(), ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

inline int cmd_overlay(const Options& o) {
  require_path(o.data, "--data");
  require_path(o.pred, "--pred");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto gold = load_forms(o.data, o.split);
  const auto preds = load_predictions(o.pred);
  fs::create_directories(o.out);
  std::size_t n = 0;
  for (const auto& g : gold) {
    auto it = preds.find(g.name);
    if (it == preds.end()) continue;
    write_ppm(fs::path(o.out) / (g.name + ".ppm"), render_overlay(g.form, it->second, o.scale));
    ++n;
  }
  std::cout << "wrote " << n << " overlays to " << o.out << "\n";
  return 0;
}

/// Entry point; argv[0] is the program name.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Form structure extraction: data generation, training, prediction and evaluation", "form2seq"};
  app.require_subcommand(1, 1);
  Options o;

  auto model_flags = [&](CLI::App* c) {
    c->add_option("--task", o.task, "type | group | cascade | table")->capture_default_str();
    c->add_option("--variant", o.variant, "A_T/B_T/C_T, A_G, B_G..F_G (empty = task default)");
    c->add_option("--preset", o.preset, "model dimensions: full | desk | mini")->capture_default_str();
    c->add_flag("--mini", o.mini, "miniature dimensions");
  };
  auto seed_flag = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "random seed")->each([&](const std::string&) { o.seed_set = true; });
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--out", o.out, "corpus directory");
  gen->add_option("--config", o.config, "generator parameters (JSON)");
  seed_flag(gen);
  gen->add_option("--train", o.n_train, "training forms")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--dev", o.n_dev, "dev forms")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--test", o.n_test, "test forms")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_flag("--table", o.table, "generate tables instead of forms");

  auto* tr = app.add_subcommand("train", "train a model");
  model_flags(tr);
  tr->add_option("--config", o.config, "training config (JSON); flags override it");
  tr->add_option("--data", o.data, "corpus directory");
  tr->add_option("--out", o.out, "run directory");
  seed_flag(tr);
  tr->add_option("--epochs", o.epochs, "epochs")->check(CLI::PositiveNumber);
  tr->add_option("--lr", o.lr, "learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--batch", o.batch, "forms per step")->check(CLI::PositiveNumber);
  tr->add_option("--iou-thresh", o.iou, "IoU threshold for dev metrics")->capture_default_str();

  auto* pr = app.add_subcommand("predict", "write one prediction JSON per form");
  pr->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  pr->add_option("--data", o.data, "corpus directory, form directory or form file");
  pr->add_option("--split", o.split, "manifest split")->default_val("test");
  pr->add_option("--out", o.out, "prediction directory");

  auto* ev = app.add_subcommand("eval", "score predictions against gold forms");
  ev->add_option("--data", o.data, "gold corpus directory, form directory or form file");
  ev->add_option("--pred", o.pred, "prediction directory or file");
  ev->add_option("--split", o.split, "manifest split")->default_val("test");
  ev->add_option("--iou-thresh", o.iou, "IoU match threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  ev->add_option("--kinds", o.kinds, "comma-separated group kinds (default: kinds present in predictions)");
  ev->add_option("--out", o.out, "JSON report path");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of model gradients");
  model_flags(gc);
  seed_flag(gc);
  gc->add_option("--probes", o.probes, "coordinates per parameter")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--tol", o.tolerance, "max relative error")->capture_default_str();

  auto* ov = app.add_subcommand("overlay", "render predictions over their forms (PPM)");
  ov->add_option("--data", o.data, "gold corpus directory, form directory or form file");
  ov->add_option("--pred", o.pred, "prediction directory or file");
  ov->add_option("--split", o.split, "manifest split")->default_val("test");
  ov->add_option("--out", o.out, "image directory");
  ov->add_option("--scale", o.scale, "pixels per page unit")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*pr) return cmd_predict(o);
    if (*ev) return cmd_eval(o);
    if (*gc) return cmd_gradcheck(o);
    if (*ov) return cmd_overlay(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace form2seq::cli
