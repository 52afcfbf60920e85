#pragma once

// Training loop: teacher-forced summed loss over a batch of forms, global-norm
// clipping, Adam, per-epoch dev evaluation with early stopping and best-dev
// checkpointing. Results are bit-reproducible for a given config and seed,
// independent of the worker count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

#include "form2seq/checkpoint.hpp"
#include "form2seq/evalmetrics.hpp"
#include "form2seq/form_io.hpp"
#include "form2seq/seqmodels.hpp"

namespace form2seq {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker cap from FORM2SEQ_THREADS (at least 1).
inline int env_threads() {
  const char* v = std::getenv("FORM2SEQ_THREADS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  int batch = 8;
  int epochs = 50;
  std::uint64_t seed = 1;  // epoch shuffling
  double clip = 5.0;
  int eval_every = 1;
  int patience = 10;
  std::optional<double> stop_at_metric;  // stop once the dev metric reaches this
  double iou_threshold = 0.4;
  std::filesystem::path out;  // checkpoints and logs; empty keeps everything in memory
  int threads = 1;
  bool quiet = false;

  void validate() const {
    if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite non-negative number");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(clip > 0)) throw std::invalid_argument("clip must be positive");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  }
};

inline json to_json(const TrainConfig& c) {
  json j{{"model", to_json(c.model)}, {"lr", c.lr},     {"batch", c.batch},           {"epochs", c.epochs},
         {"seed", c.seed},            {"clip", c.clip}, {"eval_every", c.eval_every}, {"patience", c.patience},
         {"iou_threshold", c.iou_threshold}};
  if (c.stop_at_metric) j["stop_at_metric"] = *c.stop_at_metric;
  return j;
}

/// Fields present in `j` override `base`.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  detail::require_keys(j,
                       {"model", "lr", "batch", "epochs", "seed", "clip", "eval_every", "patience", "stop_at_metric",
                        "iou_threshold"},
                       "train config");
  if (j.contains("model")) base.model = model_config_from_json(j["model"], base.model);
  if (j.contains("lr")) base.lr = j["lr"].get<double>();
  if (j.contains("batch")) base.batch = j["batch"].get<int>();
  if (j.contains("epochs")) base.epochs = j["epochs"].get<int>();
  if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("clip")) base.clip = j["clip"].get<double>();
  if (j.contains("eval_every")) base.eval_every = j["eval_every"].get<int>();
  if (j.contains("patience")) base.patience = j["patience"].get<int>();
  if (j.contains("stop_at_metric")) base.stop_at_metric = j["stop_at_metric"].get<double>();
  if (j.contains("iou_threshold")) base.iou_threshold = j["iou_threshold"].get<double>();
  return base;
}

/// Group kinds a model's predictions are scored on.
inline std::set<GroupKind> evaluated_kinds(const ModelConfig& c) {
  switch (c.task) {
    case Task::Type: return {};
    case Task::GroupIsolated: return {c.group_kind};
    case Task::Cascade: return {GroupKind::ChoiceGroup, GroupKind::TextField, GroupKind::ChoiceField};
    case Task::Table: return {GroupKind::TableRow, GroupKind::TableColumn};
  }
  return {};
}

inline MetricsReport empty_report(const ModelConfig& c, double iou_threshold = 0.4) {
  MetricsReport r;
  r.iou_threshold = iou_threshold;
  r.kinds = evaluated_kinds(c);
  if (c.task == Task::Type) r.scheme = TypeScheme::Full;
  if (c.task == Task::Cascade) r.scheme = TypeScheme::Reduced;
  return r;
}

/// Model selection score in [0, 1]: type accuracy for the type task, else the
/// mean exact-set F1 over the evaluated kinds.
inline double selection_metric(const MetricsReport& r, Task task) {
  if (task == Task::Type) return r.types.overall();
  if (r.exact.empty()) return 0.0;
  double s = 0;
  for (const auto& [k, c] : r.exact) s += c.f1();
  return s / static_cast<double>(r.exact.size());
}

template <class T>
MetricsReport evaluate(const Form2SeqModel<T>& model, const nn::Parameters<T>& params, std::span<const NamedForm> forms,
                       double iou_threshold = 0.4) {
  MetricsReport r = empty_report(model.config(), iou_threshold);
  for (const auto& f : forms) accumulate(r, f.form, predict_structures(f.form, model, params, f.name));
  return r;
}

/// Teacher-forced loss summed over forms, divided by the element count.
template <class T>
double mean_element_loss(const Form2SeqModel<T>& model, const nn::Parameters<T>& params,
                         std::span<const PreparedForm> forms) {
  double total = 0;
  std::size_t n = 0;
  for (const auto& f : forms) {
    total += static_cast<double>(model.run(params, f, DecodeMode::TeacherForced).loss);
    n += f.elements.size();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

template <class T>
std::vector<PreparedForm> prepare_all(std::span<const NamedForm> forms, const ModelConfig& cfg) {
  std::vector<PreparedForm> out;
  out.reserve(forms.size());
  for (const auto& f : forms) {
    try {
      out.push_back(prepare_form(f.form, cfg, true));
    } catch (const std::exception& e) {
      throw TrainingError(f.name + ": " + e.what());
    }
  }
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  std::optional<double> dev_loss;
  std::optional<double> dev_metric;
  std::optional<json> dev_report;
  double grad_norm = 0;  // mean pre-clip norm over steps
  double seconds = 0;    // wall time; excluded from the JSON record
};

inline json to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"grad_norm", r.grad_norm}};
  if (r.dev_loss) j["dev_loss"] = *r.dev_loss;
  if (r.dev_metric) j["dev_metric"] = *r.dev_metric;
  if (r.dev_report) j["dev"] = *r.dev_report;
  return j;
}

template <class T>
struct TrainResult {
  std::vector<EpochRecord> log;
  nn::Parameters<T> best;  // parameters at the best dev evaluation (final ones without dev data)
  int best_epoch = 0;
  double best_metric = -1;
  bool loss_flagged = false;  // early training loss failed the smoothed-decrease check
};

/// True when the first five epoch losses rise more than once.
inline bool early_loss_flag(const std::vector<EpochRecord>& log) {
  if (log.size() < 5) return false;
  int rises = 0;
  for (std::size_t i = 1; i < 5; ++i) rises += log[i].train_loss > log[i - 1].train_loss ? 1 : 0;
  return rises > 1;
}

/// One optimizer step over `batch` (indices into `forms`). Returns the summed
/// loss and the pre-clip gradient norm.
template <class T>
std::pair<double, double> train_step(const Form2SeqModel<T>& model, nn::Parameters<T>& params,
                                     std::span<const PreparedForm> forms, std::span<const std::size_t> batch,
                                     std::span<const std::string> names, const TrainConfig& cfg,
                                     std::vector<nn::Gradients<T>>& scratch, nn::Gradients<T>& total) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.threads)), batch.size());
  if (scratch.size() < (workers > 1 ? batch.size() : 1)) scratch.resize(workers > 1 ? batch.size() : 1, nn::Gradients<T>(params));
  std::vector<double> losses(batch.size());
  total.zero();
  auto one = [&](std::size_t k, nn::Gradients<T>& g) {
    g.zero();
    losses[k] = static_cast<double>(model.run(params, forms[batch[k]], DecodeMode::TeacherForced, &g).loss);
  };
  auto check = [&](std::size_t k) {
    if (!std::isfinite(losses[k])) throw TrainingError("non-finite loss on form " + names[batch[k]]);
  };
  if (workers <= 1) {
    for (std::size_t k = 0; k < batch.size(); ++k) {
      one(k, scratch[0]);
      check(k);
      total += scratch[0];
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < batch.size(); k += workers) one(k, scratch[k]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      check(k);
      total += scratch[k];
    }
  }
  const double norm = nn::clip_grad_norm(total, cfg.clip);
  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  nn::adam_step(params, total, adam);
  return {std::accumulate(losses.begin(), losses.end(), 0.0), norm};
}

/// Trains `model` in place. With cfg.out set, writes best.ckpt, last.ckpt,
/// runlog.jsonl (deterministic) and timing.jsonl (wall times).
template <class T>
TrainResult<T> train(Form2SeqModel<T>& model, std::span<const NamedForm> train_set, std::span<const NamedForm> dev_set,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw TrainingError("training set is empty");
  auto& params = model.params();
  const auto train_prep = prepare_all<T>(train_set, model.config());
  const auto dev_prep = prepare_all<T>(dev_set, model.config());
  std::vector<std::string> names;
  for (const auto& f : train_set) names.push_back(f.name);

  std::ofstream runlog, timing;
  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    runlog.open(cfg.out / "runlog.jsonl");
    timing.open(cfg.out / "timing.jsonl");
    write_json_file(cfg.out / "train_config.json", to_json(cfg));
  }
  auto save = [&](const nn::Parameters<T>& p, const char* file, int epoch, double metric) {
    if (cfg.out.empty()) return;
    save_checkpoint(cfg.out / file, p, model.config(), json{{"epoch", epoch}, {"dev_metric", metric}});
  };

  TrainResult<T> result;
  result.best = params;
  nn::Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<nn::Gradients<T>> scratch;
  nn::Gradients<T> total(params);
  std::size_t elements = 0;
  for (const auto& f : train_prep) elements += f.elements.size();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0, norm_sum = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const auto [loss, norm] =
          train_step(model, params, std::span<const PreparedForm>(train_prep),
                     std::span<const std::size_t>(order).subspan(start, end - start), names, cfg, scratch, total);
      loss_sum += loss;
      norm_sum += norm;
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(elements);
    rec.grad_norm = steps ? norm_sum / static_cast<double>(steps) : 0.0;

    bool stop = false;
    if (!dev_set.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      rec.dev_loss = mean_element_loss(model, params, std::span<const PreparedForm>(dev_prep));
      const auto report = evaluate(model, params, dev_set, cfg.iou_threshold);
      rec.dev_metric = selection_metric(report, model.config().task);
      rec.dev_report = to_json(report);
      if (*rec.dev_metric > result.best_metric) {
        result.best_metric = *rec.dev_metric;
        result.best_epoch = epoch;
        result.best = params;
        since_best = 0;
        save(params, "best.ckpt", epoch, *rec.dev_metric);
      } else {
        since_best += cfg.eval_every;
      }
      if (since_best >= cfg.patience) stop = true;
      if (cfg.stop_at_metric && *rec.dev_metric >= *cfg.stop_at_metric) stop = true;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (runlog.is_open()) {
      runlog << to_json(rec).dump() << '\n';
      runlog.flush();
      timing << json{{"epoch", epoch}, {"seconds", rec.seconds}}.dump() << '\n';
    }
    if (!cfg.quiet) {
      std::fprintf(stderr, "epoch %3d  loss %.4f  |g| %.3f", epoch, rec.train_loss, rec.grad_norm);
      if (rec.dev_metric) std::fprintf(stderr, "  dev loss %.4f  dev %.2f%%", *rec.dev_loss, 100 * *rec.dev_metric);
      std::fprintf(stderr, "  (%.1fs)\n", rec.seconds);
    }
    result.log.push_back(std::move(rec));
    if (stop) break;
  }
  if (dev_set.empty()) {
    result.best = params;
    result.best_epoch = static_cast<int>(result.log.size());
  }
  result.loss_flagged = early_loss_flag(result.log);
  if (result.loss_flagged && !cfg.quiet)
    std::fprintf(stderr, "warning: training loss rose more than once during the first 5 epochs\n");
  save(params, "last.ckpt", static_cast<int>(result.log.size()), result.best_metric);
  if (dev_set.empty()) save(params, "best.ckpt", result.best_epoch, result.best_metric);
  if (runlog.is_open())
    runlog << json{{"event", "done"},
                   {"epochs", result.log.size()},
                   {"best_epoch", result.best_epoch},
                   {"best_metric", result.best_metric},
                   {"loss_flagged", result.loss_flagged}}
                  .dump()
           << '\n';
  return result;
}

}  // namespace form2seq
