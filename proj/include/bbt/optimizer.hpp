// Subspace prompt optimization against an abstract inference API: the
// single-subspace input-layer loop and the layerwise divide-and-conquer loop
// that alternates one CMA-ES step per layer, bottom to top. The budget meters
// training API calls only; dev-set evaluations are counted separately.
#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bbt/cma_es.hpp"
#include "bbt/common.hpp"
#include "bbt/model.hpp"
#include "bbt/projection.hpp"
#include "bbt/task.hpp"

namespace bbt {

class EvalApi {
 public:
  virtual ~EvalApi() = default;

  Eigen::MatrixXf evaluate(const DeepPrompt& prompt, const Batch& batch) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_evaluate(prompt, batch);
  }

  uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }

 protected:
  virtual Eigen::MatrixXf do_evaluate(const DeepPrompt&, const Batch&) = 0;

 private:
  std::atomic<uint64_t> calls_{0};
};

class InProcessApi final : public EvalApi {
 public:
  explicit InProcessApi(const ToyModel& model) : model_(model) {}

 protected:
  Eigen::MatrixXf do_evaluate(const DeepPrompt& p, const Batch& b) override {
    return model_.forward(&p, b);
  }

 private:
  const ToyModel& model_;
};

struct RunConfig {
  int budget = 8000;
  int subspace_dim = 500;
  int prompt_len = 10;
  int hidden = 64;
  double alpha = 1.0;
  double sigma_z = 0.5;
  std::optional<int> lambda = 20;  // nullopt -> floor(4 + 3 ln d)
  uint64_t seed = 0;
  ProjKind proj = ProjKind::Normal;
  int patience = 1000;    // API calls without dev improvement before stopping
  int dev_interval = 0;   // in API calls; 0 -> one full sweep (lambda * L)
};

struct HistoryRow {
  uint64_t api_calls = 0;
  int layer = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
};

struct RunHistory {
  std::vector<HistoryRow> rows;
  uint64_t train_calls = 0;
  uint64_t dev_calls = 0;
  double best_dev = 0.0;
  bool early_stopped = false;
};

struct RunResult {
  DeepPrompt prompt;                    // dev-best offsets
  std::vector<Eigen::VectorXd> best_z;  // per optimized layer
  DeepPrompt final_prompt;              // offsets at the last CMA-ES mean
  std::vector<uint64_t> proj_seeds;
  RunHistory history;
};

inline double cross_entropy(const Eigen::MatrixXf& logits,
                            const std::vector<int>& labels) {
  if (logits.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("cross_entropy: shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols())
      throw std::invalid_argument("cross_entropy: label out of range");
    const double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      z += std::exp(static_cast<double>(logits(i, c)) - mx);
    total += std::log(z) - (static_cast<double>(logits(i, y)) - mx);
  }
  return total / static_cast<double>(logits.rows());
}

enum class Metric { Accuracy, F1 };

// Argmax over label-word logits; ties go to the lowest label index.
inline std::vector<int> predict(const Eigen::MatrixXf& logits) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = static_cast<int>(c);
    out.push_back(best);
  }
  return out;
}

inline double score_predictions(const std::vector<int>& pred,
                                const std::vector<int>& labels, Metric metric,
                                int classes) {
  if (pred.size() != labels.size() || pred.empty())
    throw std::invalid_argument("score_predictions: shape mismatch");
  if (metric == Metric::Accuracy) {
    int ok = 0;
    for (size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
    return static_cast<double>(ok) / static_cast<double>(pred.size());
  }
  if (classes != 2)
    throw std::invalid_argument("score_predictions: F1 requires 2 classes");
  int tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && labels[i] == 1) ++tp;
    if (pred[i] == 1 && labels[i] == 0) ++fp;
    if (pred[i] == 0 && labels[i] == 1) ++fn;
  }
  const int denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom);
}

inline double evaluate_metric(EvalApi& api, const DeepPrompt& prompt,
                              const Batch& batch, const std::vector<int>& labels,
                              Metric metric, int classes) {
  return score_predictions(predict(api.evaluate(prompt, batch)), labels, metric,
                           classes);
}

namespace detail {

// Shared loop behind run_bbt and run_bbtv2. `inject_layers` is 1 for the
// input-layer variant and L for the deep variant; stats must supply the
// distribution of the hidden states entering each optimized layer
// (stats[0] is always the embedding layer).
inline RunResult run_loop(EvalApi& api, const FewShotTask& task,
                          const std::vector<LayerStats>& stats,
                          int inject_layers, const RunConfig& cfg) {
  const int L = inject_layers;
  if (task.classes < 2)
    throw std::invalid_argument("run: task must have at least 2 classes");
  if (static_cast<int>(stats.size()) < L)
    throw std::invalid_argument("run: stats length does not cover every layer");
  const int d = cfg.subspace_dim;
  const int D = cfg.prompt_len * cfg.hidden;
  const int lambda =
      cfg.lambda ? *cfg.lambda
                 : static_cast<int>(std::floor(4.0 + 3.0 * std::log(d)));
  if (cfg.budget < lambda * L)
    throw std::invalid_argument(
        "run: budget too small for one full sweep (need lambda * L calls)");
  const int dev_interval = cfg.dev_interval > 0 ? cfg.dev_interval : lambda * L;

  const Batch train_batch = task.to_batch(task.train);
  const Batch dev_batch = task.to_batch(task.dev);
  const std::vector<int> train_labels = task.labels_of(task.train);
  const std::vector<int> dev_labels = task.labels_of(task.dev);

  RunResult res;
  std::vector<ProjectionMatrix> proj;
  std::vector<std::unique_ptr<CmaEs>> cma;
  for (int j = 0; j < L; ++j) {
    const double param =
        cfg.proj == ProjKind::Normal
            ? compute_sigma_a(cfg.alpha, stats[j].sigma_hat, d, cfg.sigma_z)
            : uniform_half_width(d);
    const uint64_t pseed = mix_seed(cfg.seed, 0xa5000000ULL + j);
    proj.push_back(ProjectionMatrix::sample(D, d, cfg.proj, param, pseed));
    res.proj_seeds.push_back(pseed);
    cma.push_back(std::make_unique<CmaEs>(d, cfg.sigma_z, lambda,
                                          mix_seed(cfg.seed, 0xc3000000ULL + j)));
  }

  // Running subspace points (CMA-ES means) and their projected offsets.
  std::vector<Eigen::VectorXd> z(L, Eigen::VectorXd::Zero(d));
  DeepPrompt current;
  current.offsets.assign(L, Eigen::MatrixXf::Zero(cfg.prompt_len, cfg.hidden));
  auto project_into = [&](int j, const Eigen::VectorXd& zj, DeepPrompt& p) {
    const Eigen::VectorXf flat = proj[j].apply(zj);
    p.offsets[j] =
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>(flat.data(),
                                                         cfg.prompt_len,
                                                         cfg.hidden);
  };

  RunHistory& hist = res.history;
  auto dev_eval = [&](const DeepPrompt& p) {
    ++hist.dev_calls;
    return score_predictions(predict(api.evaluate(p, dev_batch)), dev_labels,
                             Metric::Accuracy, task.classes);
  };

  hist.best_dev = dev_eval(current);
  res.prompt = current;
  res.best_z = z;
  uint64_t calls = 0, last_improve = 0, last_dev = 0;
  double dev_metric = hist.best_dev;

  bool stop = false;
  while (!stop && calls + static_cast<uint64_t>(lambda) * L <=
                      static_cast<uint64_t>(cfg.budget)) {
    for (int j = 0; j < L && !stop; ++j) {
      auto cands = cma[j]->ask();
      std::vector<double> losses(cands.size());
      DeepPrompt trial = current;
      for (size_t k = 0; k < cands.size(); ++k) {
        project_into(j, cands[k], trial);
        losses[k] =
            cross_entropy(api.evaluate(trial, train_batch), train_labels);
        ++calls;
      }
      cma[j]->tell(cands, losses);
      z[j] = cma[j]->mean();
      project_into(j, z[j], current);

      double gen_best = losses[0];
      for (double l : losses) gen_best = std::min(gen_best, l);

      if (calls - last_dev >= static_cast<uint64_t>(dev_interval)) {
        last_dev = calls;
        dev_metric = dev_eval(current);
        if (dev_metric > hist.best_dev) {
          hist.best_dev = dev_metric;
          res.prompt = current;
          res.best_z = z;
          last_improve = calls;
        }
      }
      hist.rows.push_back(HistoryRow{calls, j, gen_best, dev_metric});
      if (calls - last_improve >= static_cast<uint64_t>(cfg.patience)) {
        hist.early_stopped = true;
        stop = true;
      }
    }
  }
  hist.train_calls = calls;
  res.final_prompt = current;
  return res;
}

}  // namespace detail

// Input-layer-only optimization in one frozen subspace. stats_embed is the
// embedding-layer statistics used to size the normal projection.
inline RunResult run_bbt(EvalApi& api, const FewShotTask& task,
                         const LayerStats& stats_embed, const RunConfig& cfg) {
  return detail::run_loop(api, task, {stats_embed}, 1, cfg);
}

// Layerwise divide-and-conquer optimization. stats must come from
// hidden_stats (length L or L+1); layer j's projection is sized from the
// hidden states entering layer j, i.e. stats[j-1].
inline RunResult run_bbtv2(EvalApi& api, const FewShotTask& task,
                           const std::vector<LayerStats>& stats, int layers,
                           const RunConfig& cfg) {
  if (static_cast<int>(stats.size()) != layers &&
      static_cast<int>(stats.size()) != layers + 1)
    throw std::invalid_argument("run_bbtv2: stats length does not match layer count");
  return detail::run_loop(api, task, stats, layers, cfg);
}

}  // namespace bbt
