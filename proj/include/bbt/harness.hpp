// Experiment runner: builds tasks and models from a spec, runs one method
// per seed (in-process or against a remote endpoint), and writes the CSV and
// JSON artifacts under <outdir>/<experiment>/<seed>/.
#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbt/io.hpp"
#include "bbt/model.hpp"
#include "bbt/optimizer.hpp"
#include "bbt/service.hpp"
#include "bbt/task.hpp"

namespace bbt {

enum class Method { Bbt, Bbtv2 };

struct ExperimentSpec {
  std::string name = "exp";
  Method method = Method::Bbtv2;
  TaskParams task;
  ModelConfig model;
  RunConfig run;
  std::vector<uint64_t> seeds = {0, 1, 2};
  std::string transport = "in-process";  // or "remote:host:port"
  std::string outdir = "out";
};

struct SeedResult {
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double test_metric = 0.0;
  double final_train_loss = 0.0;
  RunHistory history;
};

struct ExperimentSummary {
  std::string name;
  std::vector<SeedResult> seeds;
  double mean = 0.0;
  double stddev = 0.0;
  bool partial = false;
};

namespace detail {

inline void mean_std_of(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  sd = std::sqrt(var);
}

struct Endpoint {
  std::string host;
  uint16_t port = 0;
};

inline std::optional<Endpoint> parse_remote(const std::string& transport) {
  if (transport.rfind("remote:", 0) != 0) return std::nullopt;
  const std::string rest = transport.substr(7);
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("transport: expected remote:host:port");
  return Endpoint{rest.substr(0, colon),
                  static_cast<uint16_t>(std::stoi(rest.substr(colon + 1)))};
}

}  // namespace detail

// One method on one seed. The model and task derive their seeds from the run
// seed so distinct seeds are fully independent few-shot splits.
inline SeedResult run_one_seed(const ExperimentSpec& spec, uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  try {
    TaskParams tp = spec.task;
    tp.seed = mix_seed(seed, 0x5370);
    const FewShotTask task = make_few_shot_task(tp);

    ModelConfig mc = spec.model;
    RunConfig rc = spec.run;
    rc.seed = seed;
    rc.prompt_len = mc.prompt_len;
    rc.hidden = mc.hidden;

    const auto remote = detail::parse_remote(spec.transport);
    std::unique_ptr<ToyModel> model;
    std::unique_ptr<EvalApi> api;
    std::vector<LayerStats> stats;
    if (remote) {
      auto r = std::make_unique<RemoteEvalApi>(remote->host, remote->port,
                                               mc.prompt_len, mc.hidden);
      stats = r->stats(task.to_batch(task.train));
      api = std::move(r);
    } else {
      model = std::make_unique<ToyModel>(mc);
      stats = model->hidden_stats(task.to_batch(task.train));
      api = std::make_unique<InProcessApi>(*model);
    }

    RunResult res = spec.method == Method::Bbt
                        ? run_bbt(*api, task, stats[0], rc)
                        : run_bbtv2(*api, task, stats, mc.layers, rc);

    out.test_metric = evaluate_metric(*api, res.prompt, task.to_batch(task.test),
                                      task.labels_of(task.test),
                                      Metric::Accuracy, task.classes);
    out.final_train_loss =
        res.history.rows.empty() ? 0.0 : res.history.rows.back().train_loss;
    out.history = std::move(res.history);
    out.ok = true;

    if (!spec.outdir.empty()) {
      namespace fs = std::filesystem;
      const fs::path dir = fs::path(spec.outdir) / spec.name / std::to_string(seed);
      fs::create_directories(dir);
      save_history_csv(out.history, (dir / "history.csv").string());
      save_snapshot(res, rc, (dir / "snapshot.json").string());
    }
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

inline ExperimentSummary run_experiment(const ExperimentSpec& spec) {
  if (spec.seeds.empty())
    throw std::invalid_argument("run_experiment: seed list is empty");
  ExperimentSummary sum;
  sum.name = spec.name;
  std::vector<double> metrics;
  for (uint64_t s : spec.seeds) {
    sum.seeds.push_back(run_one_seed(spec, s));
    if (sum.seeds.back().ok) metrics.push_back(sum.seeds.back().test_metric);
    else sum.partial = true;
  }
  if (!metrics.empty()) detail::mean_std_of(metrics, sum.mean, sum.stddev);

  if (!spec.outdir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(spec.outdir) / spec.name;
    fs::create_directories(dir);
    nlohmann::json j;
    j["experiment"] = spec.name;
    j["method"] = spec.method == Method::Bbt ? "bbt" : "bbtv2";
    j["mean"] = sum.mean;
    j["stddev"] = sum.stddev;
    j["partial"] = sum.partial;
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& r : sum.seeds) {
      nlohmann::json e = {{"seed", r.seed}, {"ok", r.ok}};
      if (r.ok) {
        e["test_metric"] = r.test_metric;
        e["final_train_loss"] = r.final_train_loss;
        e["train_calls"] = r.history.train_calls;
        e["dev_calls"] = r.history.dev_calls;
      } else {
        e["error"] = r.error;
      }
      per_seed.push_back(e);
    }
    j["seeds"] = per_seed;
    std::ofstream f((dir / "summary.json").string());
    f << j.dump(2) << "\n";
  }
  return sum;
}

// Aligned per-budget-step loss curves for specs sharing task and budget.
inline void compare_methods(const std::vector<ExperimentSpec>& specs,
                            const std::string& csv_path) {
  if (specs.empty()) throw std::invalid_argument("compare_methods: no specs");
  for (const auto& s : specs)
    if (s.run.budget != specs.front().run.budget)
      throw std::invalid_argument("compare_methods: budgets do not match");

  std::vector<ExperimentSummary> sums;
  for (const auto& s : specs) sums.push_back(run_experiment(s));

  std::ofstream f(csv_path);
  if (!f) throw std::runtime_error("compare_methods: cannot open " + csv_path);
  f << "api_calls";
  for (const auto& s : specs) f << ',' << s.name << "_train_loss";
  f << "\n";
  // One row per budget step present in the first successful run of each spec;
  // rows are aligned on api_calls (carrying the last value forward).
  std::vector<const RunHistory*> hist;
  for (const auto& sum : sums) {
    const RunHistory* h = nullptr;
    for (const auto& r : sum.seeds)
      if (r.ok) {
        h = &r.history;
        break;
      }
    if (!h) throw std::runtime_error("compare_methods: no successful run");
    hist.push_back(h);
  }
  std::vector<size_t> idx(hist.size(), 0);
  std::vector<double> last(hist.size(), 0.0);
  for (uint64_t step = 1; step <= static_cast<uint64_t>(specs.front().run.budget);
       ++step) {
    bool any = false;
    for (size_t i = 0; i < hist.size(); ++i)
      while (idx[i] < hist[i]->rows.size() &&
             hist[i]->rows[idx[i]].api_calls == step) {
        last[i] = hist[i]->rows[idx[i]].train_loss;
        ++idx[i];
        any = true;
      }
    if (!any) continue;
    f << step;
    for (double v : last) f << ',' << format_double(v);
    f << "\n";
  }
}

}  // namespace bbt
