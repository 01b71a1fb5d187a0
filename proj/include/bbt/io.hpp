// CSV/JSON artifacts: run histories, best-prompt snapshots, summaries.
#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbt/optimizer.hpp"

namespace bbt {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_history_csv(const RunHistory& h, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_history_csv: cannot open " + path);
  f << "api_calls,layer,train_loss,dev_metric\n";
  for (const auto& r : h.rows)
    f << r.api_calls << ',' << r.layer << ',' << format_double(r.train_loss)
      << ',' << format_double(r.dev_metric) << "\n";
}

inline RunHistory load_history_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_history_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "api_calls,layer,train_loss,dev_metric")
    throw std::runtime_error("load_history_csv: bad header in " + path);
  RunHistory h;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    HistoryRow r;
    std::istringstream ls(line);
    char comma;
    ls >> r.api_calls >> comma >> r.layer >> comma >> r.train_loss >> comma >>
        r.dev_metric;
    if (!ls) throw std::runtime_error("load_history_csv: bad row: " + line);
    h.rows.push_back(r);
  }
  if (!h.rows.empty()) h.train_calls = h.rows.back().api_calls;
  return h;
}

inline nlohmann::json history_to_json(const RunHistory& h) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : h.rows)
    rows.push_back({{"api_calls", r.api_calls},
                    {"layer", r.layer},
                    {"train_loss", r.train_loss},
                    {"dev_metric", r.dev_metric}});
  return {{"rows", rows},
          {"train_calls", h.train_calls},
          {"dev_calls", h.dev_calls},
          {"best_dev", h.best_dev},
          {"early_stopped", h.early_stopped}};
}

// Snapshot of the returned prompt: per-layer subspace vectors plus the
// projection seeds, enough to re-instantiate the projected prompt exactly.
inline void save_snapshot(const RunResult& res, const RunConfig& cfg,
                          const std::string& path) {
  nlohmann::json j;
  j["subspace_dim"] = cfg.subspace_dim;
  j["prompt_len"] = cfg.prompt_len;
  j["hidden"] = cfg.hidden;
  j["alpha"] = cfg.alpha;
  j["sigma_z"] = cfg.sigma_z;
  j["proj"] = cfg.proj == ProjKind::Normal ? "normal" : "uniform";
  j["seed"] = cfg.seed;
  j["proj_seeds"] = res.proj_seeds;
  j["best_dev"] = res.history.best_dev;
  nlohmann::json zs = nlohmann::json::array();
  for (const auto& z : res.best_z) {
    nlohmann::json v = nlohmann::json::array();
    for (int i = 0; i < z.size(); ++i) v.push_back(z[i]);
    zs.push_back(v);
  }
  j["z"] = zs;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_snapshot: cannot open " + path);
  f << j.dump(2) << "\n";
}

}  // namespace bbt
