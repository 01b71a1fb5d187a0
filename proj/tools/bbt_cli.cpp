// Experiment harness. Subcommands:
//   run       one experiment (method x task x seeds), CSV/JSON artifacts
//   sweep     repeat an experiment over a list of subspace dimensions
//   compare   aligned loss curves for several methods on one task
//   serve     expose a model checkpoint over TCP
//   gen-task  write a synthetic few-shot task to a file
//   stats     clipped per-layer hidden statistics, local or remote
// Every flag can also come from a key=value config file (--config); command
// line values take precedence over the file.
#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "bbt/harness.hpp"
#include "bbt/io.hpp"
#include "bbt/model.hpp"
#include "bbt/service.hpp"
#include "bbt/task.hpp"

namespace {

struct Options {
  std::string name = "exp";
  std::string method = "bbtv2";
  std::string task = "sentiment2";
  int shots = 16;
  int content_len = 8;
  int test_per_class = 50;
  std::vector<uint64_t> seeds = {0, 1, 2};
  int budget = 8000;
  int dim = 500;
  int prompt_len = 10;
  int hidden = 64;
  int layers = 4;
  int vocab = 128;
  uint64_t model_seed = 0;
  double alpha = 1.0;
  double sigma_z = 0.5;
  int lambda = 20;
  int patience = 0;  // 0 -> never stop early
  std::string proj = "normal";
  std::string transport = "in-process";
  std::string out = "out";
  std::string checkpoint;
};

bbt::TaskKind parse_task(const std::string& s) {
  if (s == "sentiment2") return bbt::TaskKind::Sentiment2;
  if (s == "topic14") return bbt::TaskKind::Topic14;
  if (s == "pair2") return bbt::TaskKind::Pair2;
  throw CLI::ValidationError("--task", "unknown task kind " + s);
}

bbt::ExperimentSpec to_spec(const Options& o) {
  bbt::ExperimentSpec spec;
  spec.name = o.name;
  if (o.method == "bbt") spec.method = bbt::Method::Bbt;
  else if (o.method == "bbtv2") spec.method = bbt::Method::Bbtv2;
  else throw CLI::ValidationError("--method", "expected bbt or bbtv2");

  spec.task.kind = parse_task(o.task);
  spec.task.shots = o.shots;
  spec.task.content_len = o.content_len;
  spec.task.test_per_class = o.test_per_class;
  spec.task.vocab = o.vocab;

  spec.model.vocab = o.vocab;
  spec.model.hidden = o.hidden;
  spec.model.layers = o.layers;
  spec.model.prompt_len = o.prompt_len;
  spec.model.seed = o.model_seed;

  spec.run.budget = o.budget;
  spec.run.subspace_dim = o.dim;
  spec.run.alpha = o.alpha;
  spec.run.sigma_z = o.sigma_z;
  spec.run.lambda = o.lambda;
  spec.run.patience = o.patience > 0 ? o.patience : o.budget;
  if (o.proj == "normal") spec.run.proj = bbt::ProjKind::Normal;
  else if (o.proj == "uniform") spec.run.proj = bbt::ProjKind::Uniform;
  else throw CLI::ValidationError("--proj", "expected uniform or normal");

  spec.seeds = o.seeds;
  spec.transport = o.transport;
  spec.outdir = o.out;
  return spec;
}

void add_common_flags(CLI::App* cmd, Options& o) {
  cmd->fallthrough();
  cmd->add_option("--name", o.name, "experiment name (output subdirectory)");
  cmd->add_option("--method", o.method, "bbt or bbtv2");
  cmd->add_option("--task", o.task, "sentiment2, topic14 or pair2");
  cmd->add_option("--shots", o.shots, "training examples per class");
  cmd->add_option("--content-len", o.content_len, "content tokens per example");
  cmd->add_option("--seed", o.seeds, "run seeds (repeatable)");
  cmd->add_option("--budget", o.budget, "training API call budget");
  cmd->add_option("--dim", o.dim, "subspace dimensionality");
  cmd->add_option("--prompt-len", o.prompt_len, "prompt positions");
  cmd->add_option("--hidden", o.hidden, "model hidden size");
  cmd->add_option("--layers", o.layers, "model layer count");
  cmd->add_option("--vocab", o.vocab, "vocabulary size");
  cmd->add_option("--model-seed", o.model_seed, "model weight seed");
  cmd->add_option("--alpha", o.alpha, "projection scale multiplier");
  cmd->add_option("--sigma-z", o.sigma_z, "initial CMA-ES step size");
  cmd->add_option("--lambda", o.lambda, "population size");
  cmd->add_option("--patience", o.patience,
                  "API calls without dev improvement before stopping (0: off)");
  cmd->add_option("--proj", o.proj, "uniform or normal");
  cmd->add_option("--transport", o.transport,
                  "in-process or remote:host:port");
  cmd->add_option("--out", o.out, "output directory");
}

void print_summary(const bbt::ExperimentSummary& sum) {
  for (const auto& r : sum.seeds) {
    if (r.ok)
      std::printf("seed %llu: test acc %.4f, final train loss %.6f, "
                  "%llu train calls\n",
                  static_cast<unsigned long long>(r.seed), r.test_metric,
                  r.final_train_loss,
                  static_cast<unsigned long long>(r.history.train_calls));
    else
      std::printf("seed %llu: FAILED: %s\n",
                  static_cast<unsigned long long>(r.seed), r.error.c_str());
  }
  std::printf("%s: %.4f +- %.4f over %zu seeds%s\n", sum.name.c_str(), sum.mean,
              sum.stddev, sum.seeds.size(), sum.partial ? " (partial)" : "");
}

int cmd_run(const Options& o) {
  print_summary(bbt::run_experiment(to_spec(o)));
  return 0;
}

int cmd_sweep(const Options& o, const std::vector<int>& dims) {
  const auto base = to_spec(o);
  const std::string csv = base.outdir + "/" + base.name + "_sweep.csv";
  std::ofstream f(csv);
  f << "dim,mean,stddev\n";
  for (int d : dims) {
    bbt::ExperimentSpec spec = base;
    spec.name = base.name + "_d" + std::to_string(d);
    spec.run.subspace_dim = d;
    const auto sum = bbt::run_experiment(spec);
    print_summary(sum);
    f << d << ',' << bbt::format_double(sum.mean) << ','
      << bbt::format_double(sum.stddev) << "\n";
  }
  std::printf("sweep table: %s\n", csv.c_str());
  return 0;
}

int cmd_compare(const Options& o, const std::vector<std::string>& methods) {
  std::vector<bbt::ExperimentSpec> specs;
  for (const auto& m : methods) {
    Options each = o;
    each.method = m;
    each.name = o.name + "_" + m;
    specs.push_back(to_spec(each));
  }
  const std::string csv = o.out + "/" + o.name + "_compare.csv";
  bbt::compare_methods(specs, csv);
  std::printf("aligned loss curves: %s\n", csv.c_str());
  return 0;
}

int cmd_serve(const Options& o, const std::string& host, uint16_t port) {
  bbt::ModelConfig mc;
  mc.vocab = o.vocab;
  mc.hidden = o.hidden;
  mc.layers = o.layers;
  mc.prompt_len = o.prompt_len;
  mc.seed = o.model_seed;
  bbt::ToyModel model = o.checkpoint.empty() ? bbt::ToyModel(mc)
                                             : bbt::ToyModel::load(o.checkpoint);
  bbt::Server server(model, host, port);
  server.start();
  std::printf("serving on %s:%u (ctrl-c to stop)\n", host.c_str(),
              server.port());
  std::fflush(stdout);
  static volatile std::sig_atomic_t stop = 0;
  std::signal(SIGINT, [](int) { stop = 1; });
  std::signal(SIGTERM, [](int) { stop = 1; });
  while (!stop) {
    timespec ts{0, 200 * 1000 * 1000};
    nanosleep(&ts, nullptr);
  }
  server.stop();
  std::printf("stopped; served %llu requests, %llu bytes up, %llu down\n",
              static_cast<unsigned long long>(server.ledger().requests()),
              static_cast<unsigned long long>(server.ledger().upload_bytes()),
              static_cast<unsigned long long>(server.ledger().download_bytes()));
  return 0;
}

int cmd_gen_task(const Options& o, const std::string& path, uint64_t task_seed) {
  bbt::TaskParams tp;
  tp.kind = parse_task(o.task);
  tp.shots = o.shots;
  tp.content_len = o.content_len;
  tp.test_per_class = o.test_per_class;
  tp.vocab = o.vocab;
  tp.seed = task_seed;
  const auto task = bbt::make_few_shot_task(tp);
  bbt::save_task(task, path);
  std::printf("%s: %zu train / %zu dev / %zu test examples, %d classes\n",
              path.c_str(), task.train.size(), task.dev.size(),
              task.test.size(), task.classes);
  return 0;
}

int cmd_stats(const Options& o) {
  bbt::TaskParams tp;
  tp.kind = parse_task(o.task);
  tp.shots = o.shots;
  tp.content_len = o.content_len;
  tp.vocab = o.vocab;
  tp.seed = o.seeds.empty() ? 0 : o.seeds.front();
  const auto task = bbt::make_few_shot_task(tp);
  const bbt::Batch b = task.to_batch(task.train);

  std::vector<bbt::LayerStats> stats;
  if (const auto remote = bbt::detail::parse_remote(o.transport)) {
    bbt::RemoteEvalApi api(remote->host, remote->port, o.prompt_len, o.hidden);
    stats = api.stats(b);
  } else {
    bbt::ModelConfig mc;
    mc.vocab = o.vocab;
    mc.hidden = o.hidden;
    mc.layers = o.layers;
    mc.prompt_len = o.prompt_len;
    mc.seed = o.model_seed;
    bbt::ToyModel model(mc);
    stats = model.hidden_stats(b);
  }
  std::printf("layer,mu,sigma\n");
  for (const auto& s : stats)
    std::printf("%d,%s,%s\n", s.layer, bbt::format_double(s.mu_hat).c_str(),
                bbt::format_double(s.sigma_hat).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box deep prompt tuning harness"};
  app.require_subcommand(1);
  // key=value config file; keys live in a section named after the
  // subcommand, e.g. [run] budget=8000. CLI flags override file values.
  app.set_config("--config", "", "key=value config file");

  Options o;

  auto* run = app.add_subcommand("run", "run one experiment over its seeds");
  add_common_flags(run, o);

  auto* sweep =
      app.add_subcommand("sweep", "repeat an experiment over subspace dims");
  add_common_flags(sweep, o);
  std::vector<int> dims = {10, 50, 100, 200, 500, 1000};
  sweep->add_option("--dims", dims, "subspace dimensions to sweep");

  auto* compare =
      app.add_subcommand("compare", "aligned loss curves for several methods");
  add_common_flags(compare, o);
  std::vector<std::string> methods = {"bbt", "bbtv2"};
  compare->add_option("--methods", methods, "methods to compare");

  auto* serve = app.add_subcommand("serve", "expose a model over TCP");
  add_common_flags(serve, o);
  std::string host = "127.0.0.1";
  uint16_t port = 0;
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "bind port (0: ephemeral)");
  serve->add_option("--checkpoint", o.checkpoint, "model checkpoint to serve");

  auto* gen = app.add_subcommand("gen-task", "write a synthetic task file");
  add_common_flags(gen, o);
  std::string task_path = "task.txt";
  uint64_t task_seed = 0;
  gen->add_option("--file", task_path, "output path");
  gen->add_option("--task-seed", task_seed, "task sampling seed");

  auto* stats =
      app.add_subcommand("stats", "clipped per-layer hidden statistics");
  add_common_flags(stats, o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o, dims);
    if (compare->parsed()) return cmd_compare(o, methods);
    if (serve->parsed()) return cmd_serve(o, host, port);
    if (gen->parsed()) return cmd_gen_task(o, task_path, task_seed);
    if (stats->parsed()) return cmd_stats(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
