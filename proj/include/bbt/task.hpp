// Synthetic few-shot classification tasks over raw token ids. Each class
// plants a token motif; train and dev hold exactly k examples per class and
// the test split is larger and disjoint by construction (fresh samples).
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbt/common.hpp"
#include "bbt/model.hpp"

namespace bbt {

enum class TaskKind { Sentiment2, Topic14, Pair2 };

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Sentiment2: return "sentiment2";
    case TaskKind::Topic14: return "topic14";
    case TaskKind::Pair2: return "pair2";
  }
  return "?";
}

inline TaskKind task_kind_from_name(const std::string& s) {
  if (s == "sentiment2") return TaskKind::Sentiment2;
  if (s == "topic14") return TaskKind::Topic14;
  if (s == "pair2") return TaskKind::Pair2;
  throw std::invalid_argument("unknown task kind: " + s);
}

struct Example {
  std::vector<uint16_t> ids;  // includes the trailing mask token
  int label = 0;
};

struct FewShotTask {
  TaskKind kind = TaskKind::Sentiment2;
  int classes = 2;
  int shots = 16;
  int seqlen = 0;
  std::vector<uint16_t> label_words;
  std::vector<Example> train, dev, test;

  Batch to_batch(const std::vector<Example>& split) const {
    Batch b;
    b.batch = static_cast<int>(split.size());
    b.seqlen = seqlen;
    b.label_words = label_words;
    for (const auto& ex : split) {
      if (static_cast<int>(ex.ids.size()) != seqlen)
        throw std::invalid_argument("to_batch: ragged example");
      b.ids.insert(b.ids.end(), ex.ids.begin(), ex.ids.end());
      b.mask_pos.push_back(static_cast<uint16_t>(seqlen - 1));
    }
    b.attention_mask.assign(static_cast<size_t>(b.batch) * seqlen, 1);
    return b;
  }

  std::vector<int> labels_of(const std::vector<Example>& split) const {
    std::vector<int> out;
    for (const auto& ex : split) out.push_back(ex.label);
    return out;
  }
};

struct TaskParams {
  TaskKind kind = TaskKind::Sentiment2;
  int classes = 2;       // fixed to 14 for Topic14, 2 for Pair2
  int shots = 16;
  int content_len = 8;   // motif tokens per example (per segment for Pair2)
  int test_per_class = 50;
  int vocab = 128;
  int mask_id = 1;
  uint64_t seed = 0;
};

namespace detail {

// Token-id layout within the vocabulary: 0 pad, 1 mask, [2, 2+C) label
// words, class pools from kPoolBase, shared noise at the top of the vocab.
constexpr int kPoolBase = 20;
constexpr int kPoolSize = 4;
constexpr double kNoiseProb = 0.25;

inline uint16_t class_token(int cls, Rng& rng) {
  return static_cast<uint16_t>(kPoolBase + cls * kPoolSize +
                               static_cast<int>(rng() % kPoolSize));
}

inline uint16_t noise_token(int vocab, int noise_base, Rng& rng) {
  return static_cast<uint16_t>(noise_base +
                               static_cast<int>(rng() % (vocab - noise_base)));
}

}  // namespace detail

inline FewShotTask make_few_shot_task(const TaskParams& tp) {
  int C = tp.classes;
  if (tp.kind == TaskKind::Topic14) C = 14;
  if (tp.kind == TaskKind::Pair2) C = 2;
  if (C < 2) throw std::invalid_argument("make_few_shot_task: need C >= 2");
  if (tp.shots < 1) throw std::invalid_argument("make_few_shot_task: need k >= 1");
  const int noise_base = detail::kPoolBase + C * detail::kPoolSize;
  if (2 + C > detail::kPoolBase || noise_base >= tp.vocab - 4)
    throw std::invalid_argument(
        "make_few_shot_task: class count exceeds available label-word ids");

  FewShotTask task;
  task.kind = tp.kind;
  task.classes = C;
  task.shots = tp.shots;
  task.label_words.resize(C);
  for (int c = 0; c < C; ++c) task.label_words[c] = static_cast<uint16_t>(2 + c);

  const int sep = noise_base;  // Pair2 separator token, first noise id
  Rng rng(mix_seed(tp.seed, 0x7461736b));

  auto gen_example = [&](int cls) {
    Example ex;
    ex.label = cls;
    if (tp.kind == TaskKind::Pair2) {
      // Two segments; label 1 when both draw from the same pool.
      const int pool_a = static_cast<int>(rng() % 2);
      const int pool_b = cls == 1 ? pool_a : 1 - pool_a;
      for (int t = 0; t < tp.content_len; ++t)
        ex.ids.push_back(uniform01(rng) < detail::kNoiseProb
                             ? detail::noise_token(tp.vocab, noise_base + 1, rng)
                             : detail::class_token(pool_a, rng));
      ex.ids.push_back(static_cast<uint16_t>(sep));
      for (int t = 0; t < tp.content_len; ++t)
        ex.ids.push_back(uniform01(rng) < detail::kNoiseProb
                             ? detail::noise_token(tp.vocab, noise_base + 1, rng)
                             : detail::class_token(pool_b, rng));
    } else {
      for (int t = 0; t < tp.content_len; ++t)
        ex.ids.push_back(uniform01(rng) < detail::kNoiseProb
                             ? detail::noise_token(tp.vocab, noise_base, rng)
                             : detail::class_token(cls, rng));
    }
    ex.ids.push_back(static_cast<uint16_t>(tp.mask_id));
    return ex;
  };

  for (int c = 0; c < C; ++c)
    for (int k = 0; k < tp.shots; ++k) task.train.push_back(gen_example(c));
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < tp.shots; ++k) task.dev.push_back(gen_example(c));
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < tp.test_per_class; ++k) task.test.push_back(gen_example(c));
  task.seqlen = static_cast<int>(task.train.front().ids.size());
  return task;
}

// Line-delimited task file: a header line, then one record per example of
// the form "<split> <label> <id> <id> ...".
inline void save_task(const FewShotTask& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_task: cannot open " + path);
  f << "#bbt-task kind=" << task_kind_name(t.kind) << " classes=" << t.classes
    << " shots=" << t.shots << " seqlen=" << t.seqlen << " labels=";
  for (size_t i = 0; i < t.label_words.size(); ++i)
    f << (i ? "," : "") << t.label_words[i];
  f << "\n";
  auto dump = [&](const char* name, const std::vector<Example>& split) {
    for (const auto& ex : split) {
      f << name << ' ' << ex.label;
      for (auto id : ex.ids) f << ' ' << id;
      f << "\n";
    }
  };
  dump("train", t.train);
  dump("dev", t.dev);
  dump("test", t.test);
}

inline FewShotTask load_task(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_task: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("#bbt-task", 0) != 0)
    throw std::runtime_error("load_task: missing header");
  FewShotTask t;
  {
    std::istringstream hs(line.substr(9));
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "kind") t.kind = task_kind_from_name(val);
      else if (key == "classes") t.classes = std::stoi(val);
      else if (key == "shots") t.shots = std::stoi(val);
      else if (key == "seqlen") t.seqlen = std::stoi(val);
      else if (key == "labels") {
        std::istringstream ls(val);
        std::string tok;
        while (std::getline(ls, tok, ','))
          t.label_words.push_back(static_cast<uint16_t>(std::stoi(tok)));
      }
    }
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split;
    Example ex;
    ls >> split >> ex.label;
    int id;
    while (ls >> id) ex.ids.push_back(static_cast<uint16_t>(id));
    if (split == "train") t.train.push_back(std::move(ex));
    else if (split == "dev") t.dev.push_back(std::move(ex));
    else if (split == "test") t.test.push_back(std::move(ex));
    else throw std::runtime_error("load_task: bad split tag: " + split);
  }
  return t;
}

}  // namespace bbt
