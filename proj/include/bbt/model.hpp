// Deterministic toy residual transformer served behind the inference API.
// Every layer is a pure pre-residual block x_{j+1} = x_j + f_j(x_j) with
// single-head attention followed by a two-layer tanh feed-forward; there is
// no normalization anywhere, so the layerwise additive decomposition holds
// exactly. All parameters are seeded-random, quantized to f32 at creation
// (checkpoint round-trips are bit-exact) and frozen afterwards.
//
// Prompt handling: the first prompt_len positions form a prompt stream that
// attends only to itself, while content positions attend to the full
// sequence. This keeps prompt hidden states independent of the content, so
// the initial deep prompt captured once per model is exactly what a plain
// forward pass would produce at those positions.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbt/common.hpp"
#include "bbt/projection.hpp"

namespace bbt {

struct ModelConfig {
  int vocab = 128;
  int hidden = 64;
  int layers = 4;
  int prompt_len = 10;
  int mask_id = 1;
  uint64_t seed = 0;
  float embed_std = 0.02f;
  float head_gain = 2.0f;
};

// Tunable per-layer prompt offsets. offsets.size() == 1 means input-layer
// injection only (the flat/BBT mode); offsets.size() == L injects at every
// layer (the deep mode). Each matrix is prompt_len x hidden.
struct DeepPrompt {
  std::vector<Eigen::MatrixXf> offsets;
};

// A token-id batch as seen by the inference API. ids hold content tokens
// only; prompt positions are prepended by the model. mask_pos indexes into
// the content part.
struct Batch {
  int batch = 0;
  int seqlen = 0;
  std::vector<uint16_t> ids;
  std::vector<uint8_t> attention_mask;
  std::vector<uint16_t> mask_pos;
  std::vector<uint16_t> label_words;
};

struct InitialPrompt {
  std::vector<uint16_t> token_ids;
  std::vector<Eigen::MatrixXf> p0;  // entering each layer, size L
};

class ToyModel {
 public:
  explicit ToyModel(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab < 2 || cfg.hidden < 1 || cfg.layers < 1 || cfg.prompt_len < 1)
      throw std::invalid_argument("ToyModel: bad config");
    const int H = cfg.hidden, F = 2 * cfg.hidden;
    {
      Rng rng(mix_seed(cfg.seed, 0x656d6264));
      embed_ = randn(rng, cfg.vocab, H, cfg.embed_std);
    }
    layers_.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      Rng rng(mix_seed(cfg.seed, 0x6c617900 + l));
      const float ws = 1.0f / std::sqrt(static_cast<float>(H));
      layers_[l].wq = randn(rng, H, H, ws);
      layers_[l].wk = randn(rng, H, H, ws);
      layers_[l].wv = randn(rng, H, H, ws);
      layers_[l].w1 = randn(rng, H, F, ws);
      layers_[l].w2 = randn(rng, F, H, 1.0f / std::sqrt(static_cast<float>(F)));
    }
    {
      Rng rng(mix_seed(cfg.seed, 0x68656164));
      head_ = randn(rng, H, cfg.vocab,
                    cfg.head_gain / std::sqrt(static_cast<float>(H)));
    }
    initial_ = capture_initial_prompt(cfg.seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const Eigen::MatrixXf& embedding() const { return embed_; }
  const InitialPrompt& initial_prompt() const { return initial_; }
  int prompt_dim() const { return cfg_.prompt_len * cfg_.hidden; }

  DeepPrompt zero_prompt(int inject_layers) const {
    if (inject_layers != 1 && inject_layers != cfg_.layers)
      throw std::invalid_argument("zero_prompt: inject_layers must be 1 or L");
    DeepPrompt p;
    p.offsets.assign(inject_layers,
                     Eigen::MatrixXf::Zero(cfg_.prompt_len, cfg_.hidden));
    return p;
  }

  // Samples prompt_len vocabulary ids, sets the input prompt to their
  // embeddings, and records the prompt hidden states entering every layer.
  InitialPrompt capture_initial_prompt(uint64_t seed) const {
    InitialPrompt ip;
    Rng rng(mix_seed(seed, 0x70696473));
    ip.token_ids.resize(cfg_.prompt_len);
    for (auto& id : ip.token_ids)
      id = static_cast<uint16_t>(rng() % static_cast<uint64_t>(cfg_.vocab));
    Eigen::MatrixXf p(cfg_.prompt_len, cfg_.hidden);
    for (int i = 0; i < cfg_.prompt_len; ++i) p.row(i) = embed_.row(ip.token_ids[i]);
    for (int l = 0; l < cfg_.layers; ++l) {
      ip.p0.push_back(p);
      p += block(l, p, p, nullptr);
    }
    return ip;
  }

  // Returns batch x |label_words| logits at the mask position. prompt may be
  // null (plain initial prompt, equivalent to all-zero offsets).
  Eigen::MatrixXf forward(const DeepPrompt* prompt, const Batch& b) const {
    return forward_impl(prompt, b, nullptr);
  }

  // One forward pass with the initial prompt attached; pools every
  // hidden-state entry per layer boundary and runs the clip-then-measure
  // statistics. Index 0 is the embedding layer (input of layer 1), index j
  // the output of layer j.
  std::vector<LayerStats> hidden_stats(const Batch& b, int clip_rounds = 5) const {
    std::vector<std::vector<double>> pools(cfg_.layers + 1);
    forward_impl(nullptr, b, &pools);
    std::vector<LayerStats> out;
    for (int j = 0; j <= cfg_.layers; ++j)
      out.push_back(observe_stats(std::move(pools[j]), clip_rounds, j));
    return out;
  }

  // Content-row hidden states entering each layer (and the final output) for
  // one example of the batch; diagnostic hook used by the locality checks.
  std::vector<Eigen::MatrixXf> forward_trace(const DeepPrompt* prompt,
                                             const Batch& b, int example) const {
    Batch one;
    one.batch = 1;
    one.seqlen = b.seqlen;
    one.label_words = b.label_words;
    const size_t off = static_cast<size_t>(example) * b.seqlen;
    one.ids.assign(b.ids.begin() + off, b.ids.begin() + off + b.seqlen);
    one.attention_mask.assign(b.attention_mask.begin() + off,
                              b.attention_mask.begin() + off + b.seqlen);
    one.mask_pos = {b.mask_pos[example]};
    std::vector<Eigen::MatrixXf> trace;
    forward_impl(prompt, one, nullptr, &trace);
    return trace;
  }

  // Max-abs difference between the iterated forward x1 -> x_{L+1} and the
  // additive form x1 + sum_j f_j(x_j), on a raw content-only sequence.
  double decomposition_check(const Eigen::MatrixXf& x1) const {
    if (x1.cols() != cfg_.hidden)
      throw std::invalid_argument("decomposition_check: wrong hidden dim");
    Eigen::MatrixXf x = x1;
    Eigen::MatrixXf total = Eigen::MatrixXf::Zero(x1.rows(), x1.cols());
    for (int l = 0; l < cfg_.layers; ++l) {
      Eigen::MatrixXf d = block(l, x, x, nullptr);
      total += d;
      x += d;
    }
    return static_cast<double>((x - (x1 + total)).cwiseAbs().maxCoeff());
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ToyModel::save: cannot open " + path);
    f.write("BBCK", 4);
    write_u32(f, 1);  // version
    write_u32(f, cfg_.vocab);
    write_u32(f, cfg_.hidden);
    write_u32(f, cfg_.layers);
    write_u32(f, cfg_.prompt_len);
    write_u32(f, cfg_.mask_id);
    f.write(reinterpret_cast<const char*>(&cfg_.seed), 8);
    f.write(reinterpret_cast<const char*>(&cfg_.embed_std), 4);
    f.write(reinterpret_cast<const char*>(&cfg_.head_gain), 4);
    for (auto id : initial_.token_ids)
      f.write(reinterpret_cast<const char*>(&id), 2);
    write_mat(f, embed_);
    for (const auto& l : layers_) {
      write_mat(f, l.wq);
      write_mat(f, l.wk);
      write_mat(f, l.wv);
      write_mat(f, l.w1);
      write_mat(f, l.w2);
    }
    write_mat(f, head_);
  }

  static ToyModel load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ToyModel::load: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "BBCK")
      throw std::runtime_error("ToyModel::load: bad magic");
    if (read_u32(f) != 1) throw std::runtime_error("ToyModel::load: bad version");
    ModelConfig cfg;
    cfg.vocab = read_u32(f);
    cfg.hidden = read_u32(f);
    cfg.layers = read_u32(f);
    cfg.prompt_len = read_u32(f);
    cfg.mask_id = static_cast<int>(read_u32(f));
    f.read(reinterpret_cast<char*>(&cfg.seed), 8);
    f.read(reinterpret_cast<char*>(&cfg.embed_std), 4);
    f.read(reinterpret_cast<char*>(&cfg.head_gain), 4);
    ToyModel m(cfg);
    for (auto& id : m.initial_.token_ids) f.read(reinterpret_cast<char*>(&id), 2);
    read_mat(f, m.embed_);
    for (auto& l : m.layers_) {
      read_mat(f, l.wq);
      read_mat(f, l.wk);
      read_mat(f, l.wv);
      read_mat(f, l.w1);
      read_mat(f, l.w2);
    }
    read_mat(f, m.head_);
    if (!f) throw std::runtime_error("ToyModel::load: truncated file");
    // Hidden-state capture depends on the (possibly edited) weights.
    InitialPrompt ip;
    ip.token_ids = m.initial_.token_ids;
    Eigen::MatrixXf p(cfg.prompt_len, cfg.hidden);
    for (int i = 0; i < cfg.prompt_len; ++i)
      p.row(i) = m.embed_.row(ip.token_ids[i]);
    for (int l = 0; l < cfg.layers; ++l) {
      ip.p0.push_back(p);
      p += m.block(l, p, p, nullptr);
    }
    m.initial_ = std::move(ip);
    return m;
  }

 private:
  struct Layer {
    Eigen::MatrixXf wq, wk, wv, w1, w2;
  };

  static Eigen::MatrixXf randn(Rng& rng, int r, int c, float std) {
    Eigen::MatrixXf m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        m(i, j) = std * static_cast<float>(gaussian(rng));
    return m;
  }

  // f_l applied to query rows `q`, attending over key/value rows `kv`.
  // key_mask (over kv rows) may be null meaning all-visible.
  Eigen::MatrixXf block(int l, const Eigen::MatrixXf& q,
                        const Eigen::MatrixXf& kv,
                        const std::vector<uint8_t>* key_mask) const {
    const Layer& L = layers_[l];
    const float scale = 1.0f / std::sqrt(static_cast<float>(cfg_.hidden));
    Eigen::MatrixXf Q = q * L.wq;
    Eigen::MatrixXf K = kv * L.wk;
    Eigen::MatrixXf V = kv * L.wv;
    Eigen::MatrixXf S = (Q * K.transpose()) * scale;
    if (key_mask) {
      for (int j = 0; j < S.cols(); ++j)
        if (!(*key_mask)[j]) S.col(j).setConstant(-1e30f);
    }
    for (int i = 0; i < S.rows(); ++i) {
      const float m = S.row(i).maxCoeff();
      S.row(i) = (S.row(i).array() - m).exp();
      S.row(i) /= S.row(i).sum();
    }
    Eigen::MatrixXf A = S * V;
    return (A * L.w1).array().tanh().matrix() * L.w2;
  }

  Eigen::MatrixXf forward_impl(const DeepPrompt* prompt, const Batch& b,
                               std::vector<std::vector<double>>* pools,
                               std::vector<Eigen::MatrixXf>* trace = nullptr) const {
    const int np = cfg_.prompt_len, H = cfg_.hidden, Lc = cfg_.layers;
    const bool deep = prompt && static_cast<int>(prompt->offsets.size()) == Lc;
    if (prompt) {
      if (prompt->offsets.size() != 1 &&
          static_cast<int>(prompt->offsets.size()) != Lc)
        throw std::invalid_argument("forward: prompt must have 1 or L layers");
      for (const auto& o : prompt->offsets)
        if (o.rows() != np || o.cols() != H)
          throw std::invalid_argument("forward: prompt offset shape mismatch");
    }
    if (b.batch < 1 || b.seqlen < 1 ||
        b.ids.size() != static_cast<size_t>(b.batch) * b.seqlen ||
        b.attention_mask.size() != b.ids.size() ||
        b.mask_pos.size() != static_cast<size_t>(b.batch))
      throw std::invalid_argument("forward: malformed batch");
    if (b.label_words.empty())
      throw std::invalid_argument("forward: no label words");
    for (auto id : b.ids)
      if (id >= cfg_.vocab) throw std::invalid_argument("forward: unknown token id");
    for (auto id : b.label_words)
      if (id >= cfg_.vocab)
        throw std::invalid_argument("forward: unknown label-word id");
    for (int e = 0; e < b.batch; ++e)
      if (b.mask_pos[e] >= b.seqlen)
        throw std::invalid_argument("forward: mask position out of range");

    // Prompt stream per layer: identical for every example.
    std::vector<Eigen::MatrixXf> pstream(Lc);
    Eigen::MatrixXf pfinal;
    {
      Eigen::MatrixXf p = initial_.p0[0];
      if (prompt) p += prompt->offsets[0];
      for (int l = 0; l < Lc; ++l) {
        if (deep && l > 0) p = initial_.p0[l] + prompt->offsets[l];
        pstream[l] = p;
        if (!deep && (l + 1 < Lc || pools)) p += block(l, p, p, nullptr);
      }
      pfinal = p;
    }

    const int C = static_cast<int>(b.label_words.size());
    Eigen::MatrixXf logits(b.batch, C);
    for (int e = 0; e < b.batch; ++e) {
      Eigen::MatrixXf x(b.seqlen, H);
      std::vector<uint8_t> kmask(np + b.seqlen, 1);
      for (int t = 0; t < b.seqlen; ++t) {
        x.row(t) = embed_.row(b.ids[e * b.seqlen + t]);
        kmask[np + t] = b.attention_mask[e * b.seqlen + t];
      }
      Eigen::MatrixXf full(np + b.seqlen, H);
      for (int l = 0; l < Lc; ++l) {
        if (pools) pool_layer(*pools, l, pstream[l], x, kmask, e == 0, np, b);
        if (trace) trace->push_back(x);
        full.topRows(np) = pstream[l];
        full.bottomRows(b.seqlen) = x;
        x += block(l, x, full, &kmask);
      }
      if (pools) pool_layer(*pools, Lc, pfinal, x, kmask, e == 0, np, b);
      if (trace) trace->push_back(x);
      const Eigen::RowVectorXf h = x.row(b.mask_pos[e]);
      const Eigen::RowVectorXf all = h * head_;
      for (int c = 0; c < C; ++c) logits(e, c) = all[b.label_words[c]];
    }
    return logits;
  }

  void pool_layer(std::vector<std::vector<double>>& pools, int idx,
                  const Eigen::MatrixXf& p, const Eigen::MatrixXf& x,
                  const std::vector<uint8_t>& kmask, bool include_prompt,
                  int np, const Batch& b) const {
    auto& pool = pools[idx];
    if (include_prompt)
      for (int i = 0; i < p.rows(); ++i)
        for (int j = 0; j < p.cols(); ++j) pool.push_back(p(i, j));
    for (int t = 0; t < x.rows(); ++t) {
      if (!kmask[np + t]) continue;
      for (int j = 0; j < x.cols(); ++j) pool.push_back(x(t, j));
    }
  }

  static void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static void write_mat(std::ofstream& f, const Eigen::MatrixXf& m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        float v = m(i, j);
        f.write(reinterpret_cast<const char*>(&v), 4);
      }
  }
  static void read_mat(std::ifstream& f, Eigen::MatrixXf& m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        float v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        m(i, j) = v;
      }
  }

  ModelConfig cfg_;
  Eigen::MatrixXf embed_, head_;
  std::vector<Layer> layers_;
  InitialPrompt initial_;
};

}  // namespace bbt
