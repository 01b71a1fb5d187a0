// Test-only straight-line reimplementation of the toy model forward pass.
// Reads weights back out of a checkpoint file so it never touches the
// implementation's internals.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "bbt/model.hpp"

namespace bbt::testing {

using Mat = std::vector<std::vector<double>>;

struct OracleWeights {
  Mat embed;
  struct L {
    Mat wq, wk, wv, w1, w2;
  };
  std::vector<L> layers;
  Mat head;
  std::vector<uint16_t> prompt_ids;
};

inline OracleWeights read_checkpoint(const ToyModel& m) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("bbt_oracle_" + std::to_string(m.config().seed) + ".ckpt");
  m.save(path.string());
  std::ifstream f(path.string(), std::ios::binary);
  const auto& cfg = m.config();
  const int H = cfg.hidden;
  f.seekg(4 + 4 + 5 * 4 + 8 + 4 + 4);  // magic, version, dims, seed, scales
  OracleWeights w;
  w.prompt_ids.resize(cfg.prompt_len);
  for (auto& id : w.prompt_ids) f.read(reinterpret_cast<char*>(&id), 2);
  auto read_mat = [&](int r, int c) {
    Mat mat(r, std::vector<double>(c));
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        float v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        mat[i][j] = v;
      }
    return mat;
  };
  w.embed = read_mat(cfg.vocab, H);
  for (int l = 0; l < cfg.layers; ++l)
    w.layers.push_back({read_mat(H, H), read_mat(H, H), read_mat(H, H),
                        read_mat(H, 2 * H), read_mat(2 * H, H)});
  w.head = read_mat(H, cfg.vocab);
  std::filesystem::remove(path);
  return w;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const size_t R = a.size(), K = b.size(), C = b[0].size();
  Mat out(R, std::vector<double>(C, 0.0));
  for (size_t i = 0; i < R; ++i)
    for (size_t k = 0; k < K; ++k)
      for (size_t j = 0; j < C; ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// One residual block applied to rows x, where rows [0, np) attend only to
// themselves and the rest attend to everything. Returns the delta f_l(x).
inline Mat oracle_block(const OracleWeights::L& w, const Mat& x, int np) {
  const int T = static_cast<int>(x.size());
  const int H = static_cast<int>(x[0].size());
  const Mat Q = matmul(x, w.wq), K = matmul(x, w.wk), V = matmul(x, w.wv);
  Mat attn(T, std::vector<double>(H, 0.0));
  for (int i = 0; i < T; ++i) {
    const int hi = i < np ? np : T;
    std::vector<double> s(hi, 0.0);
    double mx = -1e300;
    for (int t = 0; t < hi; ++t) {
      for (int j = 0; j < H; ++j) s[t] += Q[i][j] * K[t][j];
      s[t] /= std::sqrt(static_cast<double>(H));
      mx = std::max(mx, s[t]);
    }
    double z = 0.0;
    for (int t = 0; t < hi; ++t) {
      s[t] = std::exp(s[t] - mx);
      z += s[t];
    }
    for (int t = 0; t < hi; ++t)
      for (int j = 0; j < H; ++j) attn[i][j] += s[t] / z * V[t][j];
  }
  Mat h1 = matmul(attn, w.w1);
  for (auto& row : h1)
    for (auto& v : row) v = std::tanh(v);
  return matmul(h1, w.w2);
}

}  // namespace bbt::testing
