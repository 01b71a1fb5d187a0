// Frozen random projections from the low-dimensional search space to prompt
// space, plus the hidden-state statistics used to pick the generating
// distribution. Entries are stored as f32 so the persisted sidecar file is a
// bit-exact image of the in-memory matrix.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbt/common.hpp"

namespace bbt {

enum class ProjKind : uint32_t { Uniform = 0, Normal = 1 };

struct LayerStats {
  int layer = 0;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  int clip_rounds = 0;
};

// sigma_A = alpha * sigma_hat / (sqrt(d) * sigma_z)
inline double compute_sigma_a(double alpha, double sigma_hat, int d,
                              double sigma_z) {
  if (!(alpha > 0.0) || !(d >= 1) || !(sigma_z > 0.0))
    throw std::invalid_argument("compute_sigma_a: arguments must be positive");
  if (!(sigma_hat > 0.0))
    throw DegenerateStatsError(
        "compute_sigma_a: sigma_hat is zero, constant statistics cannot be matched");
  return alpha * sigma_hat / (std::sqrt(static_cast<double>(d)) * sigma_z);
}

// Half-width of the uniform generator for the original projection mode,
// He-style fan-in bound.
inline double uniform_half_width(int d) {
  return std::sqrt(6.0 / static_cast<double>(d));
}

namespace detail {
inline void mean_std(const std::vector<double>& v, double& mu, double& sd) {
  mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  sd = std::sqrt(var);
}
}  // namespace detail

// Clip-then-measure statistics pipeline. Runs clip_rounds iterations of
// (compute mu,sigma; clamp entries to mu +- 3 sigma), then reports the stats
// of the clamped pool. Clamping here never feeds back into any model forward.
inline LayerStats observe_stats(std::vector<double> entries, int clip_rounds = 5,
                                int layer = 0) {
  if (entries.size() < 2)
    throw std::invalid_argument("observe_stats: need at least 2 entries");
  if (clip_rounds < 0)
    throw std::invalid_argument("observe_stats: clip_rounds must be >= 0");
  double mu = 0.0, sd = 0.0;
  for (int r = 0; r < clip_rounds; ++r) {
    detail::mean_std(entries, mu, sd);
    const double lo = mu - 3.0 * sd, hi = mu + 3.0 * sd;
    for (double& x : entries) x = std::clamp(x, lo, hi);
  }
  detail::mean_std(entries, mu, sd);
  if (!(sd > 0.0))
    throw DegenerateStatsError("observe_stats: zero standard deviation");
  return LayerStats{layer, mu, sd, clip_rounds};
}

class ProjectionMatrix {
 public:
  static ProjectionMatrix sample(int rows, int cols, ProjKind kind, double param,
                                 uint64_t seed) {
    if (rows < 1 || cols < 1)
      throw std::invalid_argument("ProjectionMatrix: dims must be >= 1");
    if (!(param > 0.0))
      throw std::invalid_argument("ProjectionMatrix: param must be > 0");
    ProjectionMatrix p;
    p.kind_ = kind;
    p.param_ = param;
    p.seed_ = seed;
    p.entries_.resize(rows, cols);
    Rng rng(mix_seed(seed, 0x70726f6a));
    // Row-major fill order, matching the sidecar layout.
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        p.entries_(i, j) = static_cast<float>(
            kind == ProjKind::Normal ? param * gaussian(rng)
                                     : uniform_in(rng, -param, param));
    return p;
  }

  int rows() const { return static_cast<int>(entries_.rows()); }
  int cols() const { return static_cast<int>(entries_.cols()); }
  ProjKind kind() const { return kind_; }
  double param() const { return param_; }
  uint64_t seed() const { return seed_; }
  const Eigen::MatrixXf& entries() const { return entries_; }

  // A*z + p0. Result is f32, matching what crosses the wire.
  Eigen::VectorXf apply(const Eigen::VectorXd& z,
                        const Eigen::VectorXf& p0) const {
    if (z.size() != entries_.cols())
      throw std::invalid_argument("ProjectionMatrix::apply: z has wrong length");
    if (p0.size() != 0 && p0.size() != entries_.rows())
      throw std::invalid_argument("ProjectionMatrix::apply: p0 has wrong length");
    Eigen::VectorXf out = entries_ * z.cast<float>();
    if (p0.size() != 0) out += p0;
    return out;
  }

  Eigen::VectorXf apply(const Eigen::VectorXd& z) const {
    return apply(z, Eigen::VectorXf());
  }

  // FNV-1a over the f32 entry bytes; used by the frozen-matrix checks.
  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ULL;
    for (int i = 0; i < entries_.rows(); ++i)
      for (int j = 0; j < entries_.cols(); ++j) {
        float v = entries_(i, j);
        unsigned char b[4];
        std::memcpy(b, &v, 4);
        for (int k = 0; k < 4; ++k) h = (h ^ b[k]) * 1099511628211ULL;
      }
    return h;
  }

  // Sidecar layout: magic "BBPJ", u32 rows, u32 cols, u32 kind, f64 param,
  // u64 seed, then rows*cols row-major f32 LE.
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ProjectionMatrix::save: cannot open " + path);
    f.write("BBPJ", 4);
    const uint32_t r = rows(), c = cols(), k = static_cast<uint32_t>(kind_);
    f.write(reinterpret_cast<const char*>(&r), 4);
    f.write(reinterpret_cast<const char*>(&c), 4);
    f.write(reinterpret_cast<const char*>(&k), 4);
    f.write(reinterpret_cast<const char*>(&param_), 8);
    f.write(reinterpret_cast<const char*>(&seed_), 8);
    for (int i = 0; i < rows(); ++i)
      for (int j = 0; j < cols(); ++j) {
        float v = entries_(i, j);
        f.write(reinterpret_cast<const char*>(&v), 4);
      }
  }

  static ProjectionMatrix load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ProjectionMatrix::load: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "BBPJ")
      throw std::runtime_error("ProjectionMatrix::load: bad magic");
    uint32_t r = 0, c = 0, k = 0;
    f.read(reinterpret_cast<char*>(&r), 4);
    f.read(reinterpret_cast<char*>(&c), 4);
    f.read(reinterpret_cast<char*>(&k), 4);
    ProjectionMatrix p;
    f.read(reinterpret_cast<char*>(&p.param_), 8);
    f.read(reinterpret_cast<char*>(&p.seed_), 8);
    p.kind_ = static_cast<ProjKind>(k);
    p.entries_.resize(r, c);
    for (uint32_t i = 0; i < r; ++i)
      for (uint32_t j = 0; j < c; ++j) {
        float v;
        f.read(reinterpret_cast<char*>(&v), 4);
        p.entries_(i, j) = v;
      }
    if (!f) throw std::runtime_error("ProjectionMatrix::load: truncated file");
    return p;
  }

 private:
  ProjectionMatrix() = default;
  ProjKind kind_ = ProjKind::Normal;
  double param_ = 1.0;
  uint64_t seed_ = 0;
  Eigen::MatrixXf entries_;
};

}  // namespace bbt
