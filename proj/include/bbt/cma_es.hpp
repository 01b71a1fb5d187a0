// Covariance Matrix Adaptation Evolution Strategy with an ask/tell interface.
// Plain rank-mu variant, full covariance, eigendecomposition refreshed every
// generation. Selection depends only on loss ranks (ties broken by candidate
// index), so any strictly increasing transform of the losses leaves the
// update bitwise unchanged.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bbt/common.hpp"

namespace bbt {

class CmaEs {
 public:
  // lambda defaults to floor(4 + 3*ln(d)).
  CmaEs(int dim, double sigma, std::optional<int> lambda, uint64_t seed,
        Eigen::VectorXd initial_mean = Eigen::VectorXd())
      : dim_(dim), sigma_(sigma), rng_(mix_seed(seed, 0x636d6165)) {
    if (dim < 1) throw std::invalid_argument("CmaEs: dim must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("CmaEs: sigma must be > 0");
    lambda_ = lambda ? *lambda
                     : static_cast<int>(std::floor(4.0 + 3.0 * std::log(dim)));
    if (lambda_ < 2) throw std::invalid_argument("CmaEs: lambda must be >= 2");

    mean_ = initial_mean.size() == 0 ? Eigen::VectorXd::Zero(dim)
                                     : Eigen::VectorXd(initial_mean);
    if (mean_.size() != dim)
      throw std::invalid_argument("CmaEs: initial mean has wrong length");

    mu_ = lambda_ / 2;
    weights_.resize(mu_);
    double wsum = 0.0;
    for (int i = 0; i < mu_; ++i) {
      weights_[i] = std::log(mu_ + 0.5) - std::log(i + 1.0);
      wsum += weights_[i];
    }
    double w2 = 0.0;
    for (auto& w : weights_) {
      w /= wsum;
      w2 += w * w;
    }
    mueff_ = 1.0 / w2;

    const double n = dim;
    cc_ = (4.0 + mueff_ / n) / (n + 4.0 + 2.0 * mueff_ / n);
    cs_ = (mueff_ + 2.0) / (n + mueff_ + 5.0);
    c1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mueff_);
    cmu_ = std::min(1.0 - c1_, 2.0 * (mueff_ - 2.0 + 1.0 / mueff_) /
                                   ((n + 2.0) * (n + 2.0) + mueff_));
    damps_ =
        1.0 + 2.0 * std::max(0.0, std::sqrt((mueff_ - 1.0) / (n + 1.0)) - 1.0) +
        cs_;
    chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    cov_ = Eigen::MatrixXd::Identity(dim, dim);
    path_c_ = Eigen::VectorXd::Zero(dim);
    path_sigma_ = Eigen::VectorXd::Zero(dim);
    refreshEigen();
  }

  std::vector<Eigen::VectorXd> ask() {
    std::vector<Eigen::VectorXd> out;
    out.reserve(lambda_);
    Eigen::VectorXd z(dim_);
    for (int k = 0; k < lambda_; ++k) {
      for (int i = 0; i < dim_; ++i) z[i] = eigvals_sqrt_[i] * gaussian(rng_);
      out.emplace_back(mean_ + sigma_ * (eigvecs_ * z));
    }
    return out;
  }

  void tell(const std::vector<Eigen::VectorXd>& candidates,
            const std::vector<double>& losses) {
    if (candidates.size() != static_cast<size_t>(lambda_) ||
        losses.size() != static_cast<size_t>(lambda_))
      throw std::invalid_argument(
          "CmaEs::tell: expected exactly lambda candidates and losses");
    for (size_t i = 0; i < losses.size(); ++i)
      if (!std::isfinite(losses[i]))
        throw std::invalid_argument("CmaEs::tell: non-finite loss at candidate index " +
                                    std::to_string(i));
    for (const auto& c : candidates)
      if (c.size() != dim_)
        throw std::invalid_argument("CmaEs::tell: candidate has wrong length");

    std::vector<int> order(lambda_);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (losses[a] != losses[b]) return losses[a] < losses[b];
      return a < b;
    });

    if (!best_loss_ || losses[order[0]] < *best_loss_) {
      best_loss_ = losses[order[0]];
      best_ = candidates[order[0]];
    }

    const Eigen::VectorXd mean_old = mean_;
    mean_.setZero();
    for (int i = 0; i < mu_; ++i) mean_ += weights_[i] * candidates[order[i]];

    const Eigen::VectorXd delta = (mean_ - mean_old) / sigma_;

    // C^{-1/2} * delta via the cached eigendecomposition.
    Eigen::VectorXd tmp = eigvecs_.transpose() * delta;
    for (int i = 0; i < dim_; ++i) tmp[i] /= eigvals_sqrt_[i];
    path_sigma_ = (1.0 - cs_) * path_sigma_ +
                  std::sqrt(cs_ * (2.0 - cs_) * mueff_) * (eigvecs_ * tmp);

    ++generation_;
    const double ps_norm = path_sigma_.norm();
    const bool hsig =
        ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs_, 2.0 * generation_)) /
            chi_n_ <
        1.4 + 2.0 / (dim_ + 1.0);

    path_c_ = (1.0 - cc_) * path_c_;
    if (hsig) path_c_ += std::sqrt(cc_ * (2.0 - cc_) * mueff_) * delta;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(dim_, dim_);
    for (int i = 0; i < mu_; ++i) {
      const Eigen::VectorXd y = (candidates[order[i]] - mean_old) / sigma_;
      rank_mu.noalias() += weights_[i] * (y * y.transpose());
    }
    // stall correction: when hsig is false the pc term misses variance
    const double decay =
        1.0 - c1_ - cmu_ + (hsig ? 0.0 : c1_ * cc_ * (2.0 - cc_));
    cov_ = decay * cov_ + c1_ * (path_c_ * path_c_.transpose()) + cmu_ * rank_mu;
    cov_ = 0.5 * (cov_ + cov_.transpose()).eval();

    sigma_ *= std::exp((cs_ / damps_) * (ps_norm / chi_n_ - 1.0));
    refreshEigen();
  }

  int dim() const { return dim_; }
  int lambda() const { return lambda_; }
  int mu() const { return mu_; }
  int generation() const { return generation_; }
  double sigma() const { return sigma_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }
  const std::vector<double>& weights() const { return weights_; }
  const Eigen::VectorXd& best() const {
    if (!best_loss_) throw std::logic_error("CmaEs::best: no tell yet");
    return best_;
  }
  double bestLoss() const {
    if (!best_loss_) throw std::logic_error("CmaEs::bestLoss: no tell yet");
    return *best_loss_;
  }
  double minCovEigenvalue() const {
    double m = eigvals_sqrt_[0];
    for (int i = 1; i < dim_; ++i) m = std::min(m, eigvals_sqrt_[i]);
    return m * m;
  }

 private:
  void refreshEigen() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov_);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("CmaEs: eigendecomposition failed");
    eigvecs_ = es.eigenvectors();
    eigvals_sqrt_.resize(dim_);
    const double floor_ev = 1e-30 * std::max(1.0, es.eigenvalues().maxCoeff());
    for (int i = 0; i < dim_; ++i)
      eigvals_sqrt_[i] = std::sqrt(std::max(es.eigenvalues()[i], floor_ev));
  }

  int dim_;
  int lambda_ = 0;
  int mu_ = 0;
  int generation_ = 0;
  double sigma_;
  double mueff_ = 0, cc_ = 0, cs_ = 0, c1_ = 0, cmu_ = 0, damps_ = 0,
         chi_n_ = 0;
  std::vector<double> weights_;
  Eigen::VectorXd mean_, path_c_, path_sigma_;
  Eigen::MatrixXd cov_, eigvecs_;
  Eigen::VectorXd eigvals_sqrt_;
  std::optional<double> best_loss_;
  Eigen::VectorXd best_;
  Rng rng_;
};

}  // namespace bbt
