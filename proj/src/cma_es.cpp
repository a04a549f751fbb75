#include "evomerge/cma_es.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace evomerge {

int default_population(int dim) {
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dim))));
}

CmaEs::CmaEs(EsConfig cfg) : rng_(cfg.seed) {
  if (cfg.dim <= 0) throw std::invalid_argument("CMA-ES dimension must be positive");
  if (!(cfg.init_sigma > 0.0)) throw std::invalid_argument("init_sigma must be > 0");
  n_ = cfg.dim;
  lambda_ = cfg.population > 0 ? cfg.population : default_population(n_);
  if (lambda_ < 2) throw std::invalid_argument("population must be at least 2");

  if (cfg.init_mean.size() == 0) {
    mean_ = Eigen::VectorXd::Constant(n_, 0.5);
  } else if (cfg.init_mean.size() == n_) {
    mean_ = cfg.init_mean;
  } else {
    throw std::invalid_argument("init_mean length does not match dim");
  }
  if (cfg.bounds) {
    const auto& [lo, hi] = *cfg.bounds;
    if (lo.size() != n_ || hi.size() != n_) {
      throw std::invalid_argument("bounds length does not match dim");
    }
    for (int i = 0; i < n_; ++i) {
      if (!(lo[i] < hi[i])) throw std::invalid_argument("bounds require lo < hi");
    }
    bounds_ = cfg.bounds;
  }
  sigma_ = cfg.init_sigma;

  // Rank weights and learning rates of the standard reference algorithm
  // (positive-weight variant).
  mu_ = lambda_ / 2;
  weights_.resize(mu_);
  for (int i = 0; i < mu_; ++i) {
    weights_[i] = std::log((lambda_ + 1) / 2.0) - std::log(i + 1.0);
  }
  weights_ /= weights_.sum();
  mu_eff_ = 1.0 / weights_.squaredNorm();

  const double n = static_cast<double>(n_);
  c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
  d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
  c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
  c1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
  c_mu_ = std::min(1.0 - c1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) /
                                  ((n + 2.0) * (n + 2.0) + mu_eff_));
  chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  cov_ = Eigen::MatrixXd::Identity(n_, n_);
  p_sigma_ = Eigen::VectorXd::Zero(n_);
  p_c_ = Eigen::VectorXd::Zero(n_);
  decompose();
}

void CmaEs::decompose() {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov_);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("covariance eigendecomposition failed");
  }
  Eigen::VectorXd eig = solver.eigenvalues();
  bool floored = false;
  for (int i = 0; i < n_; ++i) {
    if (eig[i] < 1e-12) {
      eig[i] = 1e-12;
      floored = true;
    }
  }
  eigvec_ = solver.eigenvectors();
  eig_sqrt_ = eig.cwiseSqrt();
  if (floored) {
    cov_ = eigvec_ * eig.asDiagonal() * eigvec_.transpose();
  }
}

const std::vector<Eigen::VectorXd>& CmaEs::ask() {
  if (pending_) throw std::logic_error("ask called twice without an intervening tell");
  raw_.assign(lambda_, Eigen::VectorXd(n_));
  phenotype_.assign(lambda_, Eigen::VectorXd(n_));
  Eigen::VectorXd z(n_);
  for (int i = 0; i < lambda_; ++i) {
    for (int j = 0; j < n_; ++j) z[j] = rng_.normal();
    raw_[i] = mean_ + sigma_ * (eigvec_ * (eig_sqrt_.asDiagonal() * z));
    if (bounds_) {
      phenotype_[i] = raw_[i].cwiseMax(bounds_->first).cwiseMin(bounds_->second);
    } else {
      phenotype_[i] = raw_[i];
    }
  }
  pending_ = true;
  return phenotype_;
}

void CmaEs::tell(const std::vector<double>& fitness, bool maximize) {
  if (!pending_) throw std::logic_error("tell called without a pending ask");
  if (static_cast<int>(fitness.size()) != lambda_) {
    throw std::invalid_argument("fitness count does not match population size");
  }

  // Rank ascending by loss; non-finite values sort strictly worst, ties keep
  // the earlier candidate.
  std::vector<int> order(lambda_);
  std::iota(order.begin(), order.end(), 0);
  auto loss = [&](int i) { return maximize ? -fitness[i] : fitness[i]; };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const bool fa = std::isfinite(loss(a)), fb = std::isfinite(loss(b));
    if (fa != fb) return fa;
    if (!fa) return false;
    return loss(a) < loss(b);
  });

  if (std::isfinite(loss(order[0]))) {
    const double f = fitness[order[0]];
    const bool better = !has_best_ || (maximize ? f > best_f_ : f < best_f_);
    if (better) {
      has_best_ = true;
      best_f_ = f;
      best_x_ = phenotype_[order[0]];
    }
  }

  const Eigen::VectorXd old_mean = mean_;
  Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(n_);
  for (int i = 0; i < mu_; ++i) new_mean += weights_[i] * raw_[order[i]];

  const Eigen::VectorXd delta = (new_mean - old_mean) / sigma_;
  // C^{-1/2} * delta via the cached eigendecomposition.
  const Eigen::VectorXd c_inv_sqrt_delta =
      eigvec_ * (eig_sqrt_.cwiseInverse().asDiagonal() * (eigvec_.transpose() * delta));

  p_sigma_ = (1.0 - c_sigma_) * p_sigma_ +
             std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * c_inv_sqrt_delta;

  const double ps_norm = p_sigma_.norm();
  const double expected =
      std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * (generation_ + 1)));
  const bool h_sigma = ps_norm / expected < (1.4 + 2.0 / (n_ + 1.0)) * chi_n_;

  p_c_ = (1.0 - c_c_) * p_c_;
  if (h_sigma) p_c_ += std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) * delta;

  Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n_, n_);
  for (int i = 0; i < mu_; ++i) {
    const Eigen::VectorXd y = (raw_[order[i]] - old_mean) / sigma_;
    rank_mu.noalias() += weights_[i] * (y * y.transpose());
  }
  const double delta_h = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);
  cov_ = (1.0 - c1_ - c_mu_) * cov_ +
         c1_ * (p_c_ * p_c_.transpose() + delta_h * cov_) + c_mu_ * rank_mu;
  cov_ = 0.5 * (cov_ + cov_.transpose().eval());  // keep exactly symmetric

  sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));

  mean_ = new_mean;
  ++generation_;
  pending_ = false;
  decompose();
}

std::pair<Eigen::VectorXd, double> CmaEs::best() const {
  if (!has_best_) throw std::logic_error("no evaluations yet");
  return {best_x_, best_f_};
}

}  // namespace evomerge
