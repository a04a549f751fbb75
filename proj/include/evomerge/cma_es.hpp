#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "evomerge/rng.hpp"

namespace evomerge {

struct EsConfig {
  int dim = 0;
  Eigen::VectorXd init_mean;      // empty -> all 0.5
  double init_sigma = 1.0 / 6.0;  // the optimizer default used throughout
  int population = 0;             // 0 -> 4 + floor(3 ln n)
  uint64_t seed = 0;
  // Per-dimension [lo, hi]. Candidates handed to the caller are clipped into
  // the box; the distribution update uses the raw samples.
  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> bounds;
};

int default_population(int dim);

// Covariance Matrix Adaptation Evolution Strategy with the standard
// rank-weighted update rules and an ask/tell interface. Deterministic given
// (config, seed, fitness sequence); ranking-only fitness use makes the ask
// sequence invariant under strictly increasing fitness transforms.
class CmaEs {
 public:
  explicit CmaEs(EsConfig cfg);

  // One population of candidates, clipped into bounds when bounds are set.
  // Calling ask twice without an intervening tell is an error.
  const std::vector<Eigen::VectorXd>& ask();

  // Rank-based update. Non-finite fitness values rank strictly worst.
  void tell(const std::vector<double>& fitness, bool maximize = false);

  // Best-ever evaluated candidate (the clipped phenotype) and its fitness.
  std::pair<Eigen::VectorXd, double> best() const;

  int generation() const { return generation_; }
  int population() const { return lambda_; }
  int dim() const { return n_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  double sigma() const { return sigma_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }

 private:
  void decompose();

  int n_ = 0;
  int lambda_ = 0;
  int mu_ = 0;
  Eigen::VectorXd weights_;
  double mu_eff_ = 0.0;
  double c_sigma_ = 0.0, d_sigma_ = 0.0, c_c_ = 0.0, c1_ = 0.0, c_mu_ = 0.0;
  double chi_n_ = 0.0;

  Eigen::VectorXd mean_;
  double sigma_ = 0.0;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd eigvec_;        // B
  Eigen::VectorXd eig_sqrt_;      // diag(D)
  Eigen::VectorXd p_sigma_, p_c_;
  int generation_ = 0;

  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> bounds_;
  Rng rng_;

  std::vector<Eigen::VectorXd> raw_;        // pending samples, update side
  std::vector<Eigen::VectorXd> phenotype_;  // pending samples, evaluation side
  bool pending_ = false;

  bool has_best_ = false;
  Eigen::VectorXd best_x_;
  double best_f_ = 0.0;
};

}  // namespace evomerge
