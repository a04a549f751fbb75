#include <doctest.h>

#include <cmath>

#include "evomerge/cma_es.hpp"

using namespace evomerge;

namespace {

double sphere(const Eigen::VectorXd& x) { return x.squaredNorm(); }

double rosenbrock(const Eigen::VectorXd& x) {
  double f = 0.0;
  for (int i = 0; i + 1 < x.size(); ++i) {
    f += 100.0 * std::pow(x[i + 1] - x[i] * x[i], 2) + std::pow(1.0 - x[i], 2);
  }
  return f;
}

double run_minimize(int dim, uint64_t seed, int max_generations,
                    double (*f)(const Eigen::VectorXd&), int max_evals = -1) {
  EsConfig cfg;
  cfg.dim = dim;
  cfg.seed = seed;
  CmaEs opt(cfg);
  int evals = 0;
  for (int g = 0; g < max_generations; ++g) {
    const auto& xs = opt.ask();
    std::vector<double> fs(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) fs[i] = f(xs[i]);
    evals += static_cast<int>(xs.size());
    opt.tell(fs);
    if (max_evals > 0 && evals + opt.population() > max_evals) break;
    if (opt.best().second < 1e-14) break;
  }
  return opt.best().second;
}

}  // namespace

TEST_CASE("default population follows 4 + floor(3 ln n)") {
  CHECK(default_population(6) == 9);
  CHECK(default_population(1) == 4);
  CHECK(default_population(192) == 19);
  EsConfig cfg;
  cfg.dim = 6;
  CmaEs opt(cfg);
  CHECK(opt.population() == 9);
  CHECK(static_cast<int>(opt.ask().size()) == 9);
}

TEST_CASE("invalid configs are rejected") {
  EsConfig cfg;
  cfg.dim = 4;
  cfg.init_sigma = 0.0;
  CHECK_THROWS(CmaEs(cfg));
  cfg.init_sigma = 0.1;
  cfg.dim = 0;
  CHECK_THROWS(CmaEs(cfg));
  cfg.dim = 4;
  cfg.population = 1;
  CHECK_THROWS(CmaEs(cfg));
}

TEST_CASE("ask is deterministic and single-shot per generation") {
  EsConfig cfg;
  cfg.dim = 5;
  cfg.seed = 99;
  CmaEs a(cfg), b(cfg);
  const auto& xa = a.ask();
  const auto& xb = b.ask();
  REQUIRE(xa.size() == xb.size());
  for (size_t i = 0; i < xa.size(); ++i) CHECK(xa[i] == xb[i]);
  CHECK_THROWS_AS(a.ask(), std::logic_error);

  std::vector<double> fs(xa.size(), 1.0);
  CHECK_THROWS_AS(a.tell(std::vector<double>(xa.size() + 1, 0.0)), std::invalid_argument);
  a.tell(fs);
  CHECK_NOTHROW(a.ask());
}

TEST_CASE("bounds clip the reported candidates") {
  EsConfig cfg;
  cfg.dim = 3;
  cfg.seed = 3;
  cfg.init_sigma = 0.8;  // wide enough that raw samples leave the box
  cfg.bounds = std::make_pair(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3));
  CmaEs opt(cfg);
  for (int g = 0; g < 5; ++g) {
    const auto& xs = opt.ask();
    for (const auto& x : xs) {
      CHECK(x.minCoeff() >= 0.0);
      CHECK(x.maxCoeff() <= 1.0);
    }
    opt.tell(std::vector<double>(xs.size(), 0.0));
  }
}

TEST_CASE("best before any tell is an error") {
  EsConfig cfg;
  cfg.dim = 2;
  CmaEs opt(cfg);
  CHECK_THROWS_AS(opt.best(), std::logic_error);
}

TEST_CASE("constant fitness keeps the first candidate as best") {
  EsConfig cfg;
  cfg.dim = 4;
  cfg.seed = 17;
  CmaEs opt(cfg);
  const auto xs = opt.ask();
  opt.tell(std::vector<double>(xs.size(), 3.14));
  CHECK(opt.best().second == 3.14);
  CHECK(opt.best().first == xs[0]);
}

TEST_CASE("non-finite fitness ranks strictly worst") {
  EsConfig cfg;
  cfg.dim = 2;
  cfg.seed = 5;
  CmaEs opt(cfg);
  const auto xs = opt.ask();
  std::vector<double> fs(xs.size(), std::numeric_limits<double>::quiet_NaN());
  fs[2] = 1.0;  // the only finite candidate
  opt.tell(fs);
  CHECK(opt.best().second == 1.0);
  CHECK(opt.best().first == xs[2]);
}

TEST_CASE("sphere n=5 converges below 1e-10 within 500 generations") {
  CHECK(run_minimize(5, 2024, 500, sphere) < 1e-10);
}

TEST_CASE("rosenbrock n=5 reaches 1e-6 within 5000 evaluations") {
  CHECK(run_minimize(5, 7, 5000, rosenbrock, 5000) < 1e-6);
}

TEST_CASE("rank invariance under strictly increasing fitness transforms") {
  EsConfig cfg;
  cfg.dim = 4;
  cfg.seed = 31;
  CmaEs a(cfg), b(cfg);
  for (int g = 0; g < 12; ++g) {
    const auto& xa = a.ask();
    const auto& xb = b.ask();
    REQUIRE(xa.size() == xb.size());
    for (size_t i = 0; i < xa.size(); ++i) {
      REQUIRE(xa[i] == xb[i]);  // identical ask sequences throughout
    }
    std::vector<double> fa(xa.size()), fb(xb.size());
    for (size_t i = 0; i < xa.size(); ++i) {
      fa[i] = sphere(xa[i]);
      fb[i] = 2.0 * sphere(xb[i]) + 3.0;  // strictly increasing transform
    }
    a.tell(fa);
    b.tell(fb);
  }
}

TEST_CASE("covariance stays symmetric positive definite") {
  EsConfig cfg;
  cfg.dim = 6;
  cfg.seed = 12;
  CmaEs opt(cfg);
  for (int g = 0; g < 30; ++g) {
    const auto& xs = opt.ask();
    std::vector<double> fs(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) fs[i] = sphere(xs[i]);
    opt.tell(fs);
    const Eigen::MatrixXd& c = opt.covariance();
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(c);
    CHECK(solver.eigenvalues().minCoeff() > 0.0);
    CHECK(opt.sigma() > 0.0);
  }
}

TEST_CASE("best-ever fitness never worsens") {
  EsConfig cfg;
  cfg.dim = 5;
  cfg.seed = 77;
  CmaEs opt(cfg);
  double prev = std::numeric_limits<double>::infinity();
  for (int g = 0; g < 40; ++g) {
    const auto& xs = opt.ask();
    std::vector<double> fs(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) fs[i] = rosenbrock(xs[i]);
    opt.tell(fs);
    CHECK(opt.best().second <= prev);
    prev = opt.best().second;
  }
}
