#include <doctest.h>

#include "chain2.hpp"
#include "nmrl/features.hpp"
#include "nmrl/oracle.hpp"
#include "nmrl/rng.hpp"

using namespace nmrl;

namespace {

struct Chain2Env {
  PomdpSpec spec = chain2_spec();
  FiniteMemoryPolicy pol = FiniteMemoryPolicy::uniform(8, 2);
  JointChain chain;
  Vec pi_joint;
  Vec pi_window = Vec::Zero(8);
  Mat pi_hu = Mat::Zero(8, 2);

  Chain2Env() {
    chain = build_joint_chain(spec, pol, 1);
    pi_joint = invariant_distribution(chain.kernel);
    for (int j = 0; j < chain.dim(); ++j) {
      pi_window(chain.window_of(j)) += pi_joint(j);
      pi_hu(chain.window_of(j), chain.action_of(j)) += pi_joint(j);
    }
  }

  Vec pi_sa_flat() const {
    Vec out(16);
    for (int h = 0; h < 8; ++h)
      for (int u = 0; u < 2; ++u) out(h * 2 + u) = pi_hu(h, u);
    return out;
  }
};

const Chain2Env& env() {
  static Chain2Env e;
  return e;
}

FeatureBasis random_state_basis(int n, int d, std::uint64_t seed) {
  CounterRng rng(seed, RngStream::kFunctionDraw);
  FeatureBasis b;
  b.table = Mat(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) b.table(i, j) = 2.0 * rng.next_double() - 1.0;
  return b;
}

FeatureBasis quantizer_state_basis() {
  QuantizerBasis q;
  q.bin_of = chain2_state_bins();
  q.num_bins = 4;
  return q.to_basis();
}

}  // namespace

TEST_CASE("project: identity on the span") {
  const FeatureBasis b = random_state_basis(8, 3, 5);
  Vec theta(3);
  theta << 0.3, -1.2, 0.7;
  const Vec f = b.table * theta;
  const Vec out = project(f, env().pi_window, b);
  CHECK((out - theta).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("project: indicator basis gives per-bin conditional averages") {
  const FeatureBasis b = quantizer_state_basis();
  const std::vector<int> bins = chain2_state_bins();
  CounterRng rng(9, RngStream::kFunctionDraw);
  Vec f(8);
  for (int s = 0; s < 8; ++s) f(s) = 2.0 * rng.next_double() - 1.0;
  const Vec theta = project(f, env().pi_window, b);
  for (int i = 0; i < 4; ++i) {
    double mass = 0.0;
    double avg = 0.0;
    for (int s = 0; s < 8; ++s) {
      if (bins[s] != i) continue;
      mass += env().pi_window(s);
      avg += env().pi_window(s) * f(s);
    }
    CHECK(theta(i) == doctest::Approx(avg / mass).epsilon(1e-12));
  }
}

TEST_CASE("project: matches an independent weighted least-squares oracle") {
  const FeatureBasis b = random_state_basis(8, 3, 17);
  CounterRng rng(21, RngStream::kFunctionDraw);
  Vec f(8);
  for (int s = 0; s < 8; ++s) f(s) = 2.0 * rng.next_double() - 1.0;
  const Vec theta = project(f, env().pi_window, b);
  // independent route: weighted QR solve instead of the Gram system
  const Vec w = env().pi_window.cwiseSqrt();
  const Mat aw = w.asDiagonal() * b.table;
  const Vec bw = w.cwiseProduct(f);
  const Vec ref = aw.colPivHouseholderQr().solve(bw);
  CHECK((theta - ref).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("project: singular Gram matrix raises a rank-deficiency error") {
  FeatureBasis b;
  b.table = Mat::Zero(8, 2);
  b.table.col(0).setOnes();
  b.table.col(1).setOnes();
  CHECK_THROWS_AS(project(Vec::Ones(8), env().pi_window, b), RankDeficiencyError);
}

TEST_CASE("gram_exploration: one-hot basis is diagonal with bin masses") {
  QuantizerBasis q;
  q.bin_of = chain2_sa_bins();
  q.num_bins = 8;
  q.num_actions = 2;
  const FeatureBasis b = q.to_basis();
  const GramMatrix g = gram_exploration(b, env().pi_sa_flat());
  for (int i = 0; i < 8; ++i) {
    double mass = 0.0;
    for (int p = 0; p < 16; ++p)
      if (q.bin_of[p] == i) mass += env().pi_sa_flat()(p);
    CHECK(std::abs(g.sigma(i, i) - mass) < 1e-12);
    for (int j = 0; j < 8; ++j)
      if (i != j) CHECK(g.sigma(i, j) == 0.0);
  }
}

TEST_CASE("gram_exploration: constant basis gives the 1x1 matrix [1]") {
  FeatureBasis b;
  b.table = Mat::Ones(8, 1);
  const GramMatrix g = gram_exploration(b, env().pi_window);
  CHECK(g.sigma(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("gram_greedy: zero parameter ties break to action 0") {
  FeatureBasis b = random_state_basis(16, 3, 33);
  b.num_actions = 2;
  const GramMatrix g = gram_greedy(b, Vec::Zero(3), env().pi_window);
  Mat expect = Mat::Zero(3, 3);
  for (int s = 0; s < 8; ++s) {
    const Vec f = b.phi(s, 0);
    expect += env().pi_window(s) * f * f.transpose();
  }
  CHECK((g.sigma - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gram_greedy: single action collapses to the exploration Gram") {
  FeatureBasis b = random_state_basis(8, 3, 35);
  b.num_actions = 1;
  const GramMatrix greedy = gram_greedy(b, Vec::Ones(3), env().pi_window);
  FeatureBasis state_view = b;
  state_view.num_actions = 0;
  const GramMatrix expl = gram_exploration(state_view, env().pi_window);
  CHECK((greedy.sigma - expl.sigma).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gram_greedy: matches brute-force per-state argmin") {
  FeatureBasis b = random_state_basis(16, 4, 51);
  b.num_actions = 2;
  CounterRng rng(52, RngStream::kParameterDraw);
  for (int rep = 0; rep < 20; ++rep) {
    Vec theta(4);
    for (int j = 0; j < 4; ++j) theta(j) = 2.0 * rng.next_double() - 1.0;
    const GramMatrix g = gram_greedy(b, theta, env().pi_window);
    Mat expect = Mat::Zero(4, 4);
    for (int s = 0; s < 8; ++s) {
      const double v0 = b.phi(s, 0).dot(theta);
      const double v1 = b.phi(s, 1).dot(theta);
      const int u = v1 < v0 ? 1 : 0;
      const Vec f = b.phi(s, u);
      expect += env().pi_window(s) * f * f.transpose();
    }
    CHECK((g.sigma - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("dominance_check: vanishing discount holds for positive-definite Gram") {
  QuantizerBasis q;
  q.bin_of = chain2_sa_bins();
  q.num_bins = 8;
  q.num_actions = 2;
  const FeatureBasis b = q.to_basis();
  const GramMatrix sg = gram_exploration(b, env().pi_sa_flat());
  REQUIRE(sg.sigma_min > 0.0);
  const DominanceReport rep = dominance_check(sg, b, env().pi_window, 1e-6);
  CHECK(rep.holds);
}

TEST_CASE("dominance_check: single action margin is (1-beta^2) sigma_min") {
  QuantizerBasis q;
  q.bin_of = {0, 1, 0, 1, 2, 3, 2, 3};
  q.num_bins = 4;
  q.num_actions = 1;
  const FeatureBasis b = q.to_basis();
  const GramMatrix sg = gram_exploration(b, env().pi_window);
  const double beta = 0.8;
  const DominanceReport rep = dominance_check(sg, b, env().pi_window, beta);
  CHECK(rep.candidates == 1);
  CHECK(rep.worst_margin ==
        doctest::Approx((1.0 - beta * beta) * sg.sigma_min).epsilon(1e-10));
}

TEST_CASE("dominance_check: exhaustive enumeration over realizable greedy maps") {
  QuantizerBasis q;
  q.bin_of = chain2_sa_bins();
  q.num_bins = 8;
  q.num_actions = 2;
  const FeatureBasis b = q.to_basis();
  const GramMatrix sg = gram_exploration(b, env().pi_sa_flat());
  const DominanceReport rep = dominance_check(sg, b, env().pi_window, 0.8);
  CHECK(rep.exhaustive);
  CHECK(rep.candidates == 16);  // 2^4 maps over the 4 window classes

  // brute force over the same class maps
  const std::vector<int> sb = chain2_state_bins();
  double worst = 1e300;
  for (int mask = 0; mask < 16; ++mask) {
    Mat st = Mat::Zero(8, 8);
    for (int s = 0; s < 8; ++s) {
      const int u = (mask >> sb[s]) & 1;
      const Vec f = b.phi(s, u);
      st += env().pi_window(s) * f * f.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(sg.sigma - 0.64 * st);
    worst = std::min(worst, es.eigenvalues().minCoeff());
  }
  CHECK(rep.worst_margin == doctest::Approx(worst).epsilon(1e-12));
}

TEST_CASE("projection idempotence") {
  const FeatureBasis b = random_state_basis(8, 3, 71);
  CounterRng rng(72, RngStream::kFunctionDraw);
  Vec f(8);
  for (int s = 0; s < 8; ++s) f(s) = 2.0 * rng.next_double() - 1.0;
  const Vec theta1 = project(f, env().pi_window, b);
  const Vec theta2 = project(b.table * theta1, env().pi_window, b);
  CHECK((theta1 - theta2).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("projection is non-expansive in L2(pi)") {
  const FeatureBasis b = random_state_basis(8, 3, 81);
  CounterRng rng(82, RngStream::kFunctionDraw);
  for (int rep = 0; rep < 100; ++rep) {
    Vec f(8);
    for (int s = 0; s < 8; ++s) f(s) = 2.0 * rng.next_double() - 1.0;
    const Vec pf = b.table * project(f, env().pi_window, b);
    CHECK(l2_pi_norm(pf, env().pi_window) <=
          l2_pi_norm(f, env().pi_window) + 1e-12);
  }
}

TEST_CASE("indicator projection is sup-norm non-expansive") {
  const FeatureBasis b = quantizer_state_basis();
  CounterRng rng(91, RngStream::kFunctionDraw);
  for (int rep = 0; rep < 1000; ++rep) {
    Vec f(8);
    for (int s = 0; s < 8; ++s) f(s) = 2.0 * rng.next_double() - 1.0;
    const Vec pf = b.table * project(f, env().pi_window, b);
    CHECK(pf.cwiseAbs().maxCoeff() <= f.cwiseAbs().maxCoeff() + 1e-12);
  }
}

TEST_CASE("projection residual is pi-orthogonal to the basis") {
  const FeatureBasis b = random_state_basis(8, 3, 101);
  CounterRng rng(102, RngStream::kFunctionDraw);
  Vec f(8);
  for (int s = 0; s < 8; ++s) f(s) = 2.0 * rng.next_double() - 1.0;
  const Vec resid = f - b.table * project(f, env().pi_window, b);
  const Vec inner = b.table.transpose() * env().pi_window.cwiseProduct(resid);
  CHECK(inner.lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("feature magnitudes above one are rejected") {
  FeatureBasis b;
  b.table = Mat::Ones(4, 2);
  b.table(1, 0) = 1.5;
  CHECK_THROWS_AS(b.validate(), ValidationError);
}

TEST_CASE("quantizer bins must be exhaustive and in range") {
  QuantizerBasis q;
  q.bin_of = {0, 1, 2, 2};
  q.num_bins = 4;  // bin 3 empty
  CHECK_THROWS_AS(q.validate(), ValidationError);
  q.num_bins = 3;
  CHECK_NOTHROW(q.validate());
  q.bin_of[0] = 5;
  CHECK_THROWS_AS(q.validate(), ValidationError);
}
