#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "nmrl/errors.hpp"
#include "nmrl/features.hpp"
#include "nmrl/model.hpp"
#include "nmrl/rng.hpp"

namespace nmrl {

// ---------------------------------------------------------------------------
// Invariant distribution by power iteration (uniform start, threshold 1e-14,
// cap 1e6). Uniqueness is checked through the eigenvalue spectrum whenever
// the chain is small enough to afford a dense solve.
// ---------------------------------------------------------------------------
inline Vec invariant_distribution(const Mat& chain, long max_iter = 1000000) {
  const int n = static_cast<int>(chain.rows());
  if (chain.cols() != n) throw ValidationError("chain must be square");
  for (int i = 0; i < n; ++i) {
    if (std::abs(chain.row(i).sum() - 1.0) > 1e-10)
      throw ValidationError("chain row " + std::to_string(i) + " not stochastic");
  }
  if (n <= 1024) {
    Eigen::EigenSolver<Mat> es(chain);
    int units = 0;
    for (int i = 0; i < n; ++i)
      if (std::abs(es.eigenvalues()(i)) > 1.0 - 1e-8) ++units;
    if (units > 1)
      throw ReducibilityError("chain has multiple eigenvalues on the unit circle; "
                              "invariant distribution not unique");
  }
  Vec pi = Vec::Constant(n, 1.0 / n);
  for (long it = 0; it < max_iter; ++it) {
    Vec next = chain.transpose() * pi;
    const double delta = (next - pi).lpNorm<1>();
    pi = next;
    if (delta < 1e-14) {
      pi /= pi.sum();
      return pi;
    }
  }
  throw ReducibilityError("power iteration did not converge (periodic or reducible chain)");
}

// ---------------------------------------------------------------------------
// The stationary regime MDP: conditional cost and window kernel under the
// invariant distribution of the joint (h, x, u) chain. Zero-mass windows are
// dropped (and reported); a kept window with a zero-mass action is a
// coverage failure.
// ---------------------------------------------------------------------------
struct StationaryRegimeMDP {
  std::vector<int> states;    // kept window indices (original encoding)
  std::vector<int> index_of;  // original window -> compact index, -1 if dropped
  std::vector<int> dropped;
  Vec pi_state;               // (kept)
  Mat pi_sa;                  // (kept, U)
  Mat cost;                   // (kept, U)
  std::vector<Mat> eta;       // [u](kept, kept)
  double beta = 0.0;
  double cost_sup = 0.0;
  int num_actions = 0;

  int dim() const { return static_cast<int>(states.size()); }

  void validate() const {
    for (int u = 0; u < num_actions; ++u)
      for (int s = 0; s < dim(); ++s)
        if (std::abs(eta[u].row(s).sum() - 1.0) > 1e-10)
          throw ValidationError("eta row not stochastic");
    Vec marg = Vec::Zero(dim());
    for (int u = 0; u < num_actions; ++u)
      marg += eta[u].transpose() * pi_sa.col(u);
    if ((marg - pi_state).lpNorm<Eigen::Infinity>() > 1e-10)
      throw ValidationError("stationary marginal consistency violated");
    if (cost.cwiseAbs().maxCoeff() > cost_sup + 1e-12)
      throw ValidationError("conditional cost exceeds the model cost bound");
  }

  // Lifts a compact-state vector back to the full window space (zeros on
  // dropped windows).
  Vec lift(const Vec& f, int full_dim) const {
    Vec out = Vec::Zero(full_dim);
    for (int i = 0; i < dim(); ++i) out(states[i]) = f(i);
    return out;
  }
};

inline StationaryRegimeMDP build_stationary_mdp(const JointChain& chain,
                                                const Vec& pi_joint,
                                                const PomdpSpec& spec,
                                                double beta) {
  if (pi_joint.size() != chain.dim())
    throw ValidationError("joint weights do not match the chain dimension");
  StationaryRegimeMDP mdp;
  mdp.beta = beta;
  mdp.cost_sup = spec.cost_sup();
  mdp.num_actions = chain.num_actions;

  const int nh = chain.num_windows;
  Vec pi_h = Vec::Zero(nh);
  Mat pi_hu = Mat::Zero(nh, chain.num_actions);
  for (int j = 0; j < chain.dim(); ++j) {
    pi_h(chain.window_of(j)) += pi_joint(j);
    pi_hu(chain.window_of(j), chain.action_of(j)) += pi_joint(j);
  }

  mdp.index_of.assign(nh, -1);
  for (int h = 0; h < nh; ++h) {
    if (pi_h(h) > 0.0) {
      mdp.index_of[h] = static_cast<int>(mdp.states.size());
      mdp.states.push_back(h);
    } else {
      mdp.dropped.push_back(h);
    }
  }
  const int ns = mdp.dim();
  mdp.pi_state = Vec::Zero(ns);
  mdp.pi_sa = Mat::Zero(ns, chain.num_actions);
  mdp.cost = Mat::Zero(ns, chain.num_actions);
  mdp.eta.assign(chain.num_actions, Mat::Zero(ns, ns));

  for (int i = 0; i < ns; ++i) {
    const int h = mdp.states[i];
    mdp.pi_state(i) = pi_h(h);
    for (int u = 0; u < chain.num_actions; ++u) {
      if (pi_hu(h, u) <= 0.0)
        throw CoverageError("window " + std::to_string(h) + " action " +
                            std::to_string(u) + " has zero stationary mass");
      mdp.pi_sa(i, u) = pi_hu(h, u);
    }
  }

  for (int j = 0; j < chain.dim(); ++j) {
    const double w = pi_joint(j);
    if (w == 0.0) continue;
    const int h = chain.window_of(j);
    const int x = chain.hidden_of(j);
    const int u = chain.action_of(j);
    const int i = mdp.index_of[h];
    mdp.cost(i, u) += w * spec.cost(x, u);
    for (int j1 = 0; j1 < chain.dim(); ++j1) {
      const double p = chain.kernel(j, j1);
      if (p == 0.0) continue;
      const int i1 = mdp.index_of[chain.window_of(j1)];
      mdp.eta[u](i, i1) += w * p;
    }
  }
  for (int i = 0; i < ns; ++i) {
    for (int u = 0; u < chain.num_actions; ++u) {
      mdp.cost(i, u) /= mdp.pi_sa(i, u);
      mdp.eta[u].row(i) /= mdp.pi_sa(i, u);
    }
  }
  mdp.validate();
  return mdp;
}

// ---------------------------------------------------------------------------
// Bellman operators and exact solutions on the stationary regime MDP.
// Policies are indexed by the original window encoding.
// ---------------------------------------------------------------------------
inline Vec bellman_policy(const Vec& f, const StationaryRegimeMDP& mdp,
                          const FiniteMemoryPolicy& policy) {
  if (f.size() != mdp.dim()) throw ValidationError("bellman_policy: size mismatch");
  Vec out = Vec::Zero(mdp.dim());
  for (int i = 0; i < mdp.dim(); ++i) {
    const int h = mdp.states[i];
    for (int u = 0; u < mdp.num_actions; ++u) {
      const double g = policy.table(h, u);
      if (g == 0.0) continue;
      out(i) += g * (mdp.cost(i, u) + mdp.beta * mdp.eta[u].row(i).dot(f));
    }
  }
  return out;
}

inline Mat bellman_optimal(const Mat& g, const StationaryRegimeMDP& mdp) {
  if (g.rows() != mdp.dim() || g.cols() != mdp.num_actions)
    throw ValidationError("bellman_optimal: size mismatch");
  const Vec g_min = g.rowwise().minCoeff();
  Mat out(mdp.dim(), mdp.num_actions);
  for (int u = 0; u < mdp.num_actions; ++u)
    out.col(u) = mdp.cost.col(u) + mdp.beta * (mdp.eta[u] * g_min);
  return out;
}

// Exact J^pi_beta by linear solve of (I - beta P_gamma) J = c_gamma.
inline Vec value_of_policy(const StationaryRegimeMDP& mdp,
                           const FiniteMemoryPolicy& policy) {
  const int n = mdp.dim();
  Mat p = Mat::Zero(n, n);
  Vec c = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    const int h = mdp.states[i];
    for (int u = 0; u < mdp.num_actions; ++u) {
      const double g = policy.table(h, u);
      if (g == 0.0) continue;
      p.row(i) += g * mdp.eta[u].row(i);
      c(i) += g * mdp.cost(i, u);
    }
  }
  return (Mat::Identity(n, n) - mdp.beta * p).partialPivLu().solve(c);
}

// Q* by value iteration from zero, run to the geometric-rate horizon for the
// requested residual.
inline Mat optimal_q(const StationaryRegimeMDP& mdp, double tol = 1e-12) {
  Mat q = Mat::Zero(mdp.dim(), mdp.num_actions);
  const long iters =
      static_cast<long>(std::ceil(std::log(tol * (1.0 - mdp.beta) /
                                           std::max(mdp.cost_sup, 1e-300)) /
                                  std::log(mdp.beta))) + 2;
  for (long k = 0; k < iters; ++k) {
    Mat next = bellman_optimal(q, mdp);
    if ((next - q).cwiseAbs().maxCoeff() < tol * (1.0 - mdp.beta)) {
      return next;
    }
    q = next;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Projected fixed point: A theta* = b with
// A = E_pi[Phi(S)(Phi(S) - beta Phi(S1))^T], b = E_pi[Phi(S) C].
// The basis is indexed by the original window encoding.
// ---------------------------------------------------------------------------
struct FixedPointSolution {
  Mat a;
  Vec b;
  Vec theta;
  double sigma_min_sym = 0.0;
  double residual = 0.0;
};

inline FixedPointSolution solve_projected_fixed_point(
    const StationaryRegimeMDP& mdp, const FeatureBasis& basis,
    const FiniteMemoryPolicy& policy) {
  const int d = basis.dim();
  const int n = mdp.dim();
  Mat phi(n, d);
  for (int i = 0; i < n; ++i) phi.row(i) = basis.table.row(mdp.states[i]);

  const GramMatrix sigma = make_gram(
      phi.transpose() * mdp.pi_state.asDiagonal() * phi, "exploration");
  if (sigma.sigma_min <= 1e-10)
    throw RankDeficiencyError("feature Gram matrix is singular", sigma.sigma_min);

  Mat a = Mat::Zero(d, d);
  Vec b = Vec::Zero(d);
  for (int i = 0; i < n; ++i) {
    const Vec f = phi.row(i).transpose();
    Vec mean_next = Vec::Zero(d);
    double mean_cost = 0.0;
    double w = 0.0;
    for (int u = 0; u < mdp.num_actions; ++u) {
      const double wu = mdp.pi_sa(i, u);
      w += wu;
      mean_cost += wu * mdp.cost(i, u);
      mean_next += wu * (phi.transpose() * mdp.eta[u].row(i).transpose());
    }
    a += f * (w * f - mdp.beta * mean_next).transpose();
    b += mean_cost * f;
  }
  FixedPointSolution sol;
  sol.a = a;
  sol.b = b;
  Eigen::FullPivLU<Mat> lu(a);
  if (!lu.isInvertible())
    throw RankDeficiencyError("fixed-point matrix A is singular", 0.0);
  sol.theta = lu.solve(b);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  sol.sigma_min_sym = es.eigenvalues().minCoeff();
  sol.residual = (a * sol.theta - b).norm();
  return sol;
}

// Fixed-point iteration of Pi T^gamma from zero; independent route to theta*.
inline Vec iterate_projected_fixed_point(const StationaryRegimeMDP& mdp,
                                         const FeatureBasis& basis,
                                         const FiniteMemoryPolicy& policy,
                                         double tol = 1e-10,
                                         long max_iter = 100000) {
  const int n = mdp.dim();
  Mat phi(n, basis.dim());
  for (int i = 0; i < n; ++i) phi.row(i) = basis.table.row(mdp.states[i]);
  FeatureBasis compact;
  compact.table = phi;
  Vec theta = Vec::Zero(basis.dim());
  for (long k = 0; k < max_iter; ++k) {
    const Vec tf = bellman_policy(phi * theta, mdp, policy);
    const Vec next = project(tf, mdp.pi_state, compact);
    if ((next - theta).lpNorm<Eigen::Infinity>() < tol) return next;
    theta = next;
  }
  throw ValidationError("projected fixed-point iteration did not converge");
}

// L2(pi) norm over the compact state space.
inline double l2_pi_norm(const Vec& f, const Vec& pi) {
  return std::sqrt(f.cwiseAbs2().dot(pi));
}

// Max over random function pairs of the projected-Bellman contraction ratio.
inline double contraction_estimate(const StationaryRegimeMDP& mdp,
                                   const FeatureBasis& basis,
                                   const FiniteMemoryPolicy& policy,
                                   int n_pairs, std::uint64_t seed) {
  if (n_pairs < 1) throw ValidationError("contraction_estimate: n_pairs >= 1");
  const int n = mdp.dim();
  Mat phi(n, basis.dim());
  for (int i = 0; i < n; ++i) phi.row(i) = basis.table.row(mdp.states[i]);
  FeatureBasis compact;
  compact.table = phi;
  CounterRng rng(seed, RngStream::kFunctionDraw);
  double worst = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    Vec f(n), g(n);
    for (int i = 0; i < n; ++i) {
      f(i) = 2.0 * rng.next_double() - 1.0;
      g(i) = 2.0 * rng.next_double() - 1.0;
    }
    const double denom = l2_pi_norm(f - g, mdp.pi_state);
    if (denom == 0.0) continue;
    const Vec pf = phi * project(bellman_policy(f, mdp, policy), mdp.pi_state, compact);
    const Vec pg = phi * project(bellman_policy(g, mdp, policy), mdp.pi_state, compact);
    worst = std::max(worst, l2_pi_norm(pf - pg, mdp.pi_state) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Mixing surrogate: alpha_bar(k) = 1/2 sum_i pi_i ||P^k(i,.) - pi||_1, an
// upper bound on the strong mixing coefficient for stationary chains.
// ---------------------------------------------------------------------------
struct MixingProfile {
  std::vector<double> alpha_bar;     // k = 0 .. k_max
  std::vector<double> sqrt_partial;  // partial sums of sqrt(alpha_bar)
  bool summable_trend = false;       // alpha_bar(k_max) < alpha_bar(1) / 2
};

inline MixingProfile mixing_profile(const Mat& chain, const Vec& pi, int k_max) {
  const int n = static_cast<int>(chain.rows());
  MixingProfile mp;
  Mat pk = Mat::Identity(n, n);
  double acc = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    double a = 0.0;
    for (int i = 0; i < n; ++i)
      a += pi(i) * (pk.row(i).transpose() - pi).lpNorm<1>();
    a *= 0.5;
    // repeated kernel multiplication leaves O(eps) residue on chains that
    //  mix exactly; below double precision the coefficient is zero
    if (a < 1e-13) a = 0.0;
    mp.alpha_bar.push_back(a);
    acc += std::sqrt(a);
    mp.sqrt_partial.push_back(acc);
    if (k < k_max) pk = pk * chain;
  }
  if (mp.alpha_bar.size() > 2)
    mp.summable_trend = mp.alpha_bar.back() < 0.5 * mp.alpha_bar[1] ||
                        mp.alpha_bar[1] == 0.0;
  return mp;
}

// ---------------------------------------------------------------------------
// Gordin diagnostic: partial sums over k of the spectral-norm deviation of
// E[A(Z_k, Z_{k+1}) | Z_0 = z] from its stationary mean, with
// A(z, z') = Phi(h(z)) (Phi(h(z)) - beta Phi(h(z')))^T.
// ---------------------------------------------------------------------------
struct GordinReport {
  Vec partial_sums;       // per starting state z
  double max_partial = 0.0;
  double last_increment = 0.0;
};

inline GordinReport gordin_diagnostic(const JointChain& chain, const Vec& pi,
                                      const FeatureBasis& basis, double beta,
                                      int k_max) {
  const int n = chain.dim();
  const int d = basis.dim();
  // m(z) = E[A(z, Z') | z], vectorized row-major into d*d columns
  Mat m(n, d * d);
  for (int j = 0; j < n; ++j) {
    const Vec f = basis.phi(chain.window_of(j));
    Vec mean_next = Vec::Zero(d);
    for (int j1 = 0; j1 < n; ++j1) {
      const double p = chain.kernel(j, j1);
      if (p == 0.0) continue;
      mean_next += p * basis.phi(chain.window_of(j1));
    }
    const Mat a = f * (f - beta * mean_next).transpose();
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) m(j, r * d + c) = a(r, c);
  }
  const Eigen::RowVectorXd mean = pi.transpose() * m;

  GordinReport rep;
  rep.partial_sums = Vec::Zero(n);
  Mat ek = m;  // E[A at lag k | Z_0 = z]; k = 0 term
  for (int k = 0; k <= k_max; ++k) {
    double inc_max = 0.0;
    for (int z = 0; z < n; ++z) {
      Mat dev(d, d);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) dev(r, c) = ek(z, r * d + c) - mean(r * d + c);
      const double s = dev.jacobiSvd().singularValues()(0);
      rep.partial_sums(z) += s;
      inc_max = std::max(inc_max, s);
    }
    rep.last_increment = inc_max;
    if (k < k_max) ek = chain.kernel * ek;
  }
  rep.max_partial = rep.partial_sums.maxCoeff();
  return rep;
}

// ---------------------------------------------------------------------------
// Exact policy value on the true POMDP: V(h, x) under a finite-memory
// policy, solved on the (h, x) chain. Used as the measured side of the
// finite-memory error bounds.
// ---------------------------------------------------------------------------
inline Mat exact_pomdp_policy_value(const PomdpSpec& spec,
                                    const FiniteMemoryPolicy& policy,
                                    int memory_n, double beta) {
  const int nh = static_cast<int>(window_count(spec.num_obs, spec.num_actions,
                                               memory_n));
  const int nx = spec.num_states;
  const int dim = nh * nx;
  Mat p = Mat::Zero(dim, dim);
  Vec c = Vec::Zero(dim);
  for (int h = 0; h < nh; ++h) {
    const WindowState w = decode_window(h, memory_n, spec);
    for (int x = 0; x < nx; ++x) {
      const int row = h * nx + x;
      for (int u = 0; u < spec.num_actions; ++u) {
        const double g = policy.table(h, u);
        if (g == 0.0) continue;
        c(row) += g * spec.cost(x, u);
        for (int x1 = 0; x1 < nx; ++x1) {
          const double pt = spec.transition[u](x, x1);
          if (pt == 0.0) continue;
          for (int y1 = 0; y1 < spec.num_obs; ++y1) {
            const double po = spec.observation(x1, y1);
            if (po == 0.0) continue;
            const int h1 = encode_window(window_shift(w, y1, u), spec);
            p(row, h1 * nx + x1) += g * pt * po;
          }
        }
      }
    }
  }
  const Vec v = (Mat::Identity(dim, dim) - beta * p).partialPivLu().solve(c);
  Mat out(nh, nx);
  for (int h = 0; h < nh; ++h)
    for (int x = 0; x < nx; ++x) out(h, x) = v(h * nx + x);
  return out;
}

}  // namespace nmrl
