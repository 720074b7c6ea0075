#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nmrl/errors.hpp"
#include "nmrl/features.hpp"
#include "nmrl/filter_stability.hpp"
#include "nmrl/learners.hpp"
#include "nmrl/model.hpp"
#include "nmrl/oracle.hpp"

namespace nmrl {

struct ErrorBoundReport {
  std::string name;
  double lhs = 0.0;              // measured error (certified lower bound)
  double rhs = 0.0;              // paper bound (certified upper bound)
  double lhs_uncertainty = 0.0;  // tracked measurement slack already deducted
  std::map<std::string, double> inputs;

  double slack() const { return rhs - lhs; }
};

// ---------------------------------------------------------------------------
// Dense two-phase simplex for the small LPs used here. Solves
// min c^T x subject to A x = b, x >= 0, with Bland's rule.
// ---------------------------------------------------------------------------
namespace detail {

inline bool simplex_iterate(Mat& t, std::vector<int>& basis, const Vec& cost,
                            int n_cols) {
  const int m = static_cast<int>(t.rows());
  // reduced costs under the current basis
  Vec cb(m);
  for (int i = 0; i < m; ++i) cb(i) = cost(basis[i]);
  while (true) {
    int enter = -1;
    for (int j = 0; j < n_cols; ++j) {
      const double rc = cost(j) - cb.dot(t.col(j));
      if (rc < -1e-11) {
        enter = j;
        break;  // Bland: lowest index
      }
    }
    if (enter < 0) return true;
    int leave = -1;
    double best = 0.0;
    for (int i = 0; i < m; ++i) {
      if (t(i, enter) > 1e-11) {
        const double ratio = t(i, n_cols) / t(i, enter);
        if (leave < 0 || ratio < best - 1e-13 ||
            (std::abs(ratio - best) <= 1e-13 && basis[i] < basis[leave])) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) return false;  // unbounded
    t.row(leave) /= t(leave, enter);
    for (int i = 0; i < m; ++i) {
      if (i == leave) continue;
      t.row(i) -= t(i, enter) * t.row(leave);
    }
    basis[leave] = enter;
    cb(leave) = cost(enter);
  }
}

inline Vec simplex_solve(const Vec& c, Mat a, Vec b) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  for (int i = 0; i < m; ++i) {
    if (b(i) < 0.0) {
      a.row(i) *= -1.0;
      b(i) *= -1.0;
    }
  }
  // tableau [A | I | b] with artificial basis
  Mat t(m, n + m + 1);
  t.leftCols(n) = a;
  t.block(0, n, m, m) = Mat::Identity(m, m);
  t.col(n + m) = b;
  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = n + i;

  Vec phase1 = Vec::Zero(n + m);
  phase1.tail(m).setOnes();
  if (!simplex_iterate(t, basis, phase1, n + m))
    throw ValidationError("simplex: phase-1 unbounded");
  double art = 0.0;
  for (int i = 0; i < m; ++i)
    if (basis[i] >= n) art += t(i, n + m);
  if (art > 1e-8) throw ValidationError("simplex: infeasible program");
  // pivot residual artificials out where possible
  for (int i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    for (int j = 0; j < n; ++j) {
      if (std::abs(t(i, j)) > 1e-9) {
        t.row(i) /= t(i, j);
        for (int r = 0; r < m; ++r) {
          if (r == i) continue;
          t.row(r) -= t(r, j) * t.row(i);
        }
        basis[i] = j;
        break;
      }
    }
  }
  Vec phase2 = Vec::Zero(n + m);
  phase2.head(n) = c;
  phase2.tail(m).setConstant(1e30);  // keep artificials out
  if (!simplex_iterate(t, basis, phase2, n))
    throw ValidationError("simplex: unbounded program");
  Vec x = Vec::Zero(n);
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) x(basis[i]) = t(i, n + m);
  return x;
}

}  // namespace detail

// Minimax near-linearity constant: min_theta max_s |J(s) - theta^T Phi(s)|,
// solved exactly as a linear program over the finite state set.
inline double lambda_hat(const Vec& j, const Mat& phi) {
  const int n = static_cast<int>(phi.rows());
  const int d = static_cast<int>(phi.cols());
  const int nv = 2 * d + 1 + 2 * n;
  Mat a = Mat::Zero(2 * n, nv);
  Vec b(2 * n);
  for (int i = 0; i < n; ++i) {
    a.block(i, 0, 1, d) = phi.row(i);
    a.block(i, d, 1, d) = -phi.row(i);
    a(i, 2 * d) = -1.0;
    a(i, 2 * d + 1 + i) = 1.0;
    b(i) = j(i);
    a.block(n + i, 0, 1, d) = -phi.row(i);
    a.block(n + i, d, 1, d) = phi.row(i);
    a(n + i, 2 * d) = -1.0;
    a(n + i, 2 * d + 1 + n + i) = 1.0;
    b(n + i) = -j(i);
  }
  Vec c = Vec::Zero(nv);
  c(2 * d) = 1.0;
  const Vec x = detail::simplex_solve(c, a, b);
  return x(2 * d);
}

// ---------------------------------------------------------------------------
// Bound checks against the exact oracle quantities.
// ---------------------------------------------------------------------------
inline ErrorBoundReport l2_bound(const Vec& j, const Vec& theta_star,
                                 const FeatureBasis& basis_compact,
                                 const StationaryRegimeMDP& mdp) {
  ErrorBoundReport rep;
  rep.name = "l2_bound";
  const Vec approx = basis_compact.table * theta_star;
  rep.lhs = l2_pi_norm(j - approx, mdp.pi_state);
  const Vec proj = basis_compact.table *
                   project(j, mdp.pi_state, basis_compact);
  rep.rhs = l2_pi_norm(j - proj, mdp.pi_state) / (1.0 - mdp.beta);
  rep.inputs["beta"] = mdp.beta;
  return rep;
}

inline ErrorBoundReport uniform_bound(const Vec& j, const Vec& theta_star,
                                      const FeatureBasis& basis_compact,
                                      const StationaryRegimeMDP& mdp,
                                      double lam) {
  ErrorBoundReport rep;
  rep.name = "uniform_bound";
  const int d = basis_compact.dim();
  const GramMatrix sigma = gram_exploration(basis_compact, mdp.pi_state);
  if (sigma.sigma_min <= 0.0)
    throw RankDeficiencyError("uniform_bound needs a positive-definite Gram matrix",
                              sigma.sigma_min);
  rep.lhs = (j - basis_compact.table * theta_star).cwiseAbs().maxCoeff();
  rep.rhs = lam * (1.0 + (2.0 - mdp.beta) / (1.0 - mdp.beta) *
                             std::sqrt(static_cast<double>(d) / sigma.sigma_min));
  rep.inputs["lambda"] = lam;
  rep.inputs["beta"] = mdp.beta;
  rep.inputs["d"] = d;
  rep.inputs["sigma_min"] = sigma.sigma_min;
  return rep;
}

// ---------------------------------------------------------------------------
// Initial-condition enumeration: all windows reachable at time N from prior
// mu0 under a burn-in action distribution, with probabilities and hidden
// posteriors.
// ---------------------------------------------------------------------------
struct InitialWindow {
  int window = 0;
  double prob = 0.0;
  Vec posterior;  // P(X_N = . | window)
};

inline std::vector<InitialWindow> enumerate_initial_windows(
    const PomdpSpec& spec, const Vec& mu0, int memory_n,
    const Vec* burn_in = nullptr) {
  const Vec burn = burn_in
                       ? *burn_in
                       : Vec::Constant(spec.num_actions, 1.0 / spec.num_actions);
  struct Node {
    Vec joint;  // unnormalized measure over current hidden state
    WindowState w;
    double act_p;
    int k;
  };
  std::vector<InitialWindow> out;
  std::vector<Node> stack;
  for (int y0 = 0; y0 < spec.num_obs; ++y0) {
    Node n0;
    n0.joint = mu0.cwiseProduct(spec.observation.col(y0));
    if (n0.joint.sum() == 0.0) continue;
    n0.w.observations = {y0};
    n0.act_p = 1.0;
    n0.k = 0;
    stack.push_back(std::move(n0));
  }
  while (!stack.empty()) {
    Node n = std::move(stack.back());
    stack.pop_back();
    if (n.k == memory_n) {
      InitialWindow iw;
      iw.window = encode_window(n.w, spec);
      const double mass = n.joint.sum();
      iw.prob = mass * n.act_p;
      iw.posterior = n.joint / mass;
      out.push_back(std::move(iw));
      continue;
    }
    for (int u = 0; u < spec.num_actions; ++u) {
      if (burn(u) == 0.0) continue;
      const Vec pushed = spec.transition[u].transpose() * n.joint;
      for (int y = 0; y < spec.num_obs; ++y) {
        Node next;
        next.joint = pushed.cwiseProduct(spec.observation.col(y));
        if (next.joint.sum() == 0.0) continue;
        next.w.observations.reserve(n.w.observations.size() + 1);
        next.w.observations.push_back(y);
        next.w.observations.insert(next.w.observations.end(),
                                   n.w.observations.begin(),
                                   n.w.observations.end());
        next.w.actions.reserve(n.w.actions.size() + 1);
        next.w.actions.push_back(u);
        next.w.actions.insert(next.w.actions.end(), n.w.actions.begin(),
                              n.w.actions.end());
        next.act_p = n.act_p * burn(u);
        next.k = n.k + 1;
        stack.push_back(std::move(next));
      }
    }
  }
  return out;
}

// E over initial windows of |J_beta(z0, gamma^N) - theta*^T Phi(h0)| against
// the finite-memory policy-evaluation bound.
inline ErrorBoundReport pomdp_value_bound(
    const PomdpSpec& spec, const FiniteMemoryPolicy& policy, int memory_n,
    double beta, const FeatureBasis& basis, const Vec& theta_star,
    double sigma_min, const FilterStabilityReport& fs, double lam,
    const Vec* burn_in = nullptr) {
  ErrorBoundReport rep;
  rep.name = "pomdp_value_bound";
  const Mat v = exact_pomdp_policy_value(spec, policy, memory_n, beta);
  double lhs = 0.0;
  for (const InitialWindow& iw :
       enumerate_initial_windows(spec, spec.prior, memory_n, burn_in)) {
    const double j_true = iw.posterior.dot(v.row(iw.window).transpose());
    lhs += iw.prob * std::abs(j_true - basis.value(theta_star, iw.window));
  }
  rep.lhs = lhs;
  const double csup = spec.cost_sup();
  const double sum_lt = fs.discounted_sum_upper() * csup / (1.0 - beta);
  const double lam_term =
      lam * (1.0 + (2.0 - beta) / (1.0 - beta) *
                       std::sqrt(static_cast<double>(basis.dim()) / sigma_min));
  rep.rhs = sum_lt + lam_term;
  rep.inputs["beta"] = beta;
  rep.inputs["cost_sup"] = csup;
  rep.inputs["lambda"] = lam;
  rep.inputs["sigma_min"] = sigma_min;
  rep.inputs["d"] = basis.dim();
  rep.inputs["discounted_lt_sum"] = fs.discounted_sum_upper();
  return rep;
}

// ---------------------------------------------------------------------------
// Optimal value of the true POMDP by value iteration on a dense belief grid
// with linear interpolation; the interpolation error is tracked through the
// value function's total-variation Lipschitz constant.
// ---------------------------------------------------------------------------
struct BeliefGridValue {
  std::vector<Vec> grid;
  Vec values;
  double interp_error = 0.0;
  double beta = 0.0;

  double value(const Vec& belief) const;
};

namespace detail {

// Enumerate belief-simplex grid points with denominator m.
inline void belief_grid_points(int dims, int m, std::vector<Vec>& out) {
  std::vector<int> comp(dims, 0);
  std::function<void(int, int)> rec = [&](int d, int rem) {
    if (d == dims - 1) {
      comp[d] = rem;
      Vec b(dims);
      for (int i = 0; i < dims; ++i) b(i) = static_cast<double>(comp[i]) / m;
      out.push_back(b);
      return;
    }
    for (int k = 0; k <= rem; ++k) {
      comp[d] = k;
      rec(d + 1, rem - k);
    }
  };
  rec(0, m);
}

}  // namespace detail

inline double nearest_value(const std::vector<Vec>& grid, const Vec& values,
                            const Vec& b) {
  double best = -1.0;
  double val = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double dist = (grid[i] - b).lpNorm<1>();
    if (best < 0.0 || dist < best) {
      best = dist;
      val = values(static_cast<int>(i));
    }
  }
  return val;
}

inline double BeliefGridValue::value(const Vec& belief) const {
  return nearest_value(grid, values, belief);
}

inline BeliefGridValue belief_value_iteration(const PomdpSpec& spec, double beta,
                                              int grid_denominator,
                                              double tol = 1e-9,
                                              long max_iter = 100000) {
  BeliefGridValue bg;
  bg.beta = beta;
  detail::belief_grid_points(spec.num_states, grid_denominator, bg.grid);
  const int n = static_cast<int>(bg.grid.size());

  // per grid point and action: expected cost, and for each obs the successor
  // probability and the index of the nearest grid point to the updated belief
  struct Succ {
    double p;
    int idx;
  };
  std::vector<std::vector<std::vector<Succ>>> succ(
      n, std::vector<std::vector<Succ>>(spec.num_actions));
  Mat cbar(n, spec.num_actions);
  double grid_gap = 0.0;

  auto nearest_idx = [&](const Vec& b, double& gap) {
    int best = 0;
    double bd = (bg.grid[0] - b).lpNorm<1>();
    for (int i = 1; i < n; ++i) {
      const double d2 = (bg.grid[i] - b).lpNorm<1>();
      if (d2 < bd) {
        bd = d2;
        best = i;
      }
    }
    gap = std::max(gap, bd);
    return best;
  };

  for (int i = 0; i < n; ++i) {
    for (int u = 0; u < spec.num_actions; ++u) {
      cbar(i, u) = bg.grid[i].dot(spec.cost.col(u));
      const Vec pushed = spec.transition[u].transpose() * bg.grid[i];
      for (int y = 0; y < spec.num_obs; ++y) {
        Vec next = pushed.cwiseProduct(spec.observation.col(y));
        const double p = next.sum();
        if (p == 0.0) continue;
        next /= p;
        double gap = 0.0;
        const int idx = nearest_idx(next, gap);
        grid_gap = std::max(grid_gap, gap);
        succ[i][u].push_back({p, idx});
      }
    }
  }

  bg.values = Vec::Zero(n);
  Vec next(n);
  for (long it = 0; it < max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      double best = 0.0;
      for (int u = 0; u < spec.num_actions; ++u) {
        double v = cbar(i, u);
        for (const auto& s : succ[i][u]) v += beta * s.p * bg.values(s.idx);
        if (u == 0 || v < best) best = v;
      }
      next(i) = best;
    }
    const double delta = (next - bg.values).cwiseAbs().maxCoeff();
    bg.values = next;
    if (delta < tol * (1.0 - beta)) break;
  }
  // V* is Lipschitz in L1 with constant ||c||_inf / (1-beta); the grid
  // snapping error compounds through the discounted recursion.
  const double lip = spec.cost_sup() / (1.0 - beta);
  bg.interp_error = beta / (1.0 - beta) * lip * grid_gap + lip * grid_gap;
  return bg;
}

// E over initial windows of |J_beta(z0, gamma^N) - J*_beta(z0)| against the
// learned-policy bound with quantized observations.
inline ErrorBoundReport pomdp_q_bound(const PomdpSpec& spec,
                                      const FiniteMemoryPolicy& learned_policy,
                                      int memory_n, double beta,
                                      const FilterStabilityReport& fs_hat,
                                      double alpha_y,
                                      const BeliefGridValue& opt,
                                      const Vec* burn_in = nullptr) {
  ErrorBoundReport rep;
  rep.name = "pomdp_q_bound";
  const Mat v = exact_pomdp_policy_value(spec, learned_policy, memory_n, beta);
  double lhs = 0.0;
  for (const InitialWindow& iw :
       enumerate_initial_windows(spec, spec.prior, memory_n, burn_in)) {
    const double j_pol = iw.posterior.dot(v.row(iw.window).transpose());
    const double j_opt = opt.value(iw.posterior);
    lhs += iw.prob * std::abs(j_pol - j_opt);
  }
  rep.lhs_uncertainty = opt.interp_error;
  rep.lhs = std::max(0.0, lhs - opt.interp_error);
  const double csup = spec.cost_sup();
  rep.rhs = 2.0 * csup / (1.0 - beta) * fs_hat.discounted_sum_upper() +
            beta / ((1.0 - beta) * (1.0 - beta)) * csup * alpha_y * fs_hat.l_y;
  rep.inputs["beta"] = beta;
  rep.inputs["cost_sup"] = csup;
  rep.inputs["alpha_y"] = alpha_y;
  rep.inputs["l_y"] = fs_hat.l_y;
  rep.inputs["discounted_lt_sum"] = fs_hat.discounted_sum_upper();
  return rep;
}

// Channel smoothness surrogate on a finite observation alphabet:
// max_x max_{y != y'} |O(y|x) - O(y'|x)| / dist(y, y').
inline double channel_smoothness(const PomdpSpec& spec,
                                 const std::vector<double>* positions = nullptr) {
  double a = 0.0;
  for (int x = 0; x < spec.num_states; ++x) {
    for (int y = 0; y < spec.num_obs; ++y) {
      for (int y2 = y + 1; y2 < spec.num_obs; ++y2) {
        const double py = positions ? (*positions)[y] : static_cast<double>(y);
        const double py2 = positions ? (*positions)[y2] : static_cast<double>(y2);
        const double dist = std::abs(py - py2);
        if (dist == 0.0)
          throw ValidationError("observation metric assigns distance zero to distinct observations");
        a = std::max(a, std::abs(spec.observation(x, y) - spec.observation(x, y2)) / dist);
      }
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Monte-Carlo rollout of the discounted cost with a certified truncation
// tail.
// ---------------------------------------------------------------------------
struct RolloutEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double tail_bound = 0.0;
  long n_rollouts = 0;
};

inline RolloutEstimate rollout_value(const PomdpSpec& spec,
                                     const FiniteMemoryPolicy& policy,
                                     int memory_n, double beta, long n_rollouts,
                                     long horizon, std::uint64_t seed) {
  if (n_rollouts < 1) throw ValidationError("rollout_value: n_rollouts >= 1");
  RolloutEstimate est;
  est.n_rollouts = n_rollouts;
  est.tail_bound = std::pow(beta, horizon) * spec.cost_sup() / (1.0 - beta);
  double sum = 0.0;
  double sum2 = 0.0;
  for (long r = 0; r < n_rollouts; ++r) {
    SimStream stream(spec, policy, memory_n, seed + static_cast<std::uint64_t>(r));
    double total = 0.0;
    double bt = 1.0;
    for (long t = 0; t < horizon; ++t) {
      total += bt * stream.step().cost;
      bt *= beta;
    }
    sum += total;
    sum2 += total * total;
  }
  est.mean = sum / n_rollouts;
  if (n_rollouts > 1) {
    const double var =
        std::max(0.0, (sum2 - sum * sum / n_rollouts) / (n_rollouts - 1));
    est.std_error = std::sqrt(var / n_rollouts);
  }
  return est;
}

}  // namespace nmrl
