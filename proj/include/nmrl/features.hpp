#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nmrl/errors.hpp"
#include "nmrl/model.hpp"
#include "nmrl/rng.hpp"

namespace nmrl {

// ---------------------------------------------------------------------------
// FeatureBasis: a feature table over encoded points. A point is either a
// state s or a state-action pair indexed s * num_actions + u (num_actions > 0
// marks the latter). Entries are validated against |phi| <= 1.
// ---------------------------------------------------------------------------
struct FeatureBasis {
  Mat table;           // (num_points, d)
  int num_actions = 0; // 0 for a state basis

  int dim() const { return static_cast<int>(table.cols()); }
  int num_points() const { return static_cast<int>(table.rows()); }
  int num_states() const {
    return num_actions > 0 ? num_points() / num_actions : num_points();
  }

  Vec phi(int point) const { return table.row(point).transpose(); }
  Vec phi(int s, int u) const { return table.row(s * num_actions + u).transpose(); }

  double value(const Vec& theta, int point) const {
    return table.row(point).dot(theta);
  }
  double value(const Vec& theta, int s, int u) const {
    return table.row(s * num_actions + u).dot(theta);
  }

  void validate() const {
    if (table.rows() < 1 || table.cols() < 1)
      throw ValidationError("feature table is empty");
    if (num_actions > 0 && table.rows() % num_actions != 0)
      throw ValidationError("state-action feature table rows not divisible by action count");
    if (!table.allFinite())
      throw ValidationError("feature table has non-finite entries");
    if (table.cwiseAbs().maxCoeff() > 1.0 + 1e-12)
      throw ValidationError("feature magnitude exceeds 1");
  }
};

// ---------------------------------------------------------------------------
// QuantizerBasis: a partition of the point space; the induced basis is the
// one-hot indicator of each bin.
// ---------------------------------------------------------------------------
struct QuantizerBasis {
  std::vector<int> bin_of;
  int num_bins = 0;
  int num_actions = 0;

  void validate() const {
    if (num_bins < 1) throw ValidationError("quantizer needs at least one bin");
    std::vector<bool> hit(num_bins, false);
    for (std::size_t p = 0; p < bin_of.size(); ++p) {
      const int b = bin_of[p];
      if (b < 0 || b >= num_bins)
        throw ValidationError("quantizer bin index out of range at point " +
                              std::to_string(p));
      hit[b] = true;
    }
    for (int b = 0; b < num_bins; ++b)
      if (!hit[b]) throw ValidationError("quantizer bin " + std::to_string(b) + " is empty");
  }

  FeatureBasis to_basis() const {
    validate();
    FeatureBasis fb;
    fb.table = Mat::Zero(static_cast<int>(bin_of.size()), num_bins);
    for (std::size_t p = 0; p < bin_of.size(); ++p)
      fb.table(static_cast<int>(p), bin_of[p]) = 1.0;
    fb.num_actions = num_actions;
    return fb;
  }
};

// ---------------------------------------------------------------------------
// Gram matrices and the L2(pi) projection.
// ---------------------------------------------------------------------------
struct GramMatrix {
  Mat sigma;
  double sigma_min = 0.0;
  std::string tag;
};

inline GramMatrix make_gram(const Mat& sigma, const std::string& tag) {
  GramMatrix g;
  g.sigma = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(g.sigma);
  g.sigma_min = es.eigenvalues().minCoeff();
  g.tag = tag;
  return g;
}

inline GramMatrix gram_exploration(const FeatureBasis& basis, const Vec& pi) {
  if (pi.size() != basis.num_points())
    throw ValidationError("gram_exploration: weight length mismatch");
  Mat sigma = basis.table.transpose() * pi.asDiagonal() * basis.table;
  return make_gram(sigma, "exploration");
}

// Greedy action for theta at state s: argmin_u theta' Phi(s,u), lowest index
// on ties.
inline int greedy_action(const FeatureBasis& basis_sa, const Vec& theta, int s) {
  int best = 0;
  double best_v = basis_sa.value(theta, s, 0);
  for (int u = 1; u < basis_sa.num_actions; ++u) {
    const double v = basis_sa.value(theta, s, u);
    if (v < best_v) {
      best_v = v;
      best = u;
    }
  }
  return best;
}

inline GramMatrix gram_greedy_map(const FeatureBasis& basis_sa,
                                  const std::vector<int>& action_of,
                                  const Vec& pi_state) {
  Mat sigma = Mat::Zero(basis_sa.dim(), basis_sa.dim());
  for (int s = 0; s < basis_sa.num_states(); ++s) {
    const Vec f = basis_sa.phi(s, action_of[s]);
    sigma += pi_state(s) * f * f.transpose();
  }
  return make_gram(sigma, "greedy");
}

inline GramMatrix gram_greedy(const FeatureBasis& basis_sa, const Vec& theta,
                              const Vec& pi_state) {
  if (basis_sa.num_actions < 1)
    throw ValidationError("gram_greedy needs a state-action basis");
  if (pi_state.size() != basis_sa.num_states())
    throw ValidationError("gram_greedy: state weight length mismatch");
  std::vector<int> action_of(basis_sa.num_states());
  for (int s = 0; s < basis_sa.num_states(); ++s)
    action_of[s] = greedy_action(basis_sa, theta, s);
  return gram_greedy_map(basis_sa, action_of, pi_state);
}

// theta_f = Sigma^{-1} E_pi[Phi f]; throws when Sigma is singular at the
// 1e-10 tolerance.
inline Vec project(const Vec& f, const Vec& pi, const FeatureBasis& basis) {
  if (f.size() != basis.num_points() || pi.size() != basis.num_points())
    throw ValidationError("project: length mismatch");
  const GramMatrix g = gram_exploration(basis, pi);
  if (g.sigma_min <= 1e-10)
    throw RankDeficiencyError("projection Gram matrix is singular", g.sigma_min);
  const Vec rhs = basis.table.transpose() * pi.cwiseProduct(f);
  return g.sigma.ldlt().solve(rhs);
}

inline Vec project_values(const Vec& f, const Vec& pi, const FeatureBasis& basis) {
  return basis.table * project(f, pi, basis);
}

// ---------------------------------------------------------------------------
// Covariance dominance beta^2 Sigma_theta < Sigma_gamma. All deterministic
// greedy maps are enumerated when |U|^|S| <= 1e6; otherwise 1e4 parameter
// draws from the unit ball stand in for the quantifier.
// ---------------------------------------------------------------------------
struct DominanceReport {
  bool holds = false;
  double worst_margin = 0.0;
  long candidates = 0;
  bool exhaustive = false;
};

inline DominanceReport dominance_check(const GramMatrix& sigma_gamma,
                                       const FeatureBasis& basis_sa,
                                       const Vec& pi_state, double beta,
                                       std::uint64_t seed = 0) {
  if (!(beta > 0.0 && beta < 1.0))
    throw ValidationError("dominance_check: beta must lie in (0,1)");
  const int ns = basis_sa.num_states();
  const int nu = basis_sa.num_actions;
  DominanceReport rep;
  rep.worst_margin = std::numeric_limits<double>::infinity();

  auto consider = [&](const GramMatrix& sigma_theta) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sigma_gamma.sigma -
                                          beta * beta * sigma_theta.sigma);
    rep.worst_margin = std::min(rep.worst_margin, es.eigenvalues().minCoeff());
    ++rep.candidates;
  };

  // Greedy maps factor through the feature rows: states with identical
  // feature blocks always share the same argmin. Enumerate maps over those
  // equivalence classes.
  std::vector<int> class_of(ns);
  std::vector<int> class_rep;
  {
    std::map<std::string, int> seen;
    for (int s = 0; s < ns; ++s) {
      std::string key;
      key.resize(sizeof(double) * static_cast<std::size_t>(nu) * basis_sa.dim());
      for (int u = 0; u < nu; ++u) {
        const Vec f = basis_sa.phi(s, u);
        std::memcpy(key.data() + sizeof(double) * static_cast<std::size_t>(u) *
                                     basis_sa.dim(),
                    f.data(), sizeof(double) * basis_sa.dim());
      }
      auto it = seen.find(key);
      if (it == seen.end()) {
        it = seen.emplace(key, static_cast<int>(class_rep.size())).first;
        class_rep.push_back(s);
      }
      class_of[s] = it->second;
    }
  }
  const int nc = static_cast<int>(class_rep.size());
  double total = 1.0;
  for (int c2 = 0; c2 < nc; ++c2) total *= nu;
  if (total <= 1e6) {
    rep.exhaustive = true;
    std::vector<int> class_action(nc, 0);
    std::vector<int> action_of(ns, 0);
    while (true) {
      for (int s = 0; s < ns; ++s) action_of[s] = class_action[class_of[s]];
      consider(gram_greedy_map(basis_sa, action_of, pi_state));
      int c2 = 0;
      while (c2 < nc && ++class_action[c2] == nu) class_action[c2++] = 0;
      if (c2 == nc) break;
    }
  } else {
    CounterRng rng(seed, RngStream::kParameterDraw);
    const int d = basis_sa.dim();
    for (int i = 0; i < 10000; ++i) {
      Vec theta(d);
      for (int j = 0; j < d; ++j) theta(j) = 2.0 * rng.next_double() - 1.0;
      const double n = theta.norm();
      if (n > 1.0) theta /= n;
      consider(gram_greedy(basis_sa, theta, pi_state));
    }
  }
  rep.holds = rep.worst_margin > 0.0;
  return rep;
}

}  // namespace nmrl
