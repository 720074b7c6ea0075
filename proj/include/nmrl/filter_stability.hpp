#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "nmrl/errors.hpp"
#include "nmrl/model.hpp"

namespace nmrl {

// ---------------------------------------------------------------------------
// Filter stability constants L_t: the expected total-variation gap between
// the posterior of X_{t+N} computed from the true prior and from the
// stationary prior pi, both conditioned on the same window. The sup over
// policies is resolved by enumerating all deterministic window policies when
// their count fits the budget; otherwise only the supplied exploration
// policy is evaluated and the result is labeled a lower estimate.
//
// Exact values are produced up to t_exact <= t_max; when the reachable
// predictor set outgrows the node budget the remaining terms of the
// discounted sum are covered by the certified tail 2 beta^{T+1}/(1-beta)
// (L_t <= 2 always).
// ---------------------------------------------------------------------------
struct FilterStabilityReport {
  std::vector<double> l_t;        // exact values, t = 0 .. t_exact
  int t_exact = -1;
  int t_requested = 0;
  double beta = 0.0;
  double discounted_sum = 0.0;    // sum_{t<=t_exact} beta^t L_t
  double tail_bound = 0.0;        // 2 beta^{t_exact+1} / (1-beta)
  bool sup_exhaustive = false;
  bool lower_estimate = false;
  long policies_evaluated = 0;
  double l_y = 0.0;               // quantizer resolution, when applicable

  double discounted_sum_upper() const { return discounted_sum + tail_bound; }
};

struct FilterStabilityOptions {
  int t_max = 20;
  double beta = 0.0;
  long node_budget = 20000000;
  long policy_budget = 10000;
};

namespace detail {

struct FsNode {
  Vec mu;
  WindowState h_prev;
  int u_prev = 0;
  double p = 0.0;
};

inline std::string fs_key(const FsNode& node) {
  std::string key;
  key.resize(sizeof(double) * node.mu.size());
  std::memcpy(key.data(), node.mu.data(), key.size());
  for (int y : node.h_prev.observations) key += static_cast<char>(y);
  for (int u : node.h_prev.actions) key += static_cast<char>(u);
  key += static_cast<char>(node.u_prev);
  return key;
}

// Expected TV gap contributed by one reachable predictor node: enumerate the
// window (y_t .. y_{t+N}, u_t .. u_{t+N-1}) forward, carrying unnormalized
// observation-conditioned measures from mu_t and from pi.
inline double fs_window_tv(const FsNode& node, const Vec& pi_prior,
                           const PomdpSpec& spec,
                           const FiniteMemoryPolicy& policy, int memory_n,
                           long& leaf_count) {
  struct Frame {
    Vec sig_mu;
    Vec sig_pi;
    WindowState h_prev;
    int u_prev;
    double act_weight;
  };
  double total = 0.0;
  std::vector<Frame> stack;
  std::vector<int> depth;
  stack.push_back({node.mu, pi_prior, node.h_prev, node.u_prev, 1.0});
  depth.push_back(0);
  while (!stack.empty()) {
    Frame fr = std::move(stack.back());
    stack.pop_back();
    const int k = depth.back();
    depth.pop_back();
    for (int y = 0; y < spec.num_obs; ++y) {
      Vec post_mu = fr.sig_mu.cwiseProduct(spec.observation.col(y));
      const double mass_mu = post_mu.sum();
      if (mass_mu == 0.0) continue;
      Vec post_pi = fr.sig_pi.cwiseProduct(spec.observation.col(y));
      const WindowState h = window_shift(fr.h_prev, y, fr.u_prev);
      if (k == memory_n) {
        ++leaf_count;
        const double mass_pi = post_pi.sum();
        if (mass_pi == 0.0)
          throw DegenerateEvidenceError(
              "window has zero probability under the stationary prior",
              std::vector<double>(pi_prior.data(),
                                  pi_prior.data() + pi_prior.size()),
              y);
        total += node.p * fr.act_weight * mass_mu *
                 (post_mu / mass_mu - post_pi / mass_pi).lpNorm<1>();
        continue;
      }
      const int hid = encode_window(h, spec);
      for (int u = 0; u < spec.num_actions; ++u) {
        const double g = policy.table(hid, u);
        if (g == 0.0) continue;
        Frame next;
        next.sig_mu = spec.transition[u].transpose() * post_mu;
        next.sig_pi = spec.transition[u].transpose() * post_pi;
        next.h_prev = h;
        next.u_prev = u;
        next.act_weight = fr.act_weight * g;
        stack.push_back(std::move(next));
        depth.push_back(k + 1);
      }
    }
  }
  return total;
}

// One time step of the reachable predictor set under a fixed policy.
inline std::map<std::string, FsNode> fs_advance(
    const std::map<std::string, FsNode>& nodes, const PomdpSpec& spec,
    const FiniteMemoryPolicy& policy) {
  std::map<std::string, FsNode> out;
  for (const auto& [key, node] : nodes) {
    for (int y = 0; y < spec.num_obs; ++y) {
      const double py = node.mu.dot(spec.observation.col(y));
      if (py == 0.0) continue;
      const Vec cond = node.mu.cwiseProduct(spec.observation.col(y)) / py;
      const WindowState h = window_shift(node.h_prev, y, node.u_prev);
      const int hid = encode_window(h, spec);
      for (int u = 0; u < spec.num_actions; ++u) {
        const double g = policy.table(hid, u);
        if (g == 0.0) continue;
        FsNode next;
        next.mu = spec.transition[u].transpose() * cond;
        next.h_prev = h;
        next.u_prev = u;
        next.p = node.p * py * g;
        const std::string k = fs_key(next);
        auto it = out.find(k);
        if (it == out.end()) out.emplace(k, std::move(next));
        else it->second.p += next.p;
      }
    }
  }
  return out;
}

inline FsNode fs_root(const Vec& mu0, int memory_n) {
  FsNode root;
  root.mu = mu0;
  root.h_prev.observations.assign(memory_n + 1, 0);
  root.h_prev.actions.assign(memory_n, 0);
  root.u_prev = 0;
  root.p = 1.0;
  return root;
}

}  // namespace detail

inline FilterStabilityReport filter_stability(
    const PomdpSpec& spec, const Vec& pi_prior, const std::vector<Vec>& mu_priors,
    int memory_n, const FilterStabilityOptions& opt,
    const FiniteMemoryPolicy* exploration = nullptr) {
  spec.validate();
  PomdpSpec::check_simplex(pi_prior, spec.num_states, "stationary prior");
  if (mu_priors.empty()) throw ValidationError("filter_stability: no priors given");
  for (const Vec& mu : mu_priors)
    PomdpSpec::check_simplex(mu, spec.num_states, "prior");
  if (!(opt.beta >= 0.0 && opt.beta < 1.0))
    throw ValidationError("filter_stability: beta must lie in [0,1)");

  const std::int64_t nh = window_count(spec.num_obs, spec.num_actions, memory_n);
  double policy_count = 1.0;
  for (std::int64_t h = 0; h < nh; ++h) policy_count *= spec.num_actions;

  FilterStabilityReport rep;
  rep.t_requested = opt.t_max;
  rep.beta = opt.beta;

  std::vector<FiniteMemoryPolicy> policies;
  if (policy_count <= static_cast<double>(opt.policy_budget)) {
    rep.sup_exhaustive = true;
    std::vector<int> action_of(static_cast<std::size_t>(nh), 0);
    while (true) {
      policies.push_back(
          FiniteMemoryPolicy::deterministic(action_of, spec.num_actions));
      std::size_t h = 0;
      while (h < action_of.size() && ++action_of[h] == spec.num_actions)
        action_of[h++] = 0;
      if (h == action_of.size()) break;
    }
  } else {
    if (exploration == nullptr)
      throw BudgetError("filter_stability: policy enumeration needs " +
                            std::to_string(policy_count) +
                            " policies and no exploration policy was supplied",
                        static_cast<std::uint64_t>(policy_count));
    rep.lower_estimate = true;
    policies.push_back(*exploration);
  }
  rep.policies_evaluated = static_cast<long>(policies.size());

  // One reachable set per (policy, prior).
  std::vector<std::map<std::string, detail::FsNode>> sets;
  sets.reserve(policies.size() * mu_priors.size());
  for (std::size_t p = 0; p < policies.size(); ++p)
    for (const Vec& mu : mu_priors) {
      std::map<std::string, detail::FsNode> s;
      const detail::FsNode root = detail::fs_root(mu, memory_n);
      s.emplace(detail::fs_key(root), root);
      sets.push_back(std::move(s));
    }

  long work = 0;
  for (int t = 0; t <= opt.t_max; ++t) {
    long step_cost = 0;
    for (const auto& s : sets) step_cost += static_cast<long>(s.size());
    step_cost *= spec.num_obs * spec.num_actions;
    if (work + step_cost > opt.node_budget) {
      if (t == 0)
        throw BudgetError("filter_stability: node budget too small for t=0",
                          static_cast<std::uint64_t>(step_cost));
      break;
    }
    double lt = 0.0;
    std::size_t idx = 0;
    for (std::size_t p = 0; p < policies.size(); ++p) {
      for (std::size_t m = 0; m < mu_priors.size(); ++m, ++idx) {
        double acc = 0.0;
        for (const auto& [key, node] : sets[idx])
          acc += detail::fs_window_tv(node, pi_prior, spec, policies[p],
                                      memory_n, work);
        lt = std::max(lt, acc);
      }
    }
    rep.l_t.push_back(lt);
    rep.t_exact = t;
    if (t < opt.t_max) {
      for (std::size_t i = 0; i < sets.size(); ++i)
        sets[i] = detail::fs_advance(sets[i], spec, policies[i / mu_priors.size()]);
      work += step_cost;
    }
  }

  double bt = 1.0;
  for (double v : rep.l_t) {
    rep.discounted_sum += bt * v;
    bt *= rep.beta;
  }
  rep.tail_bound = rep.beta > 0.0
                       ? 2.0 * std::pow(rep.beta, rep.t_exact + 1) /
                             (1.0 - rep.beta)
                       : 0.0;
  return rep;
}

// Merges observations into bins: the quantized channel O_hat(b|x) sums the
// member probabilities. Returned model is over the binned observation space.
inline PomdpSpec quantize_observations(const PomdpSpec& spec,
                                       const std::vector<int>& bin_of_obs,
                                       int num_bins) {
  if (static_cast<int>(bin_of_obs.size()) != spec.num_obs)
    throw ValidationError("quantize_observations: bin map length mismatch");
  PomdpSpec out = spec;
  out.num_obs = num_bins;
  out.observation = Mat::Zero(spec.num_states, num_bins);
  for (int y = 0; y < spec.num_obs; ++y) {
    const int b = bin_of_obs[y];
    if (b < 0 || b >= num_bins)
      throw ValidationError("quantize_observations: bin index out of range");
    out.observation.col(b) += spec.observation.col(y);
  }
  return out;
}

// Max bin diameter under the declared observation metric (positions default
// to observation indices).
inline double quantizer_resolution(const std::vector<int>& bin_of_obs,
                                   int num_bins,
                                   const std::vector<double>* positions = nullptr) {
  double ly = 0.0;
  for (std::size_t y = 0; y < bin_of_obs.size(); ++y) {
    for (std::size_t y2 = y + 1; y2 < bin_of_obs.size(); ++y2) {
      if (bin_of_obs[y] != bin_of_obs[y2]) continue;
      const double a = positions ? (*positions)[y] : static_cast<double>(y);
      const double b = positions ? (*positions)[y2] : static_cast<double>(y2);
      ly = std::max(ly, std::abs(a - b));
    }
  }
  return ly;
}

}  // namespace nmrl
