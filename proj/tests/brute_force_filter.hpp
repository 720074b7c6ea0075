#pragma once

#include <stdexcept>
#include <vector>

#include "nmrl/model.hpp"

// Independent oracle for the filter-loss constants: enumerates every
// observation path of length t_max + N + 1 under each deterministic
// finite-memory policy, carrying unnormalized measures from each prior, with
// no merging of coinciding predictors. For every cutoff t it restarts a
// measure from the stationary prior at time t and feeds it the same window,
// then accumulates the mass-weighted TV gap at the window's end.
struct BruteForce {
  const nmrl::PomdpSpec& spec;
  int n;  // memory
  nmrl::Vec pi_prior;
  std::vector<nmrl::Vec> mu_priors;
  int t_max;

  const std::vector<int>* action_of = nullptr;
  std::vector<double> acc;  // acc[t * priors + m] for the current policy
  int pow_obs = 1, pow_act = 1;  // radix weights of the newest window digit

  struct Workspace {
    std::vector<nmrl::Vec> mu_in, mu_post, mu_next;
    std::vector<nmrl::Vec> bank_in, bank_post, bank_next;  // pi restarts in flight
    nmrl::Vec fresh_post;
  };
  std::vector<Workspace> ws;

  BruteForce(const nmrl::PomdpSpec& s, int memory_n, nmrl::Vec pi,
             std::vector<nmrl::Vec> mu, int horizon)
      : spec(s), n(memory_n), pi_prior(std::move(pi)),
        mu_priors(std::move(mu)), t_max(horizon) {
    ws.resize(static_cast<std::size_t>(t_max + n + 1));
    for (Workspace& w : ws) {
      w.mu_in.assign(mu_priors.size(), nmrl::Vec(spec.num_states));
      w.mu_post = w.mu_in;
      w.mu_next = w.mu_in;
      w.bank_in.assign(static_cast<std::size_t>(n), nmrl::Vec(spec.num_states));
      w.bank_post = w.bank_in;
      w.bank_next = w.bank_in;
      w.fresh_post = nmrl::Vec(spec.num_states);
    }
    for (int i = 0; i < n; ++i) {
      pow_obs *= spec.num_obs;
      pow_act *= spec.num_actions;
    }
  }

  // obs_code / act_code: mixed-radix window digits, newest first, before
  // consuming the observation at `depth`.
  void dfs(int depth, int obs_code, int act_code) {
    Workspace& w = ws[static_cast<std::size_t>(depth)];
    const int m_count = static_cast<int>(mu_priors.size());
    const int last = t_max + n;
    for (int y = 0; y < spec.num_obs; ++y) {
      for (int m = 0; m < m_count; ++m)
        w.mu_post[m] = w.mu_in[m].cwiseProduct(spec.observation.col(y));
      w.fresh_post = pi_prior.cwiseProduct(spec.observation.col(y));
      const int usable = std::min(depth, n);  // restarts already in flight
      for (int k = 0; k < usable; ++k)
        w.bank_post[k] = w.bank_in[k].cwiseProduct(spec.observation.col(y));

      // the restart from time t = depth - n has now seen its whole window
      const int t = depth - n;
      if (t >= 0 && t <= t_max) {
        const nmrl::Vec& leaf_pi = n == 0 ? w.fresh_post : w.bank_post[n - 1];
        const double mass_pi = leaf_pi.sum();
        for (int m = 0; m < m_count; ++m) {
          const double mass_mu = w.mu_post[m].sum();
          if (mass_mu == 0.0) continue;
          if (mass_pi <= 0.0)
            throw std::runtime_error("window unreachable from stationary prior");
          acc[static_cast<std::size_t>(t) * mu_priors.size() + m] +=
              (w.mu_post[m] / mass_mu - leaf_pi / mass_pi).lpNorm<1>() *
              mass_mu;
        }
      }
      if (depth == last) continue;

      const int obs_next = y * pow_obs + obs_code / spec.num_obs;
      const int window = obs_next * pow_act + act_code;
      const int u = (*action_of)[static_cast<std::size_t>(window)];
      const int act_next =
          n == 0 ? 0 : u * (pow_act / spec.num_actions) + act_code / spec.num_actions;

      Workspace& next = ws[static_cast<std::size_t>(depth + 1)];
      for (int m = 0; m < m_count; ++m)
        next.mu_in[m].noalias() = spec.transition[u].transpose() * w.mu_post[m];
      if (n > 0) {
        next.bank_in[0].noalias() = spec.transition[u].transpose() * w.fresh_post;
        for (int k = 1; k < std::min(depth + 1, n); ++k)
          next.bank_in[k].noalias() =
              spec.transition[u].transpose() * w.bank_post[k - 1];
      }
      dfs(depth + 1, obs_next, act_next);
    }
  }

  // max over all deterministic policies and priors of the accumulated gap
  std::vector<double> l_t() {
    const std::int64_t nh =
        nmrl::window_count(spec.num_obs, spec.num_actions, n);
    std::vector<int> actions(static_cast<std::size_t>(nh), 0);
    action_of = &actions;
    std::vector<double> best(static_cast<std::size_t>(t_max + 1), 0.0);
    while (true) {
      acc.assign(static_cast<std::size_t>(t_max + 1) * mu_priors.size(), 0.0);
      for (std::size_t m = 0; m < mu_priors.size(); ++m)
        ws[0].mu_in[m] = mu_priors[m];
      dfs(0, 0, 0);
      for (int t = 0; t <= t_max; ++t)
        for (std::size_t m = 0; m < mu_priors.size(); ++m)
          best[static_cast<std::size_t>(t)] =
              std::max(best[static_cast<std::size_t>(t)],
                       acc[static_cast<std::size_t>(t) * mu_priors.size() + m]);
      std::size_t h = 0;
      while (h < actions.size() && ++actions[h] == spec.num_actions)
        actions[h++] = 0;
      if (h == actions.size()) break;
    }
    return best;
  }
};