#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "nmrl/errors.hpp"
#include "nmrl/features.hpp"
#include "nmrl/model.hpp"

namespace nmrl {

inline constexpr double kDivergenceSentinel = 1e8;

// ---------------------------------------------------------------------------
// Learning-rate schedules. Polynomial schedules must satisfy the
// Robbins-Monro conditions (rho in (0.5, 1]); visit-count schedules are the
// tabular learner's 1/(1 + visits).
// ---------------------------------------------------------------------------
struct LearningRateSchedule {
  enum class Kind { kPolynomial, kVisitCount };
  Kind kind = Kind::kPolynomial;
  double a = 1.0;
  double t0 = 100.0;
  double rho = 0.75;

  double rate(long t) const {
    return a / std::pow(static_cast<double>(t) + t0, rho);
  }

  void validate_robbins_monro() const {
    if (kind != Kind::kPolynomial)
      throw ValidationError("schedule: a polynomial schedule is required here");
    if (!(a > 0.0)) throw ValidationError("schedule: coefficient must be positive");
    if (!(t0 > 0.0)) throw ValidationError("schedule: offset must be positive");
    if (!(rho > 0.5 && rho <= 1.0))
      throw ValidationError("schedule: exponent must lie in (0.5, 1]");
  }
};

// ---------------------------------------------------------------------------
// TD(0) with linear features.
// ---------------------------------------------------------------------------
struct Td0State {
  Vec theta;
  long t = 0;
};

inline void check_iterate(const Vec& theta, long t) {
  const double n = theta.norm();
  if (!std::isfinite(n) || n > kDivergenceSentinel)
    throw DivergenceError("iterate norm passed the divergence sentinel at step " +
                              std::to_string(t),
                          t, n);
}

inline Td0State td0_step(const Td0State& state, const TransitionRecord& rec,
                         const FeatureBasis& basis, double beta,
                         const LearningRateSchedule& schedule) {
  const double alpha = schedule.rate(state.t);
  const auto phi_s = basis.table.row(rec.s);
  // written as value-minus-target so that a single-action Q-learning step is
  // bitwise identical (the spec'd equivalence, not just mathematically equal)
  const double target =
      rec.cost + beta * basis.table.row(rec.s_next).dot(state.theta);
  const double delta = phi_s.dot(state.theta) - target;
  Td0State next;
  next.theta = state.theta - (alpha * delta) * phi_s.transpose();
  next.t = state.t + 1;
  check_iterate(next.theta, next.t);
  return next;
}

// ---------------------------------------------------------------------------
// Linear Q-learning with a greedy inner minimum (ties to the lowest action
// index). No convergence promise; divergence is an expected outcome on
// adversarial configurations.
// ---------------------------------------------------------------------------
inline Td0State linear_q_step(const Td0State& state, const TransitionRecord& rec,
                              const FeatureBasis& basis_sa, double beta,
                              const LearningRateSchedule& schedule) {
  const double alpha = schedule.rate(state.t);
  const int v = greedy_action(basis_sa, state.theta, rec.s_next);
  const auto phi_su = basis_sa.table.row(rec.s * basis_sa.num_actions + rec.action);
  const double target = rec.cost + beta * basis_sa.value(state.theta, rec.s_next, v);
  const double delta = phi_su.dot(state.theta) - target;
  Td0State next;
  next.theta = state.theta - (alpha * delta) * phi_su.transpose();
  next.t = state.t + 1;
  check_iterate(next.theta, next.t);
  return next;
}

// ---------------------------------------------------------------------------
// Tabular Q-learning on quantized windows with visit-count rates.
// ---------------------------------------------------------------------------
struct TabularQuantizer {
  std::vector<int> state_bin;
  std::vector<int> action_bin;
  int num_state_bins = 0;
  int num_action_bins = 0;

  void validate() const {
    QuantizerBasis qs{state_bin, num_state_bins, 0};
    qs.validate();
    QuantizerBasis qa{action_bin, num_action_bins, 0};
    qa.validate();
  }

  static TabularQuantizer identity(int num_states, int num_actions) {
    TabularQuantizer q;
    q.num_state_bins = num_states;
    q.num_action_bins = num_actions;
    q.state_bin.resize(num_states);
    q.action_bin.resize(num_actions);
    for (int s = 0; s < num_states; ++s) q.state_bin[s] = s;
    for (int u = 0; u < num_actions; ++u) q.action_bin[u] = u;
    return q;
  }
};

struct TabularQState {
  Mat q;                         // (state bins, action bins)
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> visits;
  long t = 0;

  static TabularQState zeros(const TabularQuantizer& quant) {
    TabularQState st;
    st.q = Mat::Zero(quant.num_state_bins, quant.num_action_bins);
    st.visits.setZero(quant.num_state_bins, quant.num_action_bins);
    return st;
  }
};

inline TabularQState tabular_q_step(const TabularQState& state,
                                    const TransitionRecord& rec,
                                    const TabularQuantizer& quant, double beta) {
  const int i = quant.state_bin[rec.s];
  const int j = quant.action_bin[rec.action];
  const int i1 = quant.state_bin[rec.s_next];
  TabularQState next = state;
  const double alpha = 1.0 / (1.0 + static_cast<double>(state.visits(i, j)));
  const double v_next = state.q.row(i1).minCoeff();
  next.q(i, j) -= alpha * (state.q(i, j) - rec.cost - beta * v_next);
  next.visits(i, j) += 1;
  next.t = state.t + 1;
  return next;
}

// ---------------------------------------------------------------------------
// Trajectory runners. Divergence is returned as data on the trace, never
// thrown past the runner.
// ---------------------------------------------------------------------------
struct ConvergenceTrace {
  std::vector<long> steps;
  std::vector<Vec> iterates;
  std::vector<double> distances;  // to the supplied oracle target, if any
  bool diverged = false;
  long divergence_step = -1;
  double divergence_norm = 0.0;
  Vec final_theta;
  Mat final_q;
  std::vector<std::pair<int, int>> starved_cells;

  void validate() const {
    for (std::size_t i = 1; i < steps.size(); ++i)
      if (steps[i] <= steps[i - 1])
        throw ValidationError("trace checkpoints must be strictly increasing");
  }
};

namespace detail {

inline bool is_checkpoint(const std::vector<long>& checkpoints, long t) {
  for (long c : checkpoints)
    if (c == t) return true;
  return false;
}

}  // namespace detail

inline ConvergenceTrace run_td0(const PomdpSpec& spec,
                                const FiniteMemoryPolicy& policy,
                                const FeatureBasis& basis,
                                const LearningRateSchedule& schedule, double beta,
                                int memory_n, long n_steps, std::uint64_t seed,
                                const std::vector<long>& checkpoints,
                                const Vec* theta_star = nullptr) {
  schedule.validate_robbins_monro();
  SimStream stream(spec, policy, memory_n, seed);
  Td0State st;
  st.theta = Vec::Zero(basis.dim());
  ConvergenceTrace trace;
  auto record = [&](long t) {
    trace.steps.push_back(t);
    trace.iterates.push_back(st.theta);
    if (theta_star) trace.distances.push_back((st.theta - *theta_star).norm());
  };
  for (long t = 1; t <= n_steps; ++t) {
    const TransitionRecord rec = stream.step();
    try {
      st = td0_step(st, rec, basis, beta, schedule);
    } catch (const DivergenceError& e) {
      trace.diverged = true;
      trace.divergence_step = e.step;
      trace.divergence_norm = e.norm;
      break;
    }
    if (detail::is_checkpoint(checkpoints, t)) record(t);
  }
  if (trace.steps.empty() || trace.steps.back() != st.t) record(st.t);
  trace.final_theta = st.theta;
  return trace;
}

inline ConvergenceTrace run_linear_q(const PomdpSpec& spec,
                                     const FiniteMemoryPolicy& exploration,
                                     const FeatureBasis& basis_sa,
                                     const LearningRateSchedule& schedule,
                                     double beta, int memory_n, long n_steps,
                                     std::uint64_t seed,
                                     const std::vector<long>& checkpoints,
                                     const Vec* theta_star = nullptr) {
  SimStream stream(spec, exploration, memory_n, seed);
  Td0State st;
  st.theta = Vec::Zero(basis_sa.dim());
  ConvergenceTrace trace;
  auto record = [&](long t) {
    trace.steps.push_back(t);
    trace.iterates.push_back(st.theta);
    if (theta_star) trace.distances.push_back((st.theta - *theta_star).norm());
  };
  for (long t = 1; t <= n_steps; ++t) {
    const TransitionRecord rec = stream.step();
    try {
      st = linear_q_step(st, rec, basis_sa, beta, schedule);
    } catch (const DivergenceError& e) {
      trace.diverged = true;
      trace.divergence_step = e.step;
      trace.divergence_norm = e.norm;
      break;
    }
    if (detail::is_checkpoint(checkpoints, t)) record(t);
  }
  if (trace.steps.empty() || trace.steps.back() != st.t) record(st.t);
  trace.final_theta = st.theta;
  return trace;
}

inline ConvergenceTrace run_tabular_q(const PomdpSpec& spec,
                                      const FiniteMemoryPolicy& exploration,
                                      const TabularQuantizer& quant, double beta,
                                      int memory_n, long n_steps,
                                      std::uint64_t seed,
                                      const std::vector<long>& checkpoints,
                                      const Mat* q_star = nullptr) {
  quant.validate();
  SimStream stream(spec, exploration, memory_n, seed);
  TabularQState st = TabularQState::zeros(quant);
  ConvergenceTrace trace;
  auto record = [&](long t) {
    trace.steps.push_back(t);
    if (q_star)
      trace.distances.push_back((st.q - *q_star).cwiseAbs().maxCoeff());
  };
  for (long t = 1; t <= n_steps; ++t) {
    const TransitionRecord rec = stream.step();
    st = tabular_q_step(st, rec, quant, beta);
    if (detail::is_checkpoint(checkpoints, t)) record(t);
  }
  if (trace.steps.empty() || trace.steps.back() != st.t) record(st.t);
  trace.final_q = st.q;
  for (int i = 0; i < st.visits.rows(); ++i)
    for (int j = 0; j < st.visits.cols(); ++j)
      if (st.visits(i, j) == 0) trace.starved_cells.emplace_back(i, j);
  return trace;
}

}  // namespace nmrl
