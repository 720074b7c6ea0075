#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nmrl/errors.hpp"
#include "nmrl/rng.hpp"

namespace nmrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kRowSumTol = 1e-12;

// ---------------------------------------------------------------------------
// PomdpSpec: a finite hidden-state model. transition[u](x, x') and
// observation(x, y) are row-stochastic; cost(x, u) is bounded.
// ---------------------------------------------------------------------------
struct PomdpSpec {
  int num_states = 0;
  int num_obs = 0;
  int num_actions = 0;
  std::vector<Mat> transition;  // [u](x, x')
  Mat observation;              // (x, y)
  Mat cost;                     // (x, u)
  Vec prior;

  double cost_sup() const { return cost.cwiseAbs().maxCoeff(); }

  void validate() const {
    if (num_states < 1 || num_obs < 1 || num_actions < 1)
      throw ValidationError("model dimensions must be positive");
    if (static_cast<int>(transition.size()) != num_actions)
      throw ValidationError("expected one transition table per action");
    for (int u = 0; u < num_actions; ++u) {
      check_stochastic(transition[u], num_states, num_states,
                       "transition (action " + std::to_string(u) + ")");
    }
    check_stochastic(observation, num_states, num_obs, "observation");
    if (cost.rows() != num_states || cost.cols() != num_actions)
      throw ValidationError("cost table has wrong shape");
    if (!cost.allFinite()) throw ValidationError("cost table has non-finite entries");
    check_simplex(prior, num_states, "prior");
  }

  static void check_stochastic(const Mat& m, int rows, int cols,
                               const std::string& what) {
    if (m.rows() != rows || m.cols() != cols)
      throw ValidationError(what + " table has wrong shape");
    for (int i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < cols; ++j) {
        const double p = m(i, j);
        if (!(p >= 0.0 && p <= 1.0 + kRowSumTol))
          throw ValidationError(what + " row " + std::to_string(i) +
                                " has probability outside [0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > kRowSumTol)
        throw ValidationError(what + " row " + std::to_string(i) +
                              " sums to " + std::to_string(sum) + ", expected 1");
    }
  }

  static void check_simplex(const Vec& v, int n, const std::string& what) {
    if (v.size() != n) throw ValidationError(what + " has wrong length");
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!(v(i) >= 0.0)) throw ValidationError(what + " has a negative entry");
      sum += v(i);
    }
    if (std::abs(sum - 1.0) > kRowSumTol)
      throw ValidationError(what + " sums to " + std::to_string(sum));
  }
};

// ---------------------------------------------------------------------------
// WindowState: the last N+1 observations and N actions, newest first.
// Encoded as a mixed-radix integer with observations as the high digits.
// ---------------------------------------------------------------------------
struct WindowState {
  std::vector<int> observations;  // y_t, ..., y_{t-N}
  std::vector<int> actions;       // u_{t-1}, ..., u_{t-N}

  int memory_n() const { return static_cast<int>(actions.size()); }

  bool operator==(const WindowState&) const = default;
};

inline std::int64_t window_count(int num_obs, int num_actions, int memory_n) {
  std::int64_t c = 1;
  for (int i = 0; i <= memory_n; ++i) c *= num_obs;
  for (int i = 0; i < memory_n; ++i) c *= num_actions;
  return c;
}

inline int encode_window(const WindowState& w, const PomdpSpec& spec) {
  const int n = w.memory_n();
  if (static_cast<int>(w.observations.size()) != n + 1)
    throw ValidationError("window has wrong number of observations");
  std::int64_t idx = 0;
  for (int i = 0; i <= n; ++i) {
    const int y = w.observations[i];
    if (y < 0 || y >= spec.num_obs)
      throw ValidationError("observation index out of range in window");
    idx = idx * spec.num_obs + y;
  }
  for (int i = 0; i < n; ++i) {
    const int u = w.actions[i];
    if (u < 0 || u >= spec.num_actions)
      throw ValidationError("action index out of range in window");
    idx = idx * spec.num_actions + u;
  }
  return static_cast<int>(idx);
}

inline WindowState decode_window(std::int64_t index, int memory_n,
                                 const PomdpSpec& spec) {
  if (index < 0 || index >= window_count(spec.num_obs, spec.num_actions, memory_n))
    throw ValidationError("window index out of range");
  WindowState w;
  w.observations.resize(memory_n + 1);
  w.actions.resize(memory_n);
  for (int i = memory_n - 1; i >= 0; --i) {
    w.actions[i] = static_cast<int>(index % spec.num_actions);
    index /= spec.num_actions;
  }
  for (int i = memory_n; i >= 0; --i) {
    w.observations[i] = static_cast<int>(index % spec.num_obs);
    index /= spec.num_obs;
  }
  return w;
}

// Slides the window one step: drops the oldest observation and action,
// prepends the new ones.
inline WindowState window_shift(const WindowState& w, int y_new, int u_new) {
  const int n = w.memory_n();
  WindowState out;
  out.observations.reserve(n + 1);
  out.observations.push_back(y_new);
  for (int i = 0; i < n; ++i) out.observations.push_back(w.observations[i]);
  out.actions.reserve(n);
  if (n > 0) {
    out.actions.push_back(u_new);
    for (int i = 0; i + 1 < n; ++i) out.actions.push_back(w.actions[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictor: a distribution over hidden states.
// ---------------------------------------------------------------------------
using Predictor = Vec;

inline void check_predictor(const Predictor& mu, const PomdpSpec& spec) {
  PomdpSpec::check_simplex(mu, spec.num_states, "predictor");
}

// One Bayes-predict step of the map G: condition mu on y_prev through the
// observation channel, then push through the transition kernel for u_prev.
inline Predictor filter_update(const Predictor& mu, int y_prev, int u_prev,
                               const PomdpSpec& spec) {
  if (y_prev < 0 || y_prev >= spec.num_obs)
    throw ValidationError("filter_update: observation index out of range");
  if (u_prev < 0 || u_prev >= spec.num_actions)
    throw ValidationError("filter_update: action index out of range");
  Vec weighted = mu.cwiseProduct(spec.observation.col(y_prev));
  const double norm = weighted.sum();
  if (norm <= 0.0) {
    throw DegenerateEvidenceError(
        "filter_update: observation " + std::to_string(y_prev) +
            " has probability zero under the current predictor",
        std::vector<double>(mu.data(), mu.data() + mu.size()), y_prev);
  }
  weighted /= norm;
  return spec.transition[u_prev].transpose() * weighted;
}

// ---------------------------------------------------------------------------
// FiniteMemoryPolicy: action probabilities per encoded window.
// ---------------------------------------------------------------------------
struct FiniteMemoryPolicy {
  Mat table;           // (|H|, |U|)
  double epsilon = 0;  // minorization mixing weight, 0 if unused
  Vec base;            // minorizing action distribution (empty if unused)

  int num_windows() const { return static_cast<int>(table.rows()); }
  int num_actions() const { return static_cast<int>(table.cols()); }

  static FiniteMemoryPolicy uniform(int num_windows, int num_actions) {
    FiniteMemoryPolicy p;
    p.table = Mat::Constant(num_windows, num_actions, 1.0 / num_actions);
    return p;
  }

  static FiniteMemoryPolicy deterministic(const std::vector<int>& action_of,
                                          int num_actions) {
    FiniteMemoryPolicy p;
    p.table = Mat::Zero(static_cast<int>(action_of.size()), num_actions);
    for (int h = 0; h < static_cast<int>(action_of.size()); ++h)
      p.table(h, action_of[h]) = 1.0;
    return p;
  }

  // (1 - eps) * this + eps * base, which satisfies the minorization bound
  // table(h, u) >= eps * base(u) by construction.
  FiniteMemoryPolicy minorized(double eps, const Vec& base_dist) const {
    FiniteMemoryPolicy p;
    p.table = (1.0 - eps) * table;
    p.table.rowwise() += eps * base_dist.transpose();
    p.epsilon = eps;
    p.base = base_dist;
    return p;
  }

  void validate() const {
    for (int h = 0; h < table.rows(); ++h) {
      double sum = 0.0;
      for (int u = 0; u < table.cols(); ++u) {
        if (!(table(h, u) >= 0.0))
          throw ValidationError("policy row " + std::to_string(h) +
                                " has a negative probability");
        sum += table(h, u);
      }
      if (std::abs(sum - 1.0) > kRowSumTol)
        throw ValidationError("policy row " + std::to_string(h) +
                              " is not a distribution");
      if (epsilon > 0.0) {
        for (int u = 0; u < table.cols(); ++u) {
          if (table(h, u) + 1e-15 < epsilon * base(u))
            throw ValidationError("policy violates its minorization bound");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Trajectory simulation.
// ---------------------------------------------------------------------------

// Z_t = (S_{t+1}, S_t, C_t, U_t) with windows encoded.
struct TransitionRecord {
  int s_next;
  int s;
  double cost;
  int action;
};

// Internal step with the hidden state visible; used by diagnostics and
// cross-checks, never by the learners.
struct FullStep {
  int window;  // encoded h_t
  int hidden;  // x_t
  int action;  // u_t
  double cost;
};

// Streaming simulator over (h_t, x_t, u_t) for t >= N. The first N actions
// come from a burn-in action distribution (uniform by default); the stream
// starts at the first fully formed window.
class SimStream {
 public:
  SimStream(const PomdpSpec& spec, const FiniteMemoryPolicy& policy,
            int memory_n, std::uint64_t seed, const Vec* burn_in = nullptr)
      : spec_(spec), policy_(policy), rng_(seed, RngStream::kSimulate) {
    CounterRng burn_rng(seed, RngStream::kBurnIn);
    const Vec burn = burn_in
                         ? *burn_in
                         : Vec::Constant(spec.num_actions, 1.0 / spec.num_actions);
    x_ = rng_.categorical(spec.prior, spec.num_states);
    w_.observations.push_back(
        rng_.categorical(spec.observation.row(x_), spec.num_obs));
    for (int t = 0; t < memory_n; ++t) {
      const int u = burn_rng.categorical(burn, spec.num_actions);
      x_ = rng_.categorical(spec.transition[u].row(x_), spec.num_states);
      const int y = rng_.categorical(spec.observation.row(x_), spec.num_obs);
      w_.observations.insert(w_.observations.begin(), y);
      w_.actions.insert(w_.actions.begin(), u);
    }
    h_ = encode_window(w_, spec);
    u_ = rng_.categorical(policy.table.row(h_), spec.num_actions);
  }

  FullStep current() const { return {h_, x_, u_, spec_.cost(x_, u_)}; }

  // Advances one step and returns the completed transition record.
  TransitionRecord step() {
    const FullStep prev = current();
    x_ = rng_.categorical(spec_.transition[prev.action].row(x_), spec_.num_states);
    const int y = rng_.categorical(spec_.observation.row(x_), spec_.num_obs);
    w_ = window_shift(w_, y, prev.action);
    h_ = encode_window(w_, spec_);
    u_ = rng_.categorical(policy_.table.row(h_), spec_.num_actions);
    return {h_, prev.window, prev.cost, prev.action};
  }

 private:
  const PomdpSpec& spec_;
  const FiniteMemoryPolicy& policy_;
  CounterRng rng_;
  int x_ = 0;
  int h_ = 0;
  int u_ = 0;
  WindowState w_;
};

inline std::vector<FullStep> simulate_full(const PomdpSpec& spec,
                                           const FiniteMemoryPolicy& policy,
                                           int memory_n, long n_steps,
                                           std::uint64_t seed,
                                           const Vec* burn_in = nullptr) {
  if (n_steps < 1) throw ValidationError("simulate: n_steps must be >= 1");
  SimStream stream(spec, policy, memory_n, seed, burn_in);
  std::vector<FullStep> steps;
  steps.reserve(static_cast<std::size_t>(n_steps) + 1);
  for (long t = 0; t < n_steps; ++t) {
    steps.push_back(stream.current());
    stream.step();
  }
  steps.push_back(stream.current());
  return steps;
}

inline std::vector<TransitionRecord> simulate(const PomdpSpec& spec,
                                              const FiniteMemoryPolicy& policy,
                                              int memory_n, long n_steps,
                                              std::uint64_t seed,
                                              const Vec* burn_in = nullptr) {
  const auto steps = simulate_full(spec, policy, memory_n, n_steps, seed, burn_in);
  std::vector<TransitionRecord> records;
  records.reserve(static_cast<std::size_t>(n_steps));
  for (long t = 0; t + 1 < static_cast<long>(steps.size()); ++t) {
    records.push_back({steps[t + 1].window, steps[t].window, steps[t].cost,
                       steps[t].action});
  }
  return records;
}

// ---------------------------------------------------------------------------
// Joint chain over (h, x, u) triples; state index (h * |X| + x) * |U| + u.
// ---------------------------------------------------------------------------
struct JointChain {
  Mat kernel;  // row-stochastic, dimension |H||X||U|
  int num_windows;
  int num_hidden;
  int num_actions;
  int memory_n;

  int index(int h, int x, int u) const {
    return (h * num_hidden + x) * num_actions + u;
  }
  int window_of(int j) const { return j / (num_hidden * num_actions); }
  int hidden_of(int j) const { return (j / num_actions) % num_hidden; }
  int action_of(int j) const { return j % num_actions; }
  int dim() const { return num_windows * num_hidden * num_actions; }
};

inline JointChain build_joint_chain(const PomdpSpec& spec,
                                    const FiniteMemoryPolicy& policy,
                                    int memory_n) {
  const int nh = static_cast<int>(window_count(spec.num_obs, spec.num_actions,
                                               memory_n));
  if (policy.num_windows() != nh)
    throw ValidationError("policy table does not cover the window space");
  JointChain chain;
  chain.num_windows = nh;
  chain.num_hidden = spec.num_states;
  chain.num_actions = spec.num_actions;
  chain.memory_n = memory_n;
  const int dim = chain.dim();
  chain.kernel = Mat::Zero(dim, dim);

  for (int h = 0; h < nh; ++h) {
    const WindowState w = decode_window(h, memory_n, spec);
    for (int x = 0; x < spec.num_states; ++x) {
      for (int u = 0; u < spec.num_actions; ++u) {
        const int row = chain.index(h, x, u);
        for (int x1 = 0; x1 < spec.num_states; ++x1) {
          const double pt = spec.transition[u](x, x1);
          if (pt == 0.0) continue;
          for (int y1 = 0; y1 < spec.num_obs; ++y1) {
            const double po = spec.observation(x1, y1);
            if (po == 0.0) continue;
            const int h1 = encode_window(window_shift(w, y1, u), spec);
            for (int u1 = 0; u1 < spec.num_actions; ++u1) {
              const double pg = policy.table(h1, u1);
              if (pg == 0.0) continue;
              chain.kernel(row, chain.index(h1, x1, u1)) += pt * po * pg;
            }
          }
        }
      }
    }
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Model file I/O: a line-oriented key/value document.
// ---------------------------------------------------------------------------
struct ModelFile {
  PomdpSpec spec;
  int memory_n = 0;
};

namespace detail {

inline std::vector<double> parse_row(const std::string& line,
                                     const std::string& file, int lineno,
                                     int expected) {
  std::istringstream ss(line);
  std::vector<double> row;
  double v;
  while (ss >> v) row.push_back(v);
  if (static_cast<int>(row.size()) != expected)
    throw ValidationError(file + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(expected) + " values, found " +
                          std::to_string(row.size()));
  return row;
}

}  // namespace detail

inline ModelFile parse_model(std::istream& in, const std::string& filename) {
  ModelFile mf;
  PomdpSpec& spec = mf.spec;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) -> ValidationError {
    return ValidationError(filename + ":" + std::to_string(lineno) + ": " + msg);
  };
  auto next_content_line = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++lineno;
      const auto pos = out.find_first_not_of(" \t\r");
      if (pos == std::string::npos || out[pos] == '#') continue;
      return true;
    }
    return false;
  };

  auto read_rows = [&](int rows, int cols, const std::string& what) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      std::string row_line;
      if (!next_content_line(row_line))
        throw fail("unexpected end of file in " + what + " table");
      const auto row = detail::parse_row(row_line, filename, lineno, cols);
      for (int j = 0; j < cols; ++j) m(i, j) = row[j];
    }
    return m;
  };

  bool have_dims = false;
  while (next_content_line(line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "num_states" || key == "num_obs" || key == "num_actions" ||
        key == "memory") {
      int v;
      if (!(ss >> v) || v < 0) throw fail("expected a non-negative integer after " + key);
      if (key == "num_states") spec.num_states = v;
      else if (key == "num_obs") spec.num_obs = v;
      else if (key == "num_actions") spec.num_actions = v;
      else mf.memory_n = v;
      have_dims = spec.num_states > 0 && spec.num_obs > 0 && spec.num_actions > 0;
    } else if (key == "transition") {
      if (!have_dims) throw fail("dimensions must be declared before tables");
      int u;
      if (!(ss >> u) || u < 0 || u >= spec.num_actions)
        throw fail("transition requires an action index in range");
      spec.transition.resize(spec.num_actions);
      spec.transition[u] = read_rows(spec.num_states, spec.num_states,
                                     "transition");
      const Mat& m = spec.transition[u];
      for (int i = 0; i < spec.num_states; ++i) {
        const double s = m.row(i).sum();
        if (std::abs(s - 1.0) > kRowSumTol)
          throw ValidationError(filename + ":" + std::to_string(lineno - spec.num_states + 1 + i) +
                                ": transition row " + std::to_string(i) +
                                " for action " + std::to_string(u) + " sums to " +
                                std::to_string(s) + ", expected 1");
      }
    } else if (key == "observation") {
      if (!have_dims) throw fail("dimensions must be declared before tables");
      spec.observation = read_rows(spec.num_states, spec.num_obs, "observation");
      for (int i = 0; i < spec.num_states; ++i) {
        const double s = spec.observation.row(i).sum();
        if (std::abs(s - 1.0) > kRowSumTol)
          throw ValidationError(filename + ":" + std::to_string(lineno - spec.num_states + 1 + i) +
                                ": observation row " + std::to_string(i) +
                                " sums to " + std::to_string(s) + ", expected 1");
      }
    } else if (key == "cost") {
      if (!have_dims) throw fail("dimensions must be declared before tables");
      spec.cost = read_rows(spec.num_states, spec.num_actions, "cost");
    } else if (key == "prior") {
      if (!have_dims) throw fail("dimensions must be declared before tables");
      const Mat p = read_rows(1, spec.num_states, "prior");
      spec.prior = p.row(0).transpose();
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  spec.validate();
  return mf;
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file: " + path);
  return parse_model(in, path);
}

}  // namespace nmrl
