#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nmrl/analysis.hpp"
#include "nmrl/errors.hpp"
#include "nmrl/features.hpp"
#include "nmrl/filter_stability.hpp"
#include "nmrl/learners.hpp"
#include "nmrl/model.hpp"
#include "nmrl/oracle.hpp"

namespace nmrl {

using json = nlohmann::json;

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Experiment configuration. Unknown keys anywhere in the document are
// rejected with the offending field path.
// ---------------------------------------------------------------------------
enum class LearnerKind { kTd0, kLinearQ, kTabularQ, kNone };

struct BasisDecl {
  std::string kind;  // "quantizer" or "table"
  std::string over;  // "state" or "state_action"
  std::vector<int> bins;
  int num_bins = 0;
  std::vector<int> action_bins;   // tabular learner only
  int num_action_bins = 0;
  Mat rows;  // table kind
};

struct OracleToggles {
  bool fixed_point = true;
  bool q_star = true;
  bool mixing = true;
  bool gordin = false;
  bool filter_stability = false;
  bool bounds = false;
  bool dominance = false;
  int t_max = 20;
  int k_max = 50;
  long node_budget = 20000000;
  int belief_grid = 200;
};

struct ExperimentConfig {
  std::string model_path;
  int memory = 0;
  double beta = 0.0;
  BasisDecl basis;
  LearnerKind learner = LearnerKind::kNone;
  LearningRateSchedule schedule;
  long n_steps = 0;
  std::vector<long> checkpoints;
  std::vector<std::uint64_t> seeds;
  Mat exploration_rows;  // empty => uniform
  OracleToggles oracle;
  json raw;

  void validate() const {
    if (model_path.empty()) throw ValidationError("config.model: missing");
    if (memory < 0) throw ValidationError("config.memory: must be >= 0");
    if (!(beta > 0.0 && beta < 1.0))
      throw ValidationError("config.beta: must lie in (0,1)");
    if (learner != LearnerKind::kNone) {
      if (n_steps < 1) throw ValidationError("config.n_steps: must be >= 1");
      if (seeds.empty()) throw ValidationError("config.seeds: at least one seed");
      std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
      if (uniq.size() != seeds.size())
        throw ValidationError("config.seeds: seeds must be distinct");
      if (learner == LearnerKind::kTd0) schedule.validate_robbins_monro();
    }
  }
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ValidationError("config: unknown key '" + path + it.key() + "'");
  }
}

inline std::vector<int> int_vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError("config: " + path + " must be an array");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer())
      throw ValidationError("config: " + path + " must hold integers");
    out.push_back(v.get<int>());
  }
  return out;
}

inline Mat matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty())
    throw ValidationError("config: " + path + " must be a non-empty array of rows");
  const std::size_t cols = j[0].size();
  Mat m(static_cast<int>(j.size()), static_cast<int>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ValidationError("config: " + path + " rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  detail::check_keys(j,
                     {"model", "memory", "beta", "basis", "learner", "n_steps",
                      "checkpoints", "seeds", "exploration", "oracle"},
                     "");
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.model_path = j.value("model", "");
  cfg.memory = j.value("memory", 0);
  cfg.beta = j.value("beta", 0.0);

  if (j.contains("basis")) {
    const json& b = j["basis"];
    detail::check_keys(b,
                       {"kind", "over", "bins", "num_bins", "action_bins",
                        "num_action_bins", "rows"},
                       "basis.");
    cfg.basis.kind = b.value("kind", "");
    cfg.basis.over = b.value("over", "state");
    if (cfg.basis.kind == "quantizer") {
      if (!b.contains("bins") || !b.contains("num_bins"))
        throw ValidationError("config: basis.bins and basis.num_bins are required");
      cfg.basis.bins = detail::int_vector(b["bins"], "basis.bins");
      cfg.basis.num_bins = b["num_bins"].get<int>();
      if (b.contains("action_bins")) {
        cfg.basis.action_bins = detail::int_vector(b["action_bins"], "basis.action_bins");
        cfg.basis.num_action_bins = b.value("num_action_bins", 0);
      }
    } else if (cfg.basis.kind == "table") {
      if (!b.contains("rows"))
        throw ValidationError("config: basis.rows is required for a table basis");
      cfg.basis.rows = detail::matrix(b["rows"], "basis.rows");
    } else {
      throw ValidationError("config: basis.kind must be 'quantizer' or 'table'");
    }
    if (cfg.basis.over != "state" && cfg.basis.over != "state_action")
      throw ValidationError("config: basis.over must be 'state' or 'state_action'");
  }

  if (j.contains("learner")) {
    const json& l = j["learner"];
    detail::check_keys(l, {"kind", "schedule"}, "learner.");
    const std::string kind = l.value("kind", "");
    if (kind == "td0") cfg.learner = LearnerKind::kTd0;
    else if (kind == "linear_q") cfg.learner = LearnerKind::kLinearQ;
    else if (kind == "tabular_q") cfg.learner = LearnerKind::kTabularQ;
    else throw ValidationError("config: learner.kind must be td0, linear_q, or tabular_q");
    if (l.contains("schedule")) {
      const json& s = l["schedule"];
      detail::check_keys(s, {"kind", "a", "t0", "rho"}, "learner.schedule.");
      const std::string sk = s.value("kind", "polynomial");
      if (sk == "polynomial") cfg.schedule.kind = LearningRateSchedule::Kind::kPolynomial;
      else if (sk == "visit_count") cfg.schedule.kind = LearningRateSchedule::Kind::kVisitCount;
      else throw ValidationError("config: learner.schedule.kind unknown");
      cfg.schedule.a = s.value("a", 1.0);
      cfg.schedule.t0 = s.value("t0", 100.0);
      cfg.schedule.rho = s.value("rho", 0.75);
    }
  }

  cfg.n_steps = j.value("n_steps", 0L);
  if (j.contains("checkpoints"))
    for (const auto& c : j["checkpoints"]) cfg.checkpoints.push_back(c.get<long>());
  if (j.contains("seeds"))
    for (const auto& s : j["seeds"]) cfg.seeds.push_back(s.get<std::uint64_t>());

  if (j.contains("exploration")) {
    const json& e = j["exploration"];
    detail::check_keys(e, {"kind", "rows"}, "exploration.");
    const std::string kind = e.value("kind", "uniform");
    if (kind == "table") cfg.exploration_rows = detail::matrix(e["rows"], "exploration.rows");
    else if (kind != "uniform")
      throw ValidationError("config: exploration.kind must be 'uniform' or 'table'");
  }

  if (j.contains("oracle")) {
    const json& o = j["oracle"];
    detail::check_keys(o,
                       {"fixed_point", "q_star", "mixing", "gordin",
                        "filter_stability", "bounds", "dominance", "t_max",
                        "k_max", "node_budget", "belief_grid"},
                       "oracle.");
    cfg.oracle.fixed_point = o.value("fixed_point", cfg.oracle.fixed_point);
    cfg.oracle.q_star = o.value("q_star", cfg.oracle.q_star);
    cfg.oracle.mixing = o.value("mixing", cfg.oracle.mixing);
    cfg.oracle.gordin = o.value("gordin", cfg.oracle.gordin);
    cfg.oracle.filter_stability = o.value("filter_stability", cfg.oracle.filter_stability);
    cfg.oracle.bounds = o.value("bounds", cfg.oracle.bounds);
    cfg.oracle.dominance = o.value("dominance", cfg.oracle.dominance);
    cfg.oracle.t_max = o.value("t_max", cfg.oracle.t_max);
    cfg.oracle.k_max = o.value("k_max", cfg.oracle.k_max);
    cfg.oracle.node_budget = o.value("node_budget", cfg.oracle.node_budget);
    cfg.oracle.belief_grid = o.value("belief_grid", cfg.oracle.belief_grid);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Wiring helpers.
// ---------------------------------------------------------------------------
struct Experiment {
  ExperimentConfig cfg;
  ModelFile model;
  FiniteMemoryPolicy exploration;
  FeatureBasis basis;          // state basis (td0) or state-action (linear_q)
  TabularQuantizer quantizer;  // tabular_q
  int num_windows = 0;
};

inline Experiment wire_experiment(const ExperimentConfig& cfg) {
  Experiment ex;
  ex.cfg = cfg;
  ex.model = load_model(cfg.model_path);
  const PomdpSpec& spec = ex.model.spec;
  const int memory = cfg.memory > 0 ? cfg.memory : ex.model.memory_n;
  ex.cfg.memory = memory;
  ex.num_windows = static_cast<int>(
      window_count(spec.num_obs, spec.num_actions, memory));

  if (cfg.exploration_rows.size() == 0) {
    ex.exploration = FiniteMemoryPolicy::uniform(ex.num_windows, spec.num_actions);
  } else {
    ex.exploration.table = cfg.exploration_rows;
    if (ex.exploration.num_windows() != ex.num_windows ||
        ex.exploration.num_actions() != spec.num_actions)
      throw ValidationError("config.exploration.rows: wrong shape for the window space");
    ex.exploration.validate();
  }

  const int expected_points =
      cfg.basis.over == "state_action" ? ex.num_windows * spec.num_actions
                                       : ex.num_windows;
  if (cfg.learner == LearnerKind::kTabularQ) {
    if (cfg.basis.kind != "quantizer")
      throw ValidationError("config.basis: tabular_q requires a quantizer basis");
    ex.quantizer.state_bin = cfg.basis.bins;
    ex.quantizer.num_state_bins = cfg.basis.num_bins;
    if (static_cast<int>(ex.quantizer.state_bin.size()) != ex.num_windows)
      throw ValidationError("config.basis.bins: wrong length for the window space");
    if (cfg.basis.action_bins.empty()) {
      const TabularQuantizer ident =
          TabularQuantizer::identity(ex.num_windows, spec.num_actions);
      ex.quantizer.action_bin = ident.action_bin;
      ex.quantizer.num_action_bins = spec.num_actions;
    } else {
      ex.quantizer.action_bin = cfg.basis.action_bins;
      ex.quantizer.num_action_bins = cfg.basis.num_action_bins;
      if (static_cast<int>(ex.quantizer.action_bin.size()) != spec.num_actions)
        throw ValidationError("config.basis.action_bins: wrong length");
    }
    ex.quantizer.validate();
  } else if (cfg.basis.kind == "quantizer") {
    QuantizerBasis q;
    q.bin_of = cfg.basis.bins;
    q.num_bins = cfg.basis.num_bins;
    q.num_actions = cfg.basis.over == "state_action" ? spec.num_actions : 0;
    if (static_cast<int>(q.bin_of.size()) != expected_points)
      throw ValidationError("config.basis.bins: wrong length (expected " +
                            std::to_string(expected_points) + ")");
    ex.basis = q.to_basis();
  } else if (cfg.basis.kind == "table") {
    ex.basis.table = cfg.basis.rows;
    ex.basis.num_actions = cfg.basis.over == "state_action" ? spec.num_actions : 0;
    if (ex.basis.num_points() != expected_points)
      throw ValidationError("config.basis.rows: wrong row count (expected " +
                            std::to_string(expected_points) + ")");
    ex.basis.validate();
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Artifact writers (17 significant digits everywhere; deterministic order).
// ---------------------------------------------------------------------------
namespace detail {

inline void write_vec(std::ostream& os, const std::string& name, const Vec& v) {
  os << name;
  for (int i = 0; i < v.size(); ++i) os << ' ' << fmt17(v(i));
  os << '\n';
}

inline void write_mat(std::ostream& os, const std::string& name, const Mat& m) {
  for (int r = 0; r < m.rows(); ++r) {
    os << name << ' ' << r;
    for (int c = 0; c < m.cols(); ++c) os << ' ' << fmt17(m(r, c));
    os << '\n';
  }
}

}  // namespace detail

struct RunOutcome {
  int exit_code = 0;
  std::string out_dir;
  int diverged_seeds = 0;
  int bound_violations = 0;
};

inline RunOutcome run_experiment(const ExperimentConfig& cfg,
                                 const std::string& out_dir,
                                 bool oracle_only = false, int threads = 1) {
  namespace fs = std::filesystem;
  Experiment ex = wire_experiment(cfg);
  const PomdpSpec& spec = ex.model.spec;
  const int memory = ex.cfg.memory;
  fs::create_directories(out_dir);

  {
    std::ofstream echo(fs::path(out_dir) / "config.json");
    echo << cfg.raw.dump(2) << '\n';
  }

  RunOutcome outcome;
  outcome.out_dir = out_dir;

  // --- oracle pass ---
  const JointChain chain = build_joint_chain(spec, ex.exploration, memory);
  const Vec pi_joint = invariant_distribution(chain.kernel);
  const StationaryRegimeMDP mdp =
      build_stationary_mdp(chain, pi_joint, spec, cfg.beta);

  std::ofstream oracle(fs::path(out_dir) / "oracle.txt");
  detail::write_vec(oracle, "pi_joint", pi_joint);
  {
    Vec pi_full = Vec::Zero(ex.num_windows);
    for (int i = 0; i < mdp.dim(); ++i) pi_full(mdp.states[i]) = mdp.pi_state(i);
    detail::write_vec(oracle, "pi_window", pi_full);
  }
  detail::write_mat(oracle, "c", mdp.cost);
  for (int u = 0; u < mdp.num_actions; ++u)
    detail::write_mat(oracle, "eta_" + std::to_string(u), mdp.eta[u]);

  Vec theta_star;
  bool have_theta = false;
  Mat q_star;
  bool have_q = false;

  if (cfg.oracle.fixed_point && ex.basis.num_points() > 0 &&
      ex.basis.num_actions == 0) {
    const FixedPointSolution fp =
        solve_projected_fixed_point(mdp, ex.basis, ex.exploration);
    theta_star = fp.theta;
    have_theta = true;
    detail::write_vec(oracle, "theta_star", fp.theta);
    oracle << "fp_residual " << fmt17(fp.residual) << '\n';
    oracle << "fp_sigma_min_sym " << fmt17(fp.sigma_min_sym) << '\n';
  }
  if (cfg.oracle.q_star) {
    const Mat q_full = optimal_q(mdp);
    if (cfg.learner == LearnerKind::kTabularQ) {
      // Q* of the quantized stationary MDP: aggregate, then value-iterate.
      const StationaryRegimeMDP dmdp = [&] {
        StationaryRegimeMDP d;
        d.beta = mdp.beta;
        d.cost_sup = mdp.cost_sup;
        d.num_actions = ex.quantizer.num_action_bins;
        const int nb = ex.quantizer.num_state_bins;
        d.states.resize(nb);
        for (int b = 0; b < nb; ++b) d.states[b] = b;
        d.index_of = d.states;
        d.pi_state = Vec::Zero(nb);
        d.pi_sa = Mat::Zero(nb, d.num_actions);
        d.cost = Mat::Zero(nb, d.num_actions);
        d.eta.assign(d.num_actions, Mat::Zero(nb, nb));
        for (int i = 0; i < mdp.dim(); ++i) {
          const int bi = ex.quantizer.state_bin[mdp.states[i]];
          d.pi_state(bi) += mdp.pi_state(i);
          for (int u = 0; u < mdp.num_actions; ++u) {
            const int bu = ex.quantizer.action_bin[u];
            d.pi_sa(bi, bu) += mdp.pi_sa(i, u);
            d.cost(bi, bu) += mdp.pi_sa(i, u) * mdp.cost(i, u);
            for (int i1 = 0; i1 < mdp.dim(); ++i1)
              d.eta[bu](bi, ex.quantizer.state_bin[mdp.states[i1]]) +=
                  mdp.pi_sa(i, u) * mdp.eta[u](i, i1);
          }
        }
        for (int b = 0; b < nb; ++b)
          for (int bu = 0; bu < d.num_actions; ++bu) {
            if (d.pi_sa(b, bu) <= 0.0)
              throw CoverageError("quantizer bin " + std::to_string(b) +
                                  " action bin " + std::to_string(bu) +
                                  " has zero stationary mass");
            d.cost(b, bu) /= d.pi_sa(b, bu);
            d.eta[bu].row(b) /= d.pi_sa(b, bu);
          }
        d.validate();
        return d;
      }();
      q_star = optimal_q(dmdp);
    } else {
      q_star = q_full;
    }
    have_q = true;
    detail::write_mat(oracle, "q_star", q_star);
  }
  if (cfg.oracle.mixing) {
    const MixingProfile mp =
        mixing_profile(chain.kernel, pi_joint, cfg.oracle.k_max);
    oracle << "alpha_bar";
    for (double a : mp.alpha_bar) oracle << ' ' << fmt17(a);
    oracle << '\n';
    oracle << "sqrt_alpha_partial";
    for (double a : mp.sqrt_partial) oracle << ' ' << fmt17(a);
    oracle << '\n';
  }
  if (cfg.oracle.gordin && ex.basis.num_points() > 0 && ex.basis.num_actions == 0) {
    const GordinReport gr =
        gordin_diagnostic(chain, pi_joint, ex.basis, cfg.beta, cfg.oracle.k_max);
    oracle << "gordin_max_partial " << fmt17(gr.max_partial) << '\n';
    oracle << "gordin_last_increment " << fmt17(gr.last_increment) << '\n';
  }

  FilterStabilityReport fsr;
  bool have_fs = false;
  if (cfg.oracle.filter_stability) {
    FilterStabilityOptions opt;
    opt.t_max = cfg.oracle.t_max;
    opt.beta = cfg.beta;
    opt.node_budget = cfg.oracle.node_budget;
    std::vector<Vec> priors;
    for (int x = 0; x < spec.num_states; ++x) {
      Vec e = Vec::Zero(spec.num_states);
      e(x) = 1.0;
      priors.push_back(e);
    }
    priors.push_back(spec.prior);
    // the restart side of L_t conditions on the stationary hidden marginal
    Vec pi_hidden = Vec::Zero(spec.num_states);
    for (int j = 0; j < chain.dim(); ++j)
      pi_hidden(chain.hidden_of(j)) += pi_joint(j);
    pi_hidden /= pi_hidden.sum();
    fsr = filter_stability(spec, pi_hidden, priors, memory, opt, &ex.exploration);
    have_fs = true;
    oracle << "l_t";
    for (double v : fsr.l_t) oracle << ' ' << fmt17(v);
    oracle << '\n';
    oracle << "l_t_discounted_sum " << fmt17(fsr.discounted_sum) << '\n';
    oracle << "l_t_tail_bound " << fmt17(fsr.tail_bound) << '\n';
    oracle << "l_t_exhaustive " << (fsr.sup_exhaustive ? 1 : 0) << '\n';
  }
  if (cfg.oracle.dominance && ex.basis.num_actions > 0) {
    const GramMatrix sg = [&] {
      Mat phi(mdp.dim() * spec.num_actions, ex.basis.dim());
      Vec w(mdp.dim() * spec.num_actions);
      for (int i = 0; i < mdp.dim(); ++i)
        for (int u = 0; u < spec.num_actions; ++u) {
          phi.row(i * spec.num_actions + u) =
              ex.basis.table.row(mdp.states[i] * spec.num_actions + u);
          w(i * spec.num_actions + u) = mdp.pi_sa(i, u);
        }
      FeatureBasis compact{phi, spec.num_actions};
      return gram_exploration(compact, w);
    }();
    Mat phi(mdp.dim() * spec.num_actions, ex.basis.dim());
    for (int i = 0; i < mdp.dim(); ++i)
      for (int u = 0; u < spec.num_actions; ++u)
        phi.row(i * spec.num_actions + u) =
            ex.basis.table.row(mdp.states[i] * spec.num_actions + u);
    FeatureBasis compact{phi, spec.num_actions};
    const DominanceReport dr =
        dominance_check(sg, compact, mdp.pi_state, cfg.beta);
    oracle << "dominance_holds " << (dr.holds ? 1 : 0) << '\n';
    oracle << "dominance_worst_margin " << fmt17(dr.worst_margin) << '\n';
  }

  // --- bound reports ---
  if (cfg.oracle.bounds && have_theta) {
    Mat phi(mdp.dim(), ex.basis.dim());
    for (int i = 0; i < mdp.dim(); ++i)
      phi.row(i) = ex.basis.table.row(mdp.states[i]);
    FeatureBasis compact;
    compact.table = phi;
    const Vec j_pol = value_of_policy(mdp, ex.exploration);
    const double lam = lambda_hat(j_pol, phi);
    json breps = json::array();
    auto push = [&](const ErrorBoundReport& r) {
      json b;
      b["name"] = r.name;
      b["lhs"] = r.lhs;
      b["rhs"] = r.rhs;
      b["slack"] = r.slack();
      b["lhs_uncertainty"] = r.lhs_uncertainty;
      for (const auto& [k, v] : r.inputs) b["inputs"][k] = v;
      breps.push_back(b);
      if (r.slack() < -1e-9) ++outcome.bound_violations;
    };
    push(l2_bound(j_pol, theta_star, compact, mdp));
    push(uniform_bound(j_pol, theta_star, compact, mdp, lam));
    if (have_fs) {
      const GramMatrix sg = gram_exploration(compact, mdp.pi_state);
      push(pomdp_value_bound(spec, ex.exploration, memory, cfg.beta, ex.basis,
                             theta_star, sg.sigma_min, fsr, lam));
    }
    std::ofstream bf(fs::path(out_dir) / "bounds.json");
    bf << breps.dump(2) << '\n';
  }

  // --- learner pass ---
  std::ostringstream summary;
  summary << "model " << cfg.model_path << "\nmemory " << memory << "\nbeta "
          << fmt17(cfg.beta) << '\n';
  if (!oracle_only && cfg.learner != LearnerKind::kNone) {
    std::vector<ConvergenceTrace> traces(cfg.seeds.size());
    auto run_seed = [&](std::size_t i) {
      const std::uint64_t seed = cfg.seeds[i];
      switch (cfg.learner) {
        case LearnerKind::kTd0:
          traces[i] = run_td0(spec, ex.exploration, ex.basis, cfg.schedule,
                              cfg.beta, memory, cfg.n_steps, seed,
                              cfg.checkpoints, have_theta ? &theta_star : nullptr);
          break;
        case LearnerKind::kLinearQ:
          traces[i] = run_linear_q(spec, ex.exploration, ex.basis, cfg.schedule,
                                   cfg.beta, memory, cfg.n_steps, seed,
                                   cfg.checkpoints, nullptr);
          break;
        case LearnerKind::kTabularQ:
          traces[i] = run_tabular_q(spec, ex.exploration, ex.quantizer, cfg.beta,
                                    memory, cfg.n_steps, seed, cfg.checkpoints,
                                    have_q ? &q_star : nullptr);
          break;
        default:
          break;
      }
    };
    if (threads > 1) {
      std::vector<std::thread> pool;
      std::size_t next = 0;
      for (int w = 0; w < threads; ++w) pool.emplace_back([&, w] {
        for (std::size_t i = w; i < cfg.seeds.size(); i += threads) run_seed(i);
      });
      for (auto& th : pool) th.join();
      (void)next;
    } else {
      for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_seed(i);
    }

    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      const ConvergenceTrace& tr = traces[i];
      std::ofstream csv(fs::path(out_dir) /
                        ("seed_" + std::to_string(cfg.seeds[i]) + ".csv"));
      csv << "step";
      if (cfg.learner == LearnerKind::kTabularQ) {
        if (!tr.distances.empty()) csv << ",dist_sup";
        csv << '\n';
        for (std::size_t k = 0; k < tr.steps.size(); ++k) {
          csv << tr.steps[k];
          if (!tr.distances.empty()) csv << ',' << fmt17(tr.distances[k]);
          csv << '\n';
        }
      } else {
        const int d = static_cast<int>(tr.final_theta.size());
        for (int c = 0; c < d; ++c) csv << ",theta_" << c;
        if (!tr.distances.empty()) csv << ",dist";
        csv << '\n';
        for (std::size_t k = 0; k < tr.steps.size(); ++k) {
          csv << tr.steps[k];
          for (int c = 0; c < d; ++c) csv << ',' << fmt17(tr.iterates[k](c));
          if (!tr.distances.empty()) csv << ',' << fmt17(tr.distances[k]);
          csv << '\n';
        }
      }
      summary << "seed " << cfg.seeds[i];
      if (tr.diverged) {
        ++outcome.diverged_seeds;
        summary << " diverged_at " << tr.divergence_step << " norm "
                << fmt17(tr.divergence_norm);
      } else if (!tr.distances.empty()) {
        summary << " final_dist " << fmt17(tr.distances.back());
      }
      if (cfg.learner == LearnerKind::kTabularQ) {
        summary << " starved " << tr.starved_cells.size();
        if (!tr.final_q.size()) summary << " empty";
      } else {
        summary << " final_theta";
        for (int c = 0; c < tr.final_theta.size(); ++c)
          summary << ' ' << fmt17(tr.final_theta(c));
      }
      summary << '\n';
    }
  }
  if (have_theta) {
    summary << "theta_star";
    for (int c = 0; c < theta_star.size(); ++c)
      summary << ' ' << fmt17(theta_star(c));
    summary << '\n';
  }
  summary << "diverged_seeds " << outcome.diverged_seeds << '\n';
  summary << "bound_violations " << outcome.bound_violations << '\n';
  {
    std::ofstream sf(fs::path(out_dir) / "summary.txt");
    sf << summary.str();
  }

  if (outcome.bound_violations > 0) outcome.exit_code = 3;
  else if (outcome.diverged_seeds > 0) outcome.exit_code = 2;
  return outcome;
}

// ---------------------------------------------------------------------------
// Artifact comparison: token-wise numeric diff with tolerance.
// ---------------------------------------------------------------------------
struct DiffReport {
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

inline DiffReport compare_dirs(const std::string& dir_a, const std::string& dir_b,
                               double tol = 0.0) {
  namespace fs = std::filesystem;
  DiffReport rep;
  if (!fs::is_directory(dir_a) || !fs::is_directory(dir_b))
    throw ValidationError("compare: both arguments must be run directories");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir_a))
    if (e.is_regular_file()) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(dir_b))
    if (e.is_regular_file()) names.insert(e.path().filename().string());
  for (const std::string& name : names) {
    const fs::path pa = fs::path(dir_a) / name;
    const fs::path pb = fs::path(dir_b) / name;
    if (!fs::exists(pa) || !fs::exists(pb)) {
      rep.mismatches.push_back(name + ": present in only one directory");
      continue;
    }
    std::ifstream fa(pa), fb(pb);
    std::string ta, tb;
    bool differs = false;
    while (true) {
      const bool ha = static_cast<bool>(fa >> ta);
      const bool hb = static_cast<bool>(fb >> tb);
      if (!ha && !hb) break;
      if (ha != hb) {
        differs = true;
        break;
      }
      if (ta == tb) continue;
      char* enda = nullptr;
      char* endb = nullptr;
      const double va = std::strtod(ta.c_str(), &enda);
      const double vb = std::strtod(tb.c_str(), &endb);
      const bool num_a = enda && *enda == '\0' && enda != ta.c_str();
      const bool num_b = endb && *endb == '\0' && endb != tb.c_str();
      if (num_a && num_b) {
        if (std::abs(va - vb) <= tol * std::max({1.0, std::abs(va), std::abs(vb)}))
          continue;
      }
      differs = true;
      break;
    }
    if (differs)
      rep.mismatches.push_back(name + ": '" + ta + "' vs '" + tb + "'");
  }
  return rep;
}

}  // namespace nmrl
