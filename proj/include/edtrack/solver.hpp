#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "edtrack/costs.hpp"

// AutoDiff needs Eigen/Core included first.
#include <unsupported/Eigen/AutoDiff>

namespace edtrack {

enum class GradientMode { Analytic, ForwardMode };

inline GradientMode gradient_mode_from_string(const std::string& s) {
  if (s == "analytic") return GradientMode::Analytic;
  if (s == "forward-mode" || s == "forward") return GradientMode::ForwardMode;
  throw ConfigError("unknown gradient mode '" + s + "'");
}

struct SolverConfig {
  double step_size = 1e-3;
  int max_iterations = 500;
  double relative_tolerance = 1e-7;
  GradientMode gradient_mode = GradientMode::Analytic;
  int reassociate_every = 10;
  int max_halvings = 10;

  void validate() const {
    if (!(step_size > 0)) throw ConfigError("step_size must be positive");
    if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
    if (!(relative_tolerance >= 0)) throw ConfigError("relative_tolerance must be non-negative");
    if (reassociate_every < 1) throw ConfigError("reassociate_every must be at least 1");
    if (max_halvings < 0) throw ConfigError("max_halvings must be non-negative");
  }
};

struct IterationRecord {
  int iteration = 0;
  CostBreakdown costs;  // after this iteration's step
  double step = 0;
  int halvings = 0;
  bool reassociated = false;
};

struct OptimizationReport {
  std::vector<IterationRecord> iterations;
  WarpParams final_params;
  bool converged = false;
  int iterations_used = 0;
  std::string stop_reason;

  std::vector<double> cost_history() const {
    std::vector<double> c;
    for (const auto& it : iterations) c.push_back(it.costs.total);
    return c;
  }
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, OptimizationReport report)
      : Error(ErrorCategory::Solver, what), report_(std::move(report)) {}
  const OptimizationReport& report() const { return report_; }

 private:
  OptimizationReport report_;
};

namespace detail {

inline void require_finite_terms(const CostBreakdown& c) {
  if (!std::isfinite(c.data)) throw NumericError("data term of the objective is non-finite");
  if (!std::isfinite(c.arap)) throw NumericError("ARAP term of the objective is non-finite");
  if (!std::isfinite(c.quat)) throw NumericError("quaternion-norm term of the objective is non-finite");
}

}  // namespace detail

/// Exact gradient of the total objective with respect to the flattened
/// warp parameters, assembled from hand-derived partials.
inline Eigen::VectorXd analytic_gradient(const SolveState& s, const CorrespondenceSet& corr,
                                         const CostWeights& weights) {
  detail::require_finite_terms(evaluate_costs(s, corr, weights));
  const std::size_t n = s.graph.size();
  const Eigen::VectorXd x = s.params.flatten();
  const EvaluatedWarp<double> w = evaluate_warp<double>(x);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.size());

  // Translation gradients accumulate directly; rotation gradients go through
  // A = sum (dL/dRx) x^T so that dL/dq_k = <dR/dq_k, A>.
  std::vector<Mat3> node_outer(n, Mat3::Zero());
  Mat3 global_outer = Mat3::Zero();
  const auto bg = Eigen::Index(7 * n + 4);
  const double lambda = weights.data_weight();

  for (std::size_t i = 0; i < s.positions.size(); ++i) {
    const auto& e = corr.entries[i];
    if (!e.valid) continue;
    const auto nodes = s.skinning.nodes_of(i);
    const auto wts = s.skinning.weights_of(i);
    const Vec3 y = blend_position<double>(s.positions[i], nodes, wts, s.graph.nodes, w);
    const Vec3 p = w.global_rotation * y + w.global_translation;
    Vec3 dp;
    if (weights.mode == CostMode::Icp) dp = 2.0 * lambda * e.target_normal.dot(p - e.target_position) * e.target_normal;
    else dp = 2.0 * lambda * (p - e.target_position);
    grad.segment<3>(bg) += dp;
    global_outer += dp * y.transpose();
    const Vec3 dy = w.global_rotation.transpose() * dp;
    for (std::size_t a = 0; a < nodes.size(); ++a) {
      const int j = nodes[a];
      grad.segment<3>(Eigen::Index(7 * j + 4)) += wts[a] * dy;
      node_outer[j] += (wts[a] * dy) * (s.positions[i] - s.graph.nodes[j]).transpose();
    }
  }

  const double lr = weights.lambda_r;
  for (auto [a, b] : s.graph.edges) {
    for (auto [j, k] : {Edge{a, b}, Edge{b, a}}) {
      const Vec3 r = 2.0 * lr * arap_residual<double>(s.graph, w, j, k);
      grad.segment<3>(Eigen::Index(7 * j + 4)) += r;
      grad.segment<3>(Eigen::Index(7 * k + 4)) -= r;
      node_outer[j] += r * (s.graph.nodes[k] - s.graph.nodes[j]).transpose();
    }
  }

  for (std::size_t j = 0; j <= n; ++j) {
    const auto off = Eigen::Index(7 * j);
    const Vec4 q = x.segment<4>(off);
    const Mat3& outer = j < n ? node_outer[j] : global_outer;
    const auto dr = rotation_jacobian(q);
    for (int k = 0; k < 4; ++k) grad(off + k) += (dr[k].array() * outer.array()).sum();
    grad.segment<4>(off) += 4.0 * lr * (q.squaredNorm() - 1.0) * q;
  }
  return grad;
}

/// Gradient by forward-mode automatic differentiation of the same objective
/// expression; cost grows with the parameter count, so it is a cross-check.
inline Eigen::VectorXd forward_mode_gradient(const SolveState& s, const CorrespondenceSet& corr,
                                             const CostWeights& weights) {
  detail::require_finite_terms(evaluate_costs(s, corr, weights));
  using AD = Eigen::AutoDiffScalar<Eigen::VectorXd>;
  const Eigen::VectorXd x = s.params.flatten();
  Eigen::Matrix<AD, Eigen::Dynamic, 1> xa(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) xa(i) = AD(x(i), x.size(), i);
  const AD f = total_cost_at<AD>(s, corr, weights, xa);
  if (f.derivatives().size() == 0) return Eigen::VectorXd::Zero(x.size());
  return f.derivatives();
}

inline Eigen::VectorXd gradient(const SolveState& s, const CorrespondenceSet& corr, const CostWeights& weights,
                                GradientMode mode = GradientMode::Analytic) {
  check_mode(corr, weights);
  if (corr.size() != s.positions.size()) throw ConfigError("correspondence set size differs from surfel count");
  return mode == GradientMode::Analytic ? analytic_gradient(s, corr, weights)
                                        : forward_mode_gradient(s, corr, weights);
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h of any scalar function.
template <typename F>
Eigen::VectorXd central_difference(F&& f, const Eigen::VectorXd& x, double h) {
  if (!(h > 0)) throw InvalidParameterError("finite-difference step must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + h;
    const double fp = f(xp);
    xp(i) = orig - h;
    const double fm = f(xp);
    xp(i) = orig;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Finite-difference gradient of the total objective with correspondences held fixed.
inline Eigen::VectorXd finite_diff_gradient(const SolveState& s, const CorrespondenceSet& corr,
                                            const CostWeights& weights, double h) {
  check_mode(corr, weights);
  return central_difference(
      [&](const Eigen::VectorXd& x) { return total_cost_at<double>(s, corr, weights, x); }, s.params.flatten(), h);
}

/// Supplies correspondences for the current warp. In ICP mode it is called
/// every reassociate_every iterations; in correspondence mode once.
struct DataProvider {
  CostMode mode = CostMode::Icp;
  std::function<CorrespondenceSet(const SolveState&)> associate;

  static DataProvider fixed(CorrespondenceSet corr) {
    DataProvider p;
    p.mode = corr.mode;
    p.associate = [c = std::move(corr)](const SolveState&) { return c; };
    return p;
  }
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Gradient descent from state.params with step halving on cost increase.
/// The returned report records one cost per iteration; with correspondences
/// fixed the sequence is non-increasing.
inline OptimizationReport optimize(const SolveState& initial, const DataProvider& provider,
                                   const CostWeights& weights, const SolverConfig& cfg,
                                   const IterationCallback& on_iteration = {}) {
  cfg.validate();
  weights.validate();
  if (provider.mode != weights.mode) throw ConfigError("data provider mode does not match cost weights mode");
  if (!provider.associate) throw ConfigError("data provider has no association function");

  SolveState s = initial;
  OptimizationReport report;
  CorrespondenceSet corr = provider.associate(s);
  CostBreakdown current = evaluate_costs(s, corr, weights);
  bool force_reassociate = false;
  bool reassociated = false;  // association happened at the start of this iteration

  auto finish = [&](bool converged, std::string reason) {
    report.converged = converged;
    report.stop_reason = std::move(reason);
    report.final_params = s.params;
    report.iterations_used = int(report.iterations.size());
    return report;
  };
  auto fail = [&](const std::string& what) {
    report.final_params = s.params;
    report.iterations_used = int(report.iterations.size());
    throw SolverError(what, report);
  };
  auto record = [&](const CostBreakdown& c, double step, int halvings) {
    IterationRecord r{int(report.iterations.size()), c, step, halvings, reassociated};
    report.iterations.push_back(r);
    if (on_iteration) on_iteration(r);
  };

  for (int it = 0; it < cfg.max_iterations; ++it) {
    reassociated = false;
    if (weights.mode == CostMode::Icp && it > 0 && (it % cfg.reassociate_every == 0 || force_reassociate)) {
      corr = provider.associate(s);
      current = evaluate_costs(s, corr, weights);
      force_reassociate = false;
      reassociated = true;
    }
    if (!std::isfinite(current.total)) fail("objective is non-finite at iteration " + std::to_string(it));

    const Eigen::VectorXd g = gradient(s, corr, weights, cfg.gradient_mode);
    if (!g.allFinite()) fail("gradient is non-finite at iteration " + std::to_string(it));
    if (current.total == 0.0 || g.isZero(0.0)) {
      record(current, 0.0, 0);
      return finish(true, "stationary point");
    }

    const Eigen::VectorXd x0 = s.params.flatten();
    double step = cfg.step_size;
    bool accepted = false;
    int halvings = 0;
    CostBreakdown trial;
    for (; halvings <= cfg.max_halvings; ++halvings) {
      s.params = WarpParams::unflatten(x0 - step * g);
      try {
        trial = evaluate_costs(s, corr, weights);
      } catch (const InvalidParameterError&) {
        trial.total = std::numeric_limits<double>::infinity();  // stepped onto q = 0
      }
      if (std::isfinite(trial.total) && trial.total <= current.total) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      s.params = WarpParams::unflatten(x0);
      if (weights.mode == CostMode::Icp && !reassociated && it > 0) {
        force_reassociate = true;
        record(current, 0.0, cfg.max_halvings);
        continue;
      }
      record(current, 0.0, cfg.max_halvings);
      return finish(true, "no descent step");
    }

    record(trial, step, halvings);
    const double rel = std::abs(current.total - trial.total) / std::max(current.total, 1e-300);
    current = trial;
    if (rel < cfg.relative_tolerance) {
      // In ICP mode, confirm convergence against a fresh association first.
      if (weights.mode == CostMode::Icp && !reassociated) {
        force_reassociate = true;
        continue;
      }
      return finish(true, "relative tolerance");
    }
  }
  return finish(false, "max iterations");
}

}  // namespace edtrack
