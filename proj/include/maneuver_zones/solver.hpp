#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "log.hpp"
#include "parallel.hpp"

namespace mz {

inline constexpr int kMaxSolveDim = 8;

struct SolverConfig {
  enum class Scheme { first_order_upwind, second_order_eno };
  enum class Integrator { euler, tvd_rk2 };

  double cfl_factor = 0.8;
  Scheme scheme = Scheme::first_order_upwind;
  Integrator integrator = Integrator::euler;
  int frame_stride = 1;

  void validate() const {
    if (!(cfl_factor > 0.0 && cfl_factor <= 1.0))
      throw config_error("solver.cfl_factor: must be in (0, 1]");
    if (frame_stride < 1)
      throw config_error("solver.frame_stride: must be >= 1");
  }
};

// What the backward solve computes:
//   exact_time          - value of reaching the terminal set exactly at the horizon
//   tube                - value of entering the terminal set at any time
//   time_varying_target - tube against a target set that changes over time
struct SolveMode {
  enum class Type { exact_time, tube, time_varying_target };

  Type type = Type::exact_time;
  std::function<const ValueField&(double)> target;

  static SolveMode exact_time() { return {Type::exact_time, {}}; }
  static SolveMode tube() { return {Type::tube, {}}; }
  static SolveMode time_varying_target(std::function<const ValueField&(double)> fn) {
    return {Type::time_varying_target, std::move(fn)};
  }
};

struct TimeMesh {
  int steps = 1;
  double dt = 0.0;
};

namespace detail {

// ---------------------------------------------------------------------------
// Grid-prepared Hamiltonian evaluators. Trig of grid coordinates is cached
// per dimension index so the hot loop is pure arithmetic. Each evaluator
// computes min over admissible controls of <p, f(z, u)> at the node with
// multi-index ix.
// ---------------------------------------------------------------------------

inline double channel_min(double c, double glo, double ghi) {
  return std::min(c * glo, c * ghi);
}

template <class Fn>
std::vector<double> table_of(const GridSpec& g, int d, Fn fn) {
  std::vector<double> t(static_cast<std::size_t>(g.dims(d).points));
  for (int i = 0; i < g.dims(d).points; ++i) t[static_cast<std::size_t>(i)] = fn(g.coordinate(d, i));
  return t;
}

inline std::vector<double> sin_table(const GridSpec& g, int d) {
  return table_of(g, d, [](double x) { return std::sin(x); });
}

inline std::vector<double> cos_table(const GridSpec& g, int d) {
  return table_of(g, d, [](double x) { return std::cos(x); });
}

inline std::vector<double> coord_table(const GridSpec& g, int d) {
  std::vector<double> t(static_cast<std::size_t>(g.dims(d).points));
  for (int i = 0; i < g.dims(d).points; ++i) t[static_cast<std::size_t>(i)] = g.coordinate(d, i);
  return t;
}

struct LaneChangeEgoEval {
  std::vector<double> sin_psi, v;
  double inv_l, t_lo, t_hi, a_lo, a_hi;
  double operator()(const int* ix, const double* p) const {
    const double vv = v[static_cast<std::size_t>(ix[2])];
    double h = p[0] * vv * sin_psi[static_cast<std::size_t>(ix[1])];
    h += channel_min(p[1] * vv * inv_l, t_lo, t_hi);
    h += channel_min(p[2], a_lo, a_hi);
    return h;
  }
};

struct LaneChangeJointEval {
  std::vector<double> sin_e, cos_e, sin_c, cos_c, v_e, v_c;
  double inv_le, inv_lc, te_lo, te_hi, tc_lo, tc_hi;
  double ae_lo, ae_hi, ac_lo, ac_hi;
  double operator()(const int* ix, const double* p) const {
    const double ve = v_e[static_cast<std::size_t>(ix[5])];
    const double vc = v_c[static_cast<std::size_t>(ix[6])];
    const std::size_t ie = static_cast<std::size_t>(ix[3]);
    const std::size_t ic = static_cast<std::size_t>(ix[4]);
    double h = p[0] * (vc * cos_c[ic] - ve * cos_e[ie]);
    h += p[1] * ve * sin_e[ie];
    h += p[2] * vc * sin_c[ic];
    h += channel_min(p[3] * ve * inv_le, te_lo, te_hi);
    h += channel_min(p[4] * vc * inv_lc, tc_lo, tc_hi);
    h += channel_min(p[5], ae_lo, ae_hi);
    h += channel_min(p[6], ac_lo, ac_hi);
    return h;
  }
};

struct TurnEgoEval {
  std::vector<double> kap, v;
  double a_lo, a_hi;
  double operator()(const int* ix, const double* p) const {
    double h = p[0] * v[static_cast<std::size_t>(ix[1])] * kap[static_cast<std::size_t>(ix[0])];
    h += channel_min(p[1], a_lo, a_hi);
    return h;
  }
};

struct TurnJointEval {
  std::vector<double> sin_e, cos_e, kap_e, sin_c, cos_c, v_e, v_c;
  double inv_lc, tc_lo, tc_hi, ae_lo, ae_hi, ac_lo, ac_hi;
  double operator()(const int* ix, const double* p) const {
    const double ve = v_e[static_cast<std::size_t>(ix[4])];
    const double vc = v_c[static_cast<std::size_t>(ix[5])];
    const std::size_t ie = static_cast<std::size_t>(ix[2]);
    const std::size_t ic = static_cast<std::size_t>(ix[3]);
    double h = p[0] * (vc * cos_c[ic] - ve * cos_e[ie]);
    h += p[1] * (vc * sin_c[ic] - ve * sin_e[ie]);
    h += p[2] * ve * kap_e[ie];
    h += channel_min(p[3] * vc * inv_lc, tc_lo, tc_hi);
    h += channel_min(p[4], ae_lo, ae_hi);
    h += channel_min(p[5], ac_lo, ac_hi);
    return h;
  }
};

struct DoubleIntegratorEval {
  std::vector<double> v;
  double a_lo, a_hi;
  double operator()(const int* ix, const double* p) const {
    return p[0] * v[static_cast<std::size_t>(ix[1])] + channel_min(p[1], a_lo, a_hi);
  }
};

struct DubinsEval {
  std::vector<double> sin_psi, cos_psi;
  double speed, w_lo, w_hi;
  double operator()(const int* ix, const double* p) const {
    const std::size_t ip = static_cast<std::size_t>(ix[2]);
    return speed * (p[0] * cos_psi[ip] + p[1] * sin_psi[ip]) +
           channel_min(p[2], w_lo, w_hi);
  }
};

template <class Fn>
decltype(auto) with_hamiltonian(const DynamicsModel& m, const GridSpec& g, Fn&& fn) {
  switch (m.kind) {
    case ModelKind::lane_change_ego_3d: {
      LaneChangeEgoEval e;
      e.sin_psi = sin_table(g, 1);
      e.v = coord_table(g, 2);
      e.inv_l = 1.0 / m.wheelbase_ego;
      e.t_lo = std::tan(m.controls[1].lo);
      e.t_hi = std::tan(m.controls[1].hi);
      e.a_lo = m.controls[0].lo;
      e.a_hi = m.controls[0].hi;
      return fn(e);
    }
    case ModelKind::lane_change_joint_7d: {
      LaneChangeJointEval e;
      e.sin_e = sin_table(g, 3);
      e.cos_e = cos_table(g, 3);
      e.sin_c = sin_table(g, 4);
      e.cos_c = cos_table(g, 4);
      e.v_e = coord_table(g, 5);
      e.v_c = coord_table(g, 6);
      e.inv_le = 1.0 / m.wheelbase_ego;
      e.inv_lc = 1.0 / m.wheelbase_contender;
      e.te_lo = std::tan(m.controls[1].lo);
      e.te_hi = std::tan(m.controls[1].hi);
      e.tc_lo = std::tan(m.controls[3].lo);
      e.tc_hi = std::tan(m.controls[3].hi);
      e.ae_lo = m.controls[0].lo;
      e.ae_hi = m.controls[0].hi;
      e.ac_lo = m.controls[2].lo;
      e.ac_hi = m.controls[2].hi;
      return fn(e);
    }
    case ModelKind::turn_ego_2d: {
      TurnEgoEval e;
      e.kap.resize(static_cast<std::size_t>(g.dims(0).points));
      for (int i = 0; i < g.dims(0).points; ++i)
        e.kap[static_cast<std::size_t>(i)] = m.kappa(g.coordinate(0, i));
      e.v = coord_table(g, 1);
      e.a_lo = m.controls[0].lo;
      e.a_hi = m.controls[0].hi;
      return fn(e);
    }
    case ModelKind::turn_joint_6d: {
      TurnJointEval e;
      e.sin_e = sin_table(g, 2);
      e.cos_e = cos_table(g, 2);
      e.kap_e.resize(static_cast<std::size_t>(g.dims(2).points));
      for (int i = 0; i < g.dims(2).points; ++i)
        e.kap_e[static_cast<std::size_t>(i)] = m.kappa(g.coordinate(2, i));
      e.sin_c = sin_table(g, 3);
      e.cos_c = cos_table(g, 3);
      e.v_e = coord_table(g, 4);
      e.v_c = coord_table(g, 5);
      e.inv_lc = 1.0 / m.wheelbase_contender;
      e.tc_lo = std::tan(m.controls[2].lo);
      e.tc_hi = std::tan(m.controls[2].hi);
      e.ae_lo = m.controls[0].lo;
      e.ae_hi = m.controls[0].hi;
      e.ac_lo = m.controls[1].lo;
      e.ac_hi = m.controls[1].hi;
      return fn(e);
    }
    case ModelKind::double_integrator_2d: {
      DoubleIntegratorEval e;
      e.v = coord_table(g, 1);
      e.a_lo = m.controls[0].lo;
      e.a_hi = m.controls[0].hi;
      return fn(e);
    }
    case ModelKind::dubins_3d: {
      DubinsEval e;
      e.sin_psi = sin_table(g, 2);
      e.cos_psi = cos_table(g, 2);
      e.speed = m.dubins_speed;
      e.w_lo = m.controls[0].lo;
      e.w_hi = m.controls[0].hi;
      return fn(e);
    }
  }
  throw config_error("unknown model kind");
}

// Value at idx[d] + off along d, with periodic wrap or linear-extrapolation
// ghosts past non-periodic edges.
inline double fetch(const GridSpec& g, const double* V, std::size_t flat,
                    const int* idx, int d, int off) {
  const auto& dd = g.dims(d);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.strides()[d]);
  int j = idx[d] + off;
  if (j >= 0 && j < dd.points)
    return V[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(flat) + off * s)];
  if (dd.periodic) {
    int jw = ((j % dd.points) + dd.points) % dd.points;
    return V[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(flat) + (jw - idx[d]) * s)];
  }
  if (j < 0) {
    const std::size_t flat0 = flat - static_cast<std::size_t>(idx[d]) * static_cast<std::size_t>(s);
    const double v0 = V[flat0];
    const double v1 = V[flat0 + static_cast<std::size_t>(s)];
    const double e = static_cast<double>(-j);
    return (1.0 + e) * v0 - e * v1;
  }
  const std::size_t flat_n = flat + static_cast<std::size_t>(dd.points - 1 - idx[d]) * static_cast<std::size_t>(s);
  const double vn = V[flat_n];
  const double vp = V[flat_n - static_cast<std::size_t>(s)];
  const double e = static_cast<double>(j - (dd.points - 1));
  return (1.0 + e) * vn - e * vp;
}

// One explicit Lax-Friedrichs update with first-order one-sided gradients.
// Backward-in-time semantics: earlier frame = later frame + dt * (H + diss).
// The inner loop runs along the last (fastest) dimension with the edge rules
// of the outer dimensions hoisted to per-row constants.
template <class HEval>
void step_upwind1(const GridSpec& g, const double* V, double* out,
                  const HEval& H, const double* alpha, double dt) {
  const int D = g.dim();
  const auto strides = g.strides();
  const int nlast = g.dims(D - 1).points;
  const bool per_last = g.dims(D - 1).periodic;
  const double invh_last = 1.0 / g.dims(D - 1).spacing();
  const double alpha_last = alpha[D - 1];
  const std::size_t rows = g.size() / static_cast<std::size_t>(nlast);

  double invh[kMaxSolveDim];
  for (int d = 0; d < D; ++d) invh[d] = 1.0 / g.dims(d).spacing();

  parallel_for(rows, [&](std::size_t rb, std::size_t re) {
    int idx[kMaxSolveDim] = {0};
    {
      std::size_t r = rb;
      for (int d = D - 2; d >= 0; --d) {
        idx[d] = static_cast<int>(r % static_cast<std::size_t>(g.dims(d).points));
        r /= static_cast<std::size_t>(g.dims(d).points);
      }
    }
    std::ptrdiff_t mo[kMaxSolveDim], po[kMaxSolveDim];
    double msign[kMaxSolveDim], psign[kMaxSolveDim];
    for (std::size_t row = rb; row < re; ++row) {
      for (int d = 0; d < D - 1; ++d) {
        const auto& dd = g.dims(d);
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(strides[d]);
        if (idx[d] > 0) {
          mo[d] = -s;
          msign[d] = 1.0;
        } else if (dd.periodic) {
          mo[d] = s * (dd.points - 1);
          msign[d] = 1.0;
        } else {
          mo[d] = s;  // ghost node is the linear extrapolation: left diff
          msign[d] = -1.0;  // equals the right diff at the edge
        }
        if (idx[d] < dd.points - 1) {
          po[d] = s;
          psign[d] = 1.0;
        } else if (dd.periodic) {
          po[d] = -s * (dd.points - 1);
          psign[d] = 1.0;
        } else {
          po[d] = -s;
          psign[d] = -1.0;
        }
      }
      const std::size_t base = row * static_cast<std::size_t>(nlast);
      for (int j = 0; j < nlast; ++j) {
        const std::size_t i = base + static_cast<std::size_t>(j);
        const double vi = V[i];
        double pm_last, pp_last;
        if (j > 0)
          pm_last = (vi - V[i - 1]) * invh_last;
        else if (per_last)
          pm_last = (vi - V[i + static_cast<std::size_t>(nlast - 1)]) * invh_last;
        else
          pm_last = (V[i + 1] - vi) * invh_last;
        if (j < nlast - 1)
          pp_last = (V[i + 1] - vi) * invh_last;
        else if (per_last)
          pp_last = (V[i - static_cast<std::size_t>(nlast - 1)] - vi) * invh_last;
        else
          pp_last = (vi - V[i - 1]) * invh_last;

        double pbar[kMaxSolveDim];
        pbar[D - 1] = 0.5 * (pm_last + pp_last);
        double diss = alpha_last * (pp_last - pm_last);
        for (int d = 0; d < D - 1; ++d) {
          const double pm = msign[d] * (vi - V[static_cast<std::size_t>(
                                static_cast<std::ptrdiff_t>(i) + mo[d])]) * invh[d];
          const double pp = psign[d] * (V[static_cast<std::size_t>(
                                static_cast<std::ptrdiff_t>(i) + po[d])] - vi) * invh[d];
          pbar[d] = 0.5 * (pm + pp);
          diss += alpha[d] * (pp - pm);
        }
        idx[D - 1] = j;
        out[i] = vi + dt * (H(idx, pbar) + 0.5 * diss);
      }
      for (int d = D - 2; d >= 0; --d) {
        if (++idx[d] < g.dims(d).points) break;
        idx[d] = 0;
      }
    }
  });
}

inline double minmod(double a, double b) {
  if (a * b <= 0.0) return 0.0;
  return std::abs(a) < std::abs(b) ? a : b;
}

// Second-order ENO one-sided gradients; generic (not tuned).
template <class HEval>
void step_eno2(const GridSpec& g, const double* V, double* out, const HEval& H,
               const double* alpha, double dt) {
  const int D = g.dim();
  parallel_for(g.size(), [&](std::size_t lo, std::size_t hi) {
    int idx[kMaxSolveDim];
    for (std::size_t i = lo; i < hi; ++i) {
      g.unflatten(i, std::span<int>(idx, static_cast<std::size_t>(D)));
      const double vi = V[i];
      double pbar[kMaxSolveDim];
      double diss = 0.0;
      for (int d = 0; d < D; ++d) {
        const double h = g.dims(d).spacing();
        const double vm2 = fetch(g, V, i, idx, d, -2);
        const double vm1 = fetch(g, V, i, idx, d, -1);
        const double vp1 = fetch(g, V, i, idx, d, +1);
        const double vp2 = fetch(g, V, i, idx, d, +2);
        const double d2c = (vp1 - 2 * vi + vm1) / (h * h);
        const double d2m = (vi - 2 * vm1 + vm2) / (h * h);
        const double d2p = (vp2 - 2 * vp1 + vi) / (h * h);
        const double pm = (vi - vm1) / h + 0.5 * h * minmod(d2c, d2m);
        const double pp = (vp1 - vi) / h - 0.5 * h * minmod(d2c, d2p);
        pbar[d] = 0.5 * (pm + pp);
        diss += alpha[d] * (pp - pm);
      }
      out[i] = vi + dt * (H(idx, pbar) + 0.5 * diss);
    }
  });
}

template <class HEval>
void raw_step(const GridSpec& g, const SolverConfig& cfg, const double* V,
              double* out, const HEval& H, const double* alpha, double dt) {
  if (cfg.scheme == SolverConfig::Scheme::second_order_eno)
    step_eno2(g, V, out, H, alpha, dt);
  else
    step_upwind1(g, V, out, H, alpha, dt);
}

// Full integrator step (euler or Heun/TVD-RK2); scratch is only used by rk2.
template <class HEval>
void integrate_step(const GridSpec& g, const SolverConfig& cfg, const double* V,
                    double* out, double* scratch, const HEval& H,
                    const double* alpha, double dt) {
  if (cfg.integrator == SolverConfig::Integrator::euler) {
    raw_step(g, cfg, V, out, H, alpha, dt);
    return;
  }
  raw_step(g, cfg, V, scratch, H, alpha, dt);
  raw_step(g, cfg, scratch, out, H, alpha, dt);
  parallel_for(g.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = 0.5 * (V[i] + out[i]);
  });
}

inline double cfl_rate(const GridSpec& g, std::span<const double> alpha) {
  double sum = 0.0;
  for (int d = 0; d < g.dim(); ++d) sum += alpha[static_cast<std::size_t>(d)] / g.dims(d).spacing();
  return sum;
}

}  // namespace detail

// Largest admissible dt for the explicit scheme: cfl_factor / sum_i(alpha_i/h_i).
inline double max_admissible_dt(const DynamicsModel& model, const GridSpec& grid,
                                const SolverConfig& cfg) {
  auto alpha = dissipation_bounds(model, grid);
  double rate = detail::cfl_rate(grid, alpha);
  if (rate <= 0.0) return std::numeric_limits<double>::infinity();
  return cfg.cfl_factor / rate;
}

// Uniform backward time mesh: the largest CFL-admissible dt that divides the
// horizon evenly.
inline TimeMesh plan_time_mesh(const DynamicsModel& model, const GridSpec& grid,
                               double horizon, const SolverConfig& cfg) {
  if (!(horizon > 0)) throw config_error("solve: horizon must be > 0");
  cfg.validate();
  const double dt_max = max_admissible_dt(model, grid, cfg);
  int steps = 1;
  if (std::isfinite(dt_max))
    steps = std::max(1, static_cast<int>(std::ceil(horizon / dt_max - 1e-12)));
  return {steps, horizon / steps};
}

// One-sided first-order differences per dimension. Periodic dims wrap;
// non-periodic edges use linear-extrapolation ghost values.
struct UpwindGradients {
  std::vector<ValueField> left;
  std::vector<ValueField> right;
};

inline UpwindGradients upwind_gradients(const ValueField& field) {
  const GridSpec& g = field.spec;
  for (int d = 0; d < g.dim(); ++d)
    if (g.dims(d).points < 3)
      throw config_error("upwind_gradients: needs >= 3 points per dimension");
  UpwindGradients out;
  const double* V = field.values.data();
  int idx[kMaxSolveDim];
  for (int d = 0; d < g.dim(); ++d) {
    std::vector<double> lg(g.size()), rg(g.size());
    const double invh = 1.0 / g.dims(d).spacing();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.unflatten(i, std::span<int>(idx, static_cast<std::size_t>(g.dim())));
      const double vm = detail::fetch(g, V, i, idx, d, -1);
      const double vp = detail::fetch(g, V, i, idx, d, +1);
      lg[i] = (V[i] - vm) * invh;
      rg[i] = (vp - V[i]) * invh;
    }
    out.left.emplace_back(g, std::move(lg));
    out.right.emplace_back(g, std::move(rg));
  }
  return out;
}

// One backward-time update. Mode tube additionally keeps the running min
// with the previous frame.
inline ValueField lf_step(const ValueField& field, const DynamicsModel& model,
                          double dt, const SolverConfig& cfg = {},
                          SolveMode::Type mode = SolveMode::Type::exact_time) {
  cfg.validate();
  if (mode == SolveMode::Type::time_varying_target)
    throw config_error("lf_step: time-varying targets are handled by solve_backward");
  if (field.spec.dim() != model.dim())
    throw shape_error("lf_step: grid rank != model dim");
  if (field.spec.dim() > kMaxSolveDim)
    throw config_error("lf_step: too many dimensions");
  if (!(dt > 0)) throw config_error("lf_step: dt must be > 0");
  const double dt_max = max_admissible_dt(model, field.spec, cfg);
  if (dt > dt_max * (1.0 + 1e-12))
    throw cfl_error(dt_max, "lf_step: dt " + std::to_string(dt) +
                                " violates the CFL bound; max admissible dt is " +
                                std::to_string(dt_max));
  auto alpha = dissipation_bounds(model, field.spec);
  ValueField out = field;
  std::vector<double> scratch;
  if (cfg.integrator == SolverConfig::Integrator::tvd_rk2) scratch.resize(field.values.size());
  detail::with_hamiltonian(model, field.spec, [&](const auto& H) {
    detail::integrate_step(field.spec, cfg, field.values.data(), out.values.data(),
                           scratch.data(), H, alpha.data(), dt);
  });
  if (mode == SolveMode::Type::tube) {
    double* po = out.values.data();
    const double* pv = field.values.data();
    parallel_for(out.values.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) po[i] = std::min(po[i], pv[i]);
    });
  }
  return out;
}

// Backward HJB solve from the terminal condition over [0, horizon]. Frames
// come out ordered from t = horizon down to t = 0; every frame_stride-th
// frame is stored plus always the first and the final one. forced_steps pins
// the time mesh (used to align ego and joint solves); it must still satisfy
// the CFL bound.
inline TimeIndexedField solve_backward(const DynamicsModel& model,
                                       const ValueField& terminal, double horizon,
                                       const SolveMode& mode, const SolverConfig& cfg,
                                       std::optional<int> forced_steps = {}) {
  cfg.validate();
  if (terminal.spec.dim() != model.dim())
    throw shape_error("solve_backward: grid rank != model dim");
  if (terminal.spec.dim() > kMaxSolveDim)
    throw config_error("solve_backward: too many dimensions");

  TimeMesh mesh = plan_time_mesh(model, terminal.spec, horizon, cfg);
  if (forced_steps) {
    if (*forced_steps < 1) throw config_error("solve_backward: steps must be >= 1");
    const double dt = horizon / *forced_steps;
    const double dt_max = max_admissible_dt(model, terminal.spec, cfg);
    if (dt > dt_max * (1.0 + 1e-12))
      throw cfl_error(dt_max, "solve_backward: forced dt " + std::to_string(dt) +
                                  " violates the CFL bound; max admissible dt is " +
                                  std::to_string(dt_max));
    mesh = {*forced_steps, dt};
  }

  const GridSpec& g = terminal.spec;
  auto alpha = dissipation_bounds(model, g);

  auto target_at = [&](double t) -> const ValueField& {
    const ValueField& f = mode.target(t);
    if (!(f.spec == g))
      throw config_error("solve_backward: target provider returned a mismatched grid");
    return f;
  };

  std::vector<double> cur = terminal.values;
  if (mode.type == SolveMode::Type::time_varying_target) {
    if (!mode.target) throw config_error("solve_backward: missing target provider");
    const ValueField& t0 = target_at(horizon);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = std::min(cur[i], t0.values[i]);
  }

  TimeIndexedField out;
  out.spec = g;
  out.times.push_back(horizon);
  out.frames.push_back(cur);

  std::vector<double> next(cur.size());
  std::vector<double> scratch;
  if (cfg.integrator == SolverConfig::Integrator::tvd_rk2) scratch.resize(cur.size());

  log::debug("solve_backward: " + std::to_string(mesh.steps) + " steps, dt=" +
             std::to_string(mesh.dt) + ", " + std::to_string(g.size()) + " nodes");

  detail::with_hamiltonian(model, g, [&](const auto& H) {
    for (int k = 1; k <= mesh.steps; ++k) {
      const double t = horizon - k * mesh.dt;
      detail::integrate_step(g, cfg, cur.data(), next.data(), scratch.data(), H,
                             alpha.data(), mesh.dt);
      if (mode.type == SolveMode::Type::tube) {
        const double* pc = cur.data();
        double* pn = next.data();
        parallel_for(next.size(), [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) pn[i] = std::min(pn[i], pc[i]);
        });
      } else if (mode.type == SolveMode::Type::time_varying_target) {
        const ValueField& tf = target_at(t);
        const double* pt = tf.values.data();
        double* pn = next.data();
        parallel_for(next.size(), [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) pn[i] = std::min(pn[i], pt[i]);
        });
      }
      cur.swap(next);
      if (k % cfg.frame_stride == 0 || k == mesh.steps) {
        out.times.push_back(k == mesh.steps ? 0.0 : t);
        out.frames.push_back(cur);
      }
    }
  });

  for (double v : out.frames.back())
    if (!std::isfinite(v)) throw solver_error("solve_backward: non-finite values");
  out.validate();
  return out;
}

}  // namespace mz
