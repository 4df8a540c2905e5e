#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"

namespace mz {

struct ControlChannel {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
};

struct ControlBounds {
  std::vector<ControlChannel> channels;

  int count() const { return static_cast<int>(channels.size()); }
  const ControlChannel& operator[](int i) const {
    return channels[static_cast<std::size_t>(i)];
  }
};

inline void check_accel_channel(const ControlChannel& c) {
  if (!(c.lo <= c.hi))
    throw config_error("control " + c.name + ": min must be <= max");
}

inline void check_steer_channel(const ControlChannel& c) {
  check_accel_channel(c);
  if (std::abs(c.lo + c.hi) > 1e-12)
    throw config_error("control " + c.name + ": steering bounds must be symmetric about 0");
  if (std::max(std::abs(c.lo), std::abs(c.hi)) >= kPi / 2)
    throw config_error("control " + c.name + ": |steering| must stay below pi/2");
}

// Rail curvature kappa(psi). Constant by default; a piecewise-linear table
// supports rails of varying curvature.
struct CurvatureProfile {
  double constant = 0.0;
  std::vector<std::pair<double, double>> table;  // (psi, kappa), sorted by psi

  static CurvatureProfile constant_radius(double radius) {
    if (radius == 0.0) throw config_error("curvature: turn radius must be nonzero");
    CurvatureProfile p;
    p.constant = 1.0 / radius;
    return p;
  }

  static CurvatureProfile from_table(std::vector<std::pair<double, double>> t) {
    if (t.size() < 2) throw config_error("curvature: table needs >= 2 entries");
    for (std::size_t i = 1; i < t.size(); ++i)
      if (!(t[i].first > t[i - 1].first))
        throw config_error("curvature: table psi values must be strictly increasing");
    CurvatureProfile p;
    p.table = std::move(t);
    return p;
  }

  double operator()(double psi) const {
    if (table.empty()) return constant;
    if (psi <= table.front().first) return table.front().second;
    if (psi >= table.back().first) return table.back().second;
    for (std::size_t i = 1; i < table.size(); ++i) {
      if (psi <= table[i].first) {
        double t = (psi - table[i - 1].first) /
                   (table[i].first - table[i - 1].first);
        return table[i - 1].second + t * (table[i].second - table[i - 1].second);
      }
    }
    return table.back().second;
  }

  double max_abs_over(double lo, double hi) const {
    if (table.empty()) return std::abs(constant);
    double m = std::max(std::abs((*this)(lo)), std::abs((*this)(hi)));
    for (const auto& [psi, kappa] : table)
      if (psi >= lo && psi <= hi) m = std::max(m, std::abs(kappa));
    return m;
  }
};

enum class ModelKind {
  lane_change_ego_3d,
  lane_change_joint_7d,
  turn_ego_2d,
  turn_joint_6d,
  double_integrator_2d,
  dubins_3d,
};

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::lane_change_ego_3d: return "lane_change_ego_3d";
    case ModelKind::lane_change_joint_7d: return "lane_change_joint_7d";
    case ModelKind::turn_ego_2d: return "turn_ego_2d";
    case ModelKind::turn_joint_6d: return "turn_joint_6d";
    case ModelKind::double_integrator_2d: return "double_integrator_2d";
    case ModelKind::dubins_3d: return "dubins_3d";
  }
  return "?";
}

// One of the six vehicle systems: state dimension order is fixed per kind
// and matches dim_names. Immutable after construction; all operations on it
// are pure.
struct DynamicsModel {
  ModelKind kind;
  std::vector<std::string> dim_names;
  ControlBounds controls;

  double wheelbase_ego = 3.0;
  double wheelbase_contender = 3.0;
  CurvatureProfile kappa;   // rail models only
  double dubins_speed = 1.0;

  int dim() const { return static_cast<int>(dim_names.size()); }
};

inline DynamicsModel make_lane_change_ego(double wheelbase, ControlChannel accel,
                                          ControlChannel steer) {
  if (wheelbase <= 0) throw config_error("dynamics: wheelbase must be > 0");
  check_accel_channel(accel);
  check_steer_channel(steer);
  DynamicsModel m;
  m.kind = ModelKind::lane_change_ego_3d;
  m.dim_names = {"y_E", "psi_E", "v_E"};
  m.controls.channels = {accel, steer};
  m.wheelbase_ego = wheelbase;
  return m;
}

inline DynamicsModel make_lane_change_joint(double wheelbase_ego,
                                            double wheelbase_contender,
                                            ControlChannel ego_accel,
                                            ControlChannel ego_steer,
                                            ControlChannel contender_accel,
                                            ControlChannel contender_steer) {
  if (wheelbase_ego <= 0 || wheelbase_contender <= 0)
    throw config_error("dynamics: wheelbase must be > 0");
  check_accel_channel(ego_accel);
  check_steer_channel(ego_steer);
  check_accel_channel(contender_accel);
  check_steer_channel(contender_steer);
  DynamicsModel m;
  m.kind = ModelKind::lane_change_joint_7d;
  m.dim_names = {"x_rel", "y_E", "y_C", "psi_E", "psi_C", "v_E", "v_C"};
  m.controls.channels = {ego_accel, ego_steer, contender_accel, contender_steer};
  m.wheelbase_ego = wheelbase_ego;
  m.wheelbase_contender = wheelbase_contender;
  return m;
}

inline DynamicsModel make_turn_ego(CurvatureProfile kappa, ControlChannel accel) {
  check_accel_channel(accel);
  DynamicsModel m;
  m.kind = ModelKind::turn_ego_2d;
  m.dim_names = {"psi_E", "v_E"};
  m.controls.channels = {accel};
  m.kappa = std::move(kappa);
  return m;
}

inline DynamicsModel make_turn_joint(CurvatureProfile kappa,
                                     double wheelbase_contender,
                                     ControlChannel ego_accel,
                                     ControlChannel contender_accel,
                                     ControlChannel contender_steer) {
  if (wheelbase_contender <= 0)
    throw config_error("dynamics: wheelbase must be > 0");
  check_accel_channel(ego_accel);
  check_accel_channel(contender_accel);
  check_steer_channel(contender_steer);
  DynamicsModel m;
  m.kind = ModelKind::turn_joint_6d;
  m.dim_names = {"x_rel", "y_rel", "psi_E", "psi_C", "v_E", "v_C"};
  m.controls.channels = {ego_accel, contender_accel, contender_steer};
  m.kappa = std::move(kappa);
  m.wheelbase_contender = wheelbase_contender;
  return m;
}

inline DynamicsModel make_double_integrator(ControlChannel accel) {
  check_accel_channel(accel);
  DynamicsModel m;
  m.kind = ModelKind::double_integrator_2d;
  m.dim_names = {"x", "v"};
  m.controls.channels = {accel};
  return m;
}

inline DynamicsModel make_dubins(double speed, ControlChannel turn_rate) {
  if (speed <= 0) throw config_error("dynamics: dubins speed must be > 0");
  check_accel_channel(turn_rate);
  DynamicsModel m;
  m.kind = ModelKind::dubins_3d;
  m.dim_names = {"x", "y", "psi"};
  m.controls.channels = {turn_rate};
  m.dubins_speed = speed;
  return m;
}

namespace detail {

inline void check_shapes(const DynamicsModel& m, std::span<const double> state,
                         std::span<const double> controls) {
  if (static_cast<int>(state.size()) != m.dim())
    throw shape_error(std::string("flow: state rank ") +
                      std::to_string(state.size()) + " != model dim " +
                      std::to_string(m.dim()));
  if (static_cast<int>(controls.size()) != m.controls.count())
    throw shape_error("flow: control rank mismatch");
}

inline void check_control_bounds(const DynamicsModel& m,
                                 std::span<const double> u) {
  for (int i = 0; i < m.controls.count(); ++i) {
    const auto& c = m.controls[i];
    const double tol = 1e-9 * std::max(1.0, std::abs(c.lo) + std::abs(c.hi));
    if (u[i] < c.lo - tol || u[i] > c.hi + tol)
      throw control_bounds_error("control " + c.name + " = " +
                                 std::to_string(u[i]) + " outside [" +
                                 std::to_string(c.lo) + ", " +
                                 std::to_string(c.hi) + "]");
  }
}

// Largest |sin| over [lo, hi].
inline double max_abs_sin(double lo, double hi) {
  if (hi - lo >= kPi) return 1.0;
  double k = std::ceil((lo - kPi / 2) / kPi);
  if (kPi / 2 + k * kPi <= hi + 1e-15) return 1.0;
  return std::max(std::abs(std::sin(lo)), std::abs(std::sin(hi)));
}

inline double max_abs_cos(double lo, double hi) {
  if (hi - lo >= kPi) return 1.0;
  double k = std::ceil(lo / kPi);
  if (k * kPi <= hi + 1e-15) return 1.0;
  return std::max(std::abs(std::cos(lo)), std::abs(std::cos(hi)));
}

inline double max_abs(const ControlChannel& c) {
  return std::max(std::abs(c.lo), std::abs(c.hi));
}

inline double max_abs_tan(const ControlChannel& c) {
  return std::max(std::abs(std::tan(c.lo)), std::abs(std::tan(c.hi)));
}

}  // namespace detail

// Right-hand side of the state ODE.
inline std::vector<double> flow(const DynamicsModel& m,
                                std::span<const double> state,
                                std::span<const double> controls) {
  detail::check_shapes(m, state, controls);
  detail::check_control_bounds(m, controls);
  std::vector<double> d(state.size());
  switch (m.kind) {
    case ModelKind::lane_change_ego_3d: {
      const double v = state[2], psi = state[1];
      d[0] = v * std::sin(psi);
      d[1] = v * std::tan(controls[1]) / m.wheelbase_ego;
      d[2] = controls[0];
      break;
    }
    case ModelKind::lane_change_joint_7d: {
      const double psiE = state[3], psiC = state[4], vE = state[5], vC = state[6];
      d[0] = vC * std::cos(psiC) - vE * std::cos(psiE);
      d[1] = vE * std::sin(psiE);
      d[2] = vC * std::sin(psiC);
      d[3] = vE * std::tan(controls[1]) / m.wheelbase_ego;
      d[4] = vC * std::tan(controls[3]) / m.wheelbase_contender;
      d[5] = controls[0];
      d[6] = controls[2];
      break;
    }
    case ModelKind::turn_ego_2d: {
      const double psi = state[0], v = state[1];
      d[0] = v * m.kappa(psi);
      d[1] = controls[0];
      break;
    }
    case ModelKind::turn_joint_6d: {
      const double psiE = state[2], psiC = state[3], vE = state[4], vC = state[5];
      d[0] = vC * std::cos(psiC) - vE * std::cos(psiE);
      d[1] = vC * std::sin(psiC) - vE * std::sin(psiE);
      d[2] = vE * m.kappa(psiE);
      d[3] = vC * std::tan(controls[2]) / m.wheelbase_contender;
      d[4] = controls[0];
      d[5] = controls[1];
      break;
    }
    case ModelKind::double_integrator_2d:
      d[0] = state[1];
      d[1] = controls[0];
      break;
    case ModelKind::dubins_3d:
      d[0] = m.dubins_speed * std::cos(state[2]);
      d[1] = m.dubins_speed * std::sin(state[2]);
      d[2] = controls[0];
      break;
  }
  return d;
}

// Per-channel argmin of <costate, f(state, u)>. Every control enters through
// exactly one state equation via a bounded monotone term, so the minimizer
// is an interval endpoint; a zero coefficient breaks the tie to the channel
// midpoint.
inline std::vector<double> optimal_controls(const DynamicsModel& m,
                                            std::span<const double> state,
                                            std::span<const double> costate) {
  if (static_cast<int>(state.size()) != m.dim() ||
      static_cast<int>(costate.size()) != m.dim())
    throw shape_error("optimal_controls: rank mismatch");

  auto pick = [](double coef, const ControlChannel& c) {
    if (coef > 0) return c.lo;
    if (coef < 0) return c.hi;
    return c.mid();
  };
  // tan is increasing on (-pi/2, pi/2), so the same endpoint rule applies.
  std::vector<double> u(static_cast<std::size_t>(m.controls.count()));
  switch (m.kind) {
    case ModelKind::lane_change_ego_3d: {
      const double v = state[2];
      u[0] = pick(costate[2], m.controls[0]);
      u[1] = pick(costate[1] * v / m.wheelbase_ego, m.controls[1]);
      break;
    }
    case ModelKind::lane_change_joint_7d: {
      const double vE = state[5], vC = state[6];
      u[0] = pick(costate[5], m.controls[0]);
      u[1] = pick(costate[3] * vE / m.wheelbase_ego, m.controls[1]);
      u[2] = pick(costate[6], m.controls[2]);
      u[3] = pick(costate[4] * vC / m.wheelbase_contender, m.controls[3]);
      break;
    }
    case ModelKind::turn_ego_2d:
      u[0] = pick(costate[1], m.controls[0]);
      break;
    case ModelKind::turn_joint_6d: {
      const double vC = state[5];
      u[0] = pick(costate[4], m.controls[0]);
      u[1] = pick(costate[5], m.controls[1]);
      u[2] = pick(costate[3] * vC / m.wheelbase_contender, m.controls[2]);
      break;
    }
    case ModelKind::double_integrator_2d:
      u[0] = pick(costate[1], m.controls[0]);
      break;
    case ModelKind::dubins_3d:
      u[0] = pick(costate[2], m.controls[0]);
      break;
  }
  return u;
}

// min over all admissible controls of <costate, f(state, u)>.
inline double hamiltonian(const DynamicsModel& m, std::span<const double> state,
                          std::span<const double> costate) {
  std::vector<double> u = optimal_controls(m, state, costate);
  std::vector<double> f = flow(m, state, u);
  double h = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) h += costate[i] * f[i];
  return h;
}

// Per-dimension bound on |f_i| over the grid domain and admissible controls,
// from the analytic form of each right-hand side.
inline std::vector<double> dissipation_bounds(const DynamicsModel& m,
                                              const GridSpec& grid) {
  if (grid.dim() != m.dim())
    throw shape_error("dissipation_bounds: grid rank != model dim");
  auto vmax = [&](int d) {
    return std::max(std::abs(grid.dims(d).lo), std::abs(grid.dims(d).hi));
  };
  auto sin_rng = [&](int d) {
    return detail::max_abs_sin(grid.dims(d).lo, grid.dims(d).hi);
  };
  auto cos_rng = [&](int d) {
    return detail::max_abs_cos(grid.dims(d).lo, grid.dims(d).hi);
  };

  std::vector<double> a(static_cast<std::size_t>(m.dim()), 0.0);
  switch (m.kind) {
    case ModelKind::lane_change_ego_3d: {
      const double v = vmax(2);
      a[0] = v * sin_rng(1);
      a[1] = v * detail::max_abs_tan(m.controls[1]) / m.wheelbase_ego;
      a[2] = detail::max_abs(m.controls[0]);
      break;
    }
    case ModelKind::lane_change_joint_7d: {
      const double vE = vmax(5), vC = vmax(6);
      a[0] = vC * cos_rng(4) + vE * cos_rng(3);
      a[1] = vE * sin_rng(3);
      a[2] = vC * sin_rng(4);
      a[3] = vE * detail::max_abs_tan(m.controls[1]) / m.wheelbase_ego;
      a[4] = vC * detail::max_abs_tan(m.controls[3]) / m.wheelbase_contender;
      a[5] = detail::max_abs(m.controls[0]);
      a[6] = detail::max_abs(m.controls[2]);
      break;
    }
    case ModelKind::turn_ego_2d: {
      const double v = vmax(1);
      a[0] = v * m.kappa.max_abs_over(grid.dims(0).lo, grid.dims(0).hi);
      a[1] = detail::max_abs(m.controls[0]);
      break;
    }
    case ModelKind::turn_joint_6d: {
      const double vE = vmax(4), vC = vmax(5);
      a[0] = vC * cos_rng(3) + vE * cos_rng(2);
      a[1] = vC * sin_rng(3) + vE * sin_rng(2);
      a[2] = vE * m.kappa.max_abs_over(grid.dims(2).lo, grid.dims(2).hi);
      a[3] = vC * detail::max_abs_tan(m.controls[2]) / m.wheelbase_contender;
      a[4] = detail::max_abs(m.controls[0]);
      a[5] = detail::max_abs(m.controls[1]);
      break;
    }
    case ModelKind::double_integrator_2d:
      a[0] = vmax(1);
      a[1] = detail::max_abs(m.controls[0]);
      break;
    case ModelKind::dubins_3d:
      a[0] = m.dubins_speed * cos_rng(2);
      a[1] = m.dubins_speed * sin_rng(2);
      a[2] = detail::max_abs(m.controls[0]);
      break;
  }
  return a;
}

// Maps ego state dimensions into the joint state space: joint_dims[i] is the
// joint dimension holding ego dimension i.
struct EgoProjection {
  std::vector<int> joint_dims;

  int ego_dim() const { return static_cast<int>(joint_dims.size()); }

  void validate(const GridSpec& ego, const GridSpec& joint) const {
    if (ego.dim() != ego_dim())
      throw config_error("projection: ego grid rank mismatch");
    std::vector<bool> used(static_cast<std::size_t>(joint.dim()), false);
    for (int e = 0; e < ego_dim(); ++e) {
      int j = joint_dims[static_cast<std::size_t>(e)];
      if (j < 0 || j >= joint.dim())
        throw config_error("projection: joint dimension index out of range");
      if (used[static_cast<std::size_t>(j)])
        throw config_error("projection: joint dimension mapped twice");
      used[static_cast<std::size_t>(j)] = true;
      if (!(ego.dims(e) == joint.dims(j)))
        throw config_error("projection: ego dimension " + ego.dims(e).name +
                           " does not match joint dimension " +
                           joint.dims(j).name);
    }
  }

  std::vector<double> project(std::span<const double> joint_state) const {
    std::vector<double> ego(joint_dims.size());
    for (std::size_t e = 0; e < joint_dims.size(); ++e)
      ego[e] = joint_state[static_cast<std::size_t>(joint_dims[e])];
    return ego;
  }
};

inline EgoProjection canonical_projection(ModelKind joint_kind) {
  switch (joint_kind) {
    case ModelKind::lane_change_joint_7d: return {{1, 3, 5}};
    case ModelKind::turn_joint_6d: return {{2, 4}};
    case ModelKind::dubins_3d: return {{0, 1, 2}};
    default:
      throw config_error(std::string("no ego projection for model ") +
                         to_string(joint_kind));
  }
}

}  // namespace mz
