#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "maneuver_zones/solver.hpp"

using namespace mz;

namespace {

// Double integrator with collapsed accel bounds acts as pure transport
// x' = v row by row.
DynamicsModel transport_model() { return make_double_integrator({"a", 0.0, 0.0}); }

DynamicsModel di_model() { return make_double_integrator({"a", -1.0, 1.0}); }

GridSpec di_grid(int nx, int nv, double xlo = -3, double xhi = 3, double vlo = -2,
                 double vhi = 2) {
  return GridSpec({{"x", xlo, xhi, nx, false}, {"v", vlo, vhi, nv, false}});
}

ValueField field_of(const GridSpec& g, auto fn) {
  std::vector<double> v(g.size());
  std::vector<int> idx(static_cast<std::size_t>(g.dim()));
  std::vector<double> state(static_cast<std::size_t>(g.dim()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.unflatten(i, idx);
    for (int d = 0; d < g.dim(); ++d)
      state[static_cast<std::size_t>(d)] = g.coordinate(d, idx[d]);
    v[i] = fn(state);
  }
  return ValueField(g, std::move(v));
}

ValueField random_field(GridSpec g, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> v(g.size());
  for (auto& x : v) x = u(rng);
  return ValueField(std::move(g), std::move(v));
}

}  // namespace

TEST_CASE("upwind gradient examples") {
  GridSpec g({{"x", 0.0, 2.0, 3, false}});
  auto grads = upwind_gradients(ValueField(g, {0.0, 1.0, 2.0}));
  for (double v : grads.left[0].values) CHECK(v == Catch::Approx(1.0));
  for (double v : grads.right[0].values) CHECK(v == Catch::Approx(1.0));

  auto flat = upwind_gradients(ValueField::constant(g, 3.0));
  for (double v : flat.left[0].values) CHECK(v == 0.0);
  for (double v : flat.right[0].values) CHECK(v == 0.0);

  auto bump = upwind_gradients(ValueField(g, {0.0, 1.0, 0.0}));
  CHECK(bump.left[0].values[1] == Catch::Approx(1.0));
  CHECK(bump.right[0].values[1] == Catch::Approx(-1.0));
}

TEST_CASE("upwind gradients wrap periodic dimensions") {
  GridSpec g({{"psi", -kPi, kPi, 4, true}});
  // Values around the circle; seam neighbors are node 3 and node 0.
  auto grads = upwind_gradients(ValueField(g, {1.0, 0.0, 0.0, 0.0}));
  const double h = kTwoPi / 4;
  CHECK(grads.left[0].values[0] == Catch::Approx((1.0 - 0.0) / h));
  CHECK(grads.right[0].values[3] == Catch::Approx((1.0 - 0.0) / h));
}

TEST_CASE("lf_step keeps a constant field stationary") {
  auto g = di_grid(9, 7);
  auto c = ValueField::constant(g, 0.7);
  auto out = lf_step(c, di_model(), 0.01);
  for (double v : out.values) CHECK(v == 0.7);
}

TEST_CASE("lf_step transports a linear profile exactly") {
  auto g = di_grid(9, 5, -2, 2, 0.5, 1.5);
  auto v0 = field_of(g, [](std::span<const double> s) { return s[0]; });
  const double dt = 0.05;
  auto v1 = lf_step(v0, transport_model(), dt);
  // Backward reach semantics: the new frame picks up value from downstream,
  // V(x) <- x + dt * v.
  std::vector<int> idx(2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.unflatten(i, idx);
    double x = g.coordinate(0, idx[0]), v = g.coordinate(1, idx[1]);
    CHECK(v1.values[i] == Catch::Approx(x + dt * v).margin(1e-12));
  }
}

TEST_CASE("lf_step enforces the CFL bound") {
  auto g = di_grid(9, 7);
  auto f = random_field(g, 3);
  try {
    lf_step(f, di_model(), 1.0);
    FAIL("expected cfl_error");
  } catch (const cfl_error& e) {
    CHECK(e.max_admissible_dt > 0.0);
    CHECK(e.max_admissible_dt < 1.0);
    CHECK_NOTHROW(lf_step(f, di_model(), e.max_admissible_dt * 0.99));
  }
}

TEST_CASE("euler step matches the numerical hamiltonian from upwind gradients") {
  // Independent reconstruction of the update from public pieces:
  // V_new = V + dt * (H(z, (p- + p+)/2) + sum_d alpha_d (p+_d - p-_d)/2).
  auto g = di_grid(15, 11);
  auto f = field_of(g, [](std::span<const double> s) {
    return std::sin(1.3 * s[0]) * std::cos(0.7 * s[1]) + 0.3 * s[0];
  });
  auto model = di_model();
  auto alpha = dissipation_bounds(model, g);
  auto grads = upwind_gradients(f);
  const double dt = 0.4 * max_admissible_dt(model, g, {});
  auto stepped = lf_step(f, model, dt);
  auto tube_stepped = lf_step(f, model, dt, {}, SolveMode::Type::tube);

  std::vector<int> idx(2);
  std::vector<double> state(2), pbar(2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.unflatten(i, idx);
    for (int d = 0; d < 2; ++d) state[static_cast<std::size_t>(d)] = g.coordinate(d, idx[d]);
    double diss = 0.0;
    for (int d = 0; d < 2; ++d) {
      double pm = grads.left[static_cast<std::size_t>(d)].values[i];
      double pp = grads.right[static_cast<std::size_t>(d)].values[i];
      pbar[static_cast<std::size_t>(d)] = 0.5 * (pm + pp);
      diss += alpha[static_cast<std::size_t>(d)] * (pp - pm);
    }
    double expect = f.values[i] + dt * (hamiltonian(model, state, pbar) + 0.5 * diss);
    CHECK(stepped.values[i] == Catch::Approx(expect).margin(1e-12));
    // Tube update freezes increases: equivalent to min{0, H} in the PDE.
    CHECK(tube_stepped.values[i] ==
          Catch::Approx(std::min(expect, f.values[i])).margin(1e-12));
  }
}

TEST_CASE("euler step approximates dV/dt = H to first order") {
  auto g = di_grid(41, 31);
  auto f = field_of(g, [](std::span<const double> s) {
    return std::sin(s[0]) * std::cos(0.5 * s[1]);
  });
  auto model = di_model();
  const double dt = 0.25 * max_admissible_dt(model, g, {});
  auto stepped = lf_step(f, model, dt);

  // Central-difference gradients, interior nodes only.
  const double hx = g.dims(0).spacing(), hv = g.dims(1).spacing();
  std::vector<int> idx(2);
  std::vector<double> state(2);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.unflatten(i, idx);
    if (idx[0] == 0 || idx[0] == 40 || idx[1] == 0 || idx[1] == 30) continue;
    state[0] = g.coordinate(0, idx[0]);
    state[1] = g.coordinate(1, idx[1]);
    auto st = g.strides();
    double px = (f.values[i + st[0]] - f.values[i - st[0]]) / (2 * hx);
    double pv = (f.values[i + 1] - f.values[i - 1]) / (2 * hv);
    double rate = (stepped.values[i] - f.values[i]) / dt;
    worst = std::max(worst,
                     std::abs(rate - hamiltonian(model, state, std::vector<double>{px, pv})));
  }
  // First-order scheme: discrepancy is the dissipation term, O(alpha * h).
  auto alpha = dissipation_bounds(model, g);
  CHECK(worst <= 0.75 * (alpha[0] * hx + alpha[1] * hv));
}

TEST_CASE("solve_backward keeps a constant terminal everywhere") {
  auto g = di_grid(9, 7);
  auto c = ValueField::constant(g, -0.3);
  for (auto type : {SolveMode::Type::exact_time, SolveMode::Type::tube}) {
    SolveMode mode;
    mode.type = type;
    auto result = solve_backward(di_model(), c, 0.5, mode, {});
    for (const auto& frame : result.frames)
      for (double v : frame) CHECK(v == -0.3);
  }
}

TEST_CASE("advection solve matches the analytic solution") {
  // x' = v with v pinned near 1; terminal |x| - 1 propagates to |x + vT| - 1.
  GridSpec g({{"x", -3, 3, 121, false}, {"v", 0.99, 1.01, 3, false}});
  auto terminal = field_of(g, [](std::span<const double> s) {
    return std::abs(s[0]) - 1.0;
  });
  const double T = 1.0;
  auto result = solve_backward(transport_model(), terminal, T, SolveMode::exact_time(), {});
  const auto& v0 = result.frames.back();

  const double dx = g.dims(0).spacing();
  double linf = 0.0;
  std::vector<int> idx(2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.unflatten(i, idx);
    if (idx[1] != 1) continue;  // middle row, v = 1
    double x = g.coordinate(0, idx[0]);
    linf = std::max(linf, std::abs(v0[i] - (std::abs(x + T) - 1.0)));
  }
  CHECK(linf <= 2.0 * dx);
}

TEST_CASE("tube frames are monotone and contain the terminal set") {
  auto g = di_grid(41, 31);
  auto terminal = field_of(g, [](std::span<const double> s) {
    return std::abs(s[0]) - 0.25;
  });
  auto result = solve_backward(di_model(), terminal, 1.0, SolveMode::tube(), {});
  for (std::size_t k = 1; k < result.count(); ++k)
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(result.frames[k][i] <= result.frames[k - 1][i] + 1e-12);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (terminal.values[i] <= 0) CHECK(result.frames.back()[i] <= 0.0);
}

TEST_CASE("scheme is monotone in the terminal condition") {
  auto g = di_grid(21, 15);
  auto fa = random_field(g, 5);
  auto fb = random_field(g, 6);
  auto lo = pointwise_min(fa, fb);
  for (auto type : {SolveMode::Type::exact_time, SolveMode::Type::tube}) {
    SolveMode mode;
    mode.type = type;
    auto ra = solve_backward(di_model(), lo, 0.6, mode, {});
    auto rb = solve_backward(di_model(), fa, 0.6, mode, {});
    REQUIRE(ra.count() == rb.count());
    for (std::size_t k = 0; k < ra.count(); ++k)
      for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(ra.frames[k][i] <= rb.frames[k][i] + 1e-12);
  }
}

TEST_CASE("forced step counts must respect the CFL bound") {
  auto g = di_grid(21, 15);
  auto f = random_field(g, 9);
  CHECK_THROWS_AS(solve_backward(di_model(), f, 1.0, SolveMode::exact_time(), {}, 1),
                  cfl_error);
  auto mesh = plan_time_mesh(di_model(), g, 1.0, {});
  CHECK_NOTHROW(
      solve_backward(di_model(), f, 1.0, SolveMode::exact_time(), {}, mesh.steps + 3));
}

TEST_CASE("frame stride keeps first and final frames") {
  auto g = di_grid(21, 15);
  auto f = random_field(g, 11);
  SolverConfig cfg;
  cfg.frame_stride = 1000;
  auto r = solve_backward(di_model(), f, 0.5, SolveMode::tube(), cfg);
  CHECK(r.count() == 2);
  CHECK(r.times.front() == 0.5);
  CHECK(r.times.back() == 0.0);
  CHECK(r.frames.front() == f.values);
}

TEST_CASE("time varying target with constant target equals tube mode") {
  auto g = di_grid(31, 21);
  auto terminal = field_of(g, [](std::span<const double> s) {
    return std::abs(s[0]) - 0.25;
  });
  auto tube = solve_backward(di_model(), terminal, 0.8, SolveMode::tube(), {});
  auto mode = SolveMode::time_varying_target(
      [&terminal](double) -> const ValueField& { return terminal; });
  auto tvt = solve_backward(di_model(), terminal, 0.8, mode, {});
  REQUIRE(tube.count() == tvt.count());
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(tvt.frames.back()[i] == Catch::Approx(tube.frames.back()[i]).margin(1e-9));
}

TEST_CASE("target provider grid mismatch is rejected") {
  auto g = di_grid(21, 15);
  auto other = ValueField::constant(di_grid(22, 15), 0.0);
  auto f = random_field(g, 13);
  auto mode = SolveMode::time_varying_target(
      [&other](double) -> const ValueField& { return other; });
  CHECK_THROWS_AS(solve_backward(di_model(), f, 0.5, mode, {}), config_error);
}

TEST_CASE("tvd_rk2 and eno stay close to euler on smooth data") {
  auto g = di_grid(41, 31);
  auto terminal = field_of(g, [](std::span<const double> s) {
    return std::sin(s[0]) + 0.25 * s[1] * s[1];
  });
  auto base = solve_backward(di_model(), terminal, 0.4, SolveMode::exact_time(), {});

  SolverConfig rk2;
  rk2.integrator = SolverConfig::Integrator::tvd_rk2;
  auto r2 = solve_backward(di_model(), terminal, 0.4, SolveMode::exact_time(), rk2);

  SolverConfig eno;
  eno.scheme = SolverConfig::Scheme::second_order_eno;
  auto re = solve_backward(di_model(), terminal, 0.4, SolveMode::exact_time(), eno);

  double d2 = 0, de = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    d2 = std::max(d2, std::abs(r2.frames.back()[i] - base.frames.back()[i]));
    de = std::max(de, std::abs(re.frames.back()[i] - base.frames.back()[i]));
  }
  CHECK(d2 < 0.1);
  CHECK(de < 0.1);
  CHECK(d2 > 0.0);
}

TEST_CASE("higher order options reduce advection error") {
  GridSpec g({{"x", -3, 3, 121, false}, {"v", 0.99, 1.01, 3, false}});
  auto terminal = field_of(g, [](std::span<const double> s) {
    return std::abs(s[0]) - 1.0;
  });
  auto err = [&](const SolverConfig& cfg) {
    auto r = solve_backward(transport_model(), terminal, 1.0, SolveMode::exact_time(), cfg);
    double linf = 0.0;
    std::vector<int> idx(2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.unflatten(i, idx);
      if (idx[1] != 1) continue;
      double x = g.coordinate(0, idx[0]);
      linf = std::max(linf, std::abs(r.frames.back()[i] - (std::abs(x + 1.0) - 1.0)));
    }
    return linf;
  };
  SolverConfig hi;
  hi.scheme = SolverConfig::Scheme::second_order_eno;
  hi.integrator = SolverConfig::Integrator::tvd_rk2;
  CHECK(err(hi) < err({}));
}
