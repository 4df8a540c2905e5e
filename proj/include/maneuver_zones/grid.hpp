#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"

namespace mz {

inline constexpr double kPi = 3.1415926535897932384626433832795;
inline constexpr double kTwoPi = 2.0 * kPi;

struct GridDim {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  int points = 0;
  bool periodic = false;

  // Periodic dims drop the duplicate seam node, so spacing divides by n.
  double spacing() const {
    return periodic ? (hi - lo) / points : (hi - lo) / (points - 1);
  }
  double width() const { return hi - lo; }
  bool operator==(const GridDim&) const = default;
};

// Rectilinear node-centered grid. Values live at nodes; flat storage is
// row-major with the last dimension fastest.
class GridSpec {
 public:
  GridSpec() = default;

  explicit GridSpec(std::vector<GridDim> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw config_error("grid: needs at least one dimension");
    for (const auto& d : dims_) {
      if (!(d.lo < d.hi))
        throw config_error("grid." + d.name + ": lower bound must be < upper bound");
      if (d.points < 3)
        throw config_error("grid." + d.name + ": needs at least 3 points");
      if (d.periodic && std::abs(d.width() - kTwoPi) > 1e-9)
        throw config_error("grid." + d.name +
                           ": periodic dimensions must span exactly 2*pi");
    }
    strides_.assign(dims_.size(), 1);
    size_ = 1;
    for (int d = static_cast<int>(dims_.size()) - 1; d >= 0; --d) {
      strides_[d] = size_;
      size_ *= static_cast<std::size_t>(dims_[d].points);
    }
  }

  int dim() const { return static_cast<int>(dims_.size()); }
  std::size_t size() const { return size_; }
  const std::vector<GridDim>& dims() const { return dims_; }
  const GridDim& dims(int d) const { return dims_[static_cast<std::size_t>(d)]; }
  std::span<const std::size_t> strides() const { return strides_; }

  double coordinate(int d, int i) const {
    const auto& dd = dims_[static_cast<std::size_t>(d)];
    return dd.lo + static_cast<double>(i) * dd.spacing();
  }

  std::size_t flat_index(std::span<const int> idx) const {
    std::size_t flat = 0;
    for (int d = 0; d < dim(); ++d)
      flat += static_cast<std::size_t>(idx[d]) * strides_[d];
    return flat;
  }

  void unflatten(std::size_t flat, std::span<int> idx) const {
    for (int d = 0; d < dim(); ++d) {
      idx[d] = static_cast<int>(flat / strides_[d]);
      flat %= strides_[d];
    }
  }

  bool operator==(const GridSpec& other) const { return dims_ == other.dims_; }

 private:
  std::vector<GridDim> dims_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

// Scalar function sampled at grid nodes. Immutable by convention once built;
// concurrent reads are safe.
struct ValueField {
  GridSpec spec;
  std::vector<double> values;

  ValueField() = default;
  ValueField(GridSpec s, std::vector<double> v)
      : spec(std::move(s)), values(std::move(v)) {
    if (values.size() != spec.size())
      throw shape_error("value field: got " + std::to_string(values.size()) +
                        " values for a grid of " + std::to_string(spec.size()) +
                        " nodes");
  }
  static ValueField constant(GridSpec s, double c) {
    std::size_t n = s.size();
    return ValueField(std::move(s), std::vector<double>(n, c));
  }
};

inline void validate_finite(const ValueField& f, const std::string& what) {
  for (double v : f.values)
    if (!std::isfinite(v)) throw solver_error(what + ": non-finite value");
}

// Maps x into [lo, lo + width).
inline double wrap_periodic(double x, double lo, double width) {
  double y = std::fmod(x - lo, width);
  if (y < 0) y += width;
  if (y >= width) y = 0;  // fmod can land exactly on width after rounding
  return lo + y;
}

inline std::vector<double> cell_coordinates(const GridSpec& spec,
                                            std::span<const int> idx) {
  if (static_cast<int>(idx.size()) != spec.dim())
    throw shape_error("cell_coordinates: index rank mismatch");
  std::vector<double> state(idx.size());
  for (int d = 0; d < spec.dim(); ++d) {
    if (idx[d] < 0 || idx[d] >= spec.dims(d).points)
      throw std::out_of_range("cell_coordinates: index " + std::to_string(idx[d]) +
                              " out of range for dimension " + spec.dims(d).name);
    state[static_cast<std::size_t>(d)] = spec.coordinate(d, idx[d]);
  }
  return state;
}

inline std::vector<int> nearest_node(const GridSpec& spec,
                                     std::span<const double> state) {
  if (static_cast<int>(state.size()) != spec.dim())
    throw shape_error("nearest_node: state rank mismatch");
  std::vector<int> idx(state.size());
  for (int d = 0; d < spec.dim(); ++d) {
    const auto& dd = spec.dims(d);
    double x = dd.periodic ? wrap_periodic(state[d], dd.lo, dd.width()) : state[d];
    int i = static_cast<int>(std::lround((x - dd.lo) / dd.spacing()));
    if (dd.periodic)
      i = ((i % dd.points) + dd.points) % dd.points;
    else
      i = std::clamp(i, 0, dd.points - 1);
    idx[static_cast<std::size_t>(d)] = i;
  }
  return idx;
}

// Multilinear interpolation; exact at nodes, wraps periodic dims across the
// seam, rejects queries outside non-periodic bounds.
inline double interpolate(const ValueField& field, std::span<const double> state) {
  const GridSpec& spec = field.spec;
  if (static_cast<int>(state.size()) != spec.dim())
    throw shape_error("interpolate: state rank mismatch");
  constexpr int kMaxDim = 16;
  if (spec.dim() > kMaxDim) throw shape_error("interpolate: too many dimensions");

  int base[kMaxDim];
  int next_offset[kMaxDim];  // flat offset from base node to the +1 neighbor
  double frac[kMaxDim];
  auto strides = spec.strides();

  for (int d = 0; d < spec.dim(); ++d) {
    const auto& dd = spec.dims(d);
    const double h = dd.spacing();
    if (dd.periodic) {
      double x = wrap_periodic(state[d], dd.lo, dd.width());
      double u = (x - dd.lo) / h;
      int i0 = static_cast<int>(std::floor(u));
      i0 = std::clamp(i0, 0, dd.points - 1);
      frac[d] = u - i0;
      base[d] = i0;
      int i1 = (i0 + 1) % dd.points;
      next_offset[d] = static_cast<int>((i1 - i0) * static_cast<long long>(strides[d]));
    } else {
      const double tol = 1e-9 * std::max(1.0, std::abs(dd.lo) + std::abs(dd.hi));
      double x = state[d];
      if (x < dd.lo - tol || x > dd.hi + tol)
        throw out_of_domain_error(
            dd.name, "interpolate: coordinate " + std::to_string(x) +
                         " outside [" + std::to_string(dd.lo) + ", " +
                         std::to_string(dd.hi) + "] in dimension " + dd.name);
      x = std::clamp(x, dd.lo, dd.hi);
      double u = (x - dd.lo) / h;
      int i0 = std::min(static_cast<int>(std::floor(u)), dd.points - 2);
      i0 = std::max(i0, 0);
      frac[d] = std::clamp(u - i0, 0.0, 1.0);
      base[d] = i0;
      next_offset[d] = static_cast<int>(strides[d]);
    }
  }

  std::size_t base_flat = 0;
  for (int d = 0; d < spec.dim(); ++d)
    base_flat += static_cast<std::size_t>(base[d]) * strides[d];

  double acc = 0.0;
  const int corners = 1 << spec.dim();
  for (int mask = 0; mask < corners; ++mask) {
    double w = 1.0;
    std::ptrdiff_t off = 0;
    for (int d = 0; d < spec.dim(); ++d) {
      if (mask & (1 << d)) {
        w *= frac[d];
        off += next_offset[d];
      } else {
        w *= 1.0 - frac[d];
      }
    }
    if (w != 0.0)
      acc += w * field.values[base_flat + static_cast<std::size_t>(off)];
  }
  return acc;
}

namespace detail {
template <class Op>
ValueField pointwise(const ValueField& a, const ValueField& b, Op op,
                     const char* name) {
  if (!(a.spec == b.spec))
    throw shape_error(std::string(name) + ": grid specs differ");
  ValueField out = a;
  const double* pb = b.values.data();
  double* po = out.values.data();
  parallel_for(out.values.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) po[i] = op(po[i], pb[i]);
  });
  return out;
}
}  // namespace detail

inline ValueField pointwise_min(const ValueField& a, const ValueField& b) {
  return detail::pointwise(a, b, [](double x, double y) { return std::min(x, y); },
                           "pointwise_min");
}

inline ValueField pointwise_max(const ValueField& a, const ValueField& b) {
  return detail::pointwise(a, b, [](double x, double y) { return std::max(x, y); },
                           "pointwise_max");
}

inline double cell_volume(const GridSpec& spec) {
  double v = 1.0;
  for (int d = 0; d < spec.dim(); ++d) v *= spec.dims(d).spacing();
  return v;
}

// Measure of the sublevel set {value < threshold}: node count times the
// per-cell volume.
inline double volume_below(const ValueField& field, double threshold) {
  std::atomic<std::size_t> count{0};
  const double* p = field.values.data();
  parallel_for(field.values.size(), [&](std::size_t lo, std::size_t hi) {
    std::size_t local = 0;
    for (std::size_t i = lo; i < hi; ++i)
      if (p[i] < threshold) ++local;
    count.fetch_add(local, std::memory_order_relaxed);
  });
  return static_cast<double>(count.load()) * cell_volume(field.spec);
}

// Value function frames over a strictly monotone time mesh.
struct TimeIndexedField {
  GridSpec spec;
  std::vector<double> times;
  std::vector<std::vector<double>> frames;

  void validate() const {
    if (times.size() != frames.size())
      throw shape_error("time-indexed field: frame count != time count");
    if (times.size() < 1) throw shape_error("time-indexed field: empty");
    for (std::size_t k = 1; k < times.size(); ++k) {
      bool inc = times[1] > times[0];
      if (inc ? !(times[k] > times[k - 1]) : !(times[k] < times[k - 1]))
        throw shape_error("time-indexed field: times not strictly monotone");
    }
    for (const auto& f : frames)
      if (f.size() != spec.size())
        throw shape_error("time-indexed field: frame length mismatch");
  }

  std::size_t count() const { return times.size(); }

  std::span<const double> frame(std::size_t k) const { return frames[k]; }

  ValueField frame_field(std::size_t k) const {
    return ValueField(spec, frames[k]);
  }

  std::size_t index_of_time(double t, double tol = 1e-9) const {
    for (std::size_t k = 0; k < times.size(); ++k)
      if (std::abs(times[k] - t) <= tol) return k;
    throw config_error("time-indexed field: no frame at t=" + std::to_string(t));
  }
};

}  // namespace mz
