#pragma once

#include "vibefuse/fem.hpp"
#include "vibefuse/simulation.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace testing {

using vibefuse::fem::Region;

inline Region box(std::optional<double> x0, std::optional<double> x1, std::optional<double> y0,
                  std::optional<double> y1) {
  Region r;
  r.lower = {x0, y0, std::nullopt};
  r.upper = {x1, y1, std::nullopt};
  return r;
}

inline Region nowhere() {
  Region r;
  r.lower = {1e6, std::nullopt, std::nullopt};
  return r;
}

/// 0.2 x 0.1 x 0.01 steel strip, 6 x 4 x 1 elements, clamped at x = 0.
/// Segments: three x-bands, each split at y = 0.05.
inline vibefuse::fem::GeometryConfig small_strip() {
  vibefuse::fem::GeometryConfig g;
  vibefuse::fem::PanelSpec p;
  p.origin = {0.0, 0.0, 0.0};
  p.extents = {0.2, 0.1, 0.01};
  p.divisions = {6, 4, 1};
  g.panels.push_back(p);
  Region clamp;
  clamp.upper = {1e-9, std::nullopt, std::nullopt};
  g.fixed_nodes.push_back(clamp);
  const double a = 0.2 / 3.0;
  for (int s = 0; s < 3; ++s) {
    const std::optional<double> lo = s == 0 ? std::nullopt : std::optional<double>(s * a);
    const std::optional<double> hi = s == 2 ? std::nullopt : std::optional<double>((s + 1) * a);
    g.segment_regions.push_back(box(lo, hi, std::nullopt, 0.05));
    g.segment_regions.push_back(box(lo, hi, 0.05, std::nullopt));
  }
  return g;
}

inline vibefuse::fem::GeometryConfig single_cube(bool free_free) {
  vibefuse::fem::GeometryConfig g;
  vibefuse::fem::PanelSpec p;
  p.extents = {1.0, 1.0, 1.0};
  p.divisions = {1, 1, 1};
  g.panels.push_back(p);
  g.free_free = free_free;
  g.segment_regions.push_back(Region{});
  for (int s = 1; s < vibefuse::fem::kSegmentCount; ++s) g.segment_regions.push_back(nowhere());
  return g;
}

/// Strip model with tip forces and a tip output.
inline vibefuse::sim::ModelSpec strip_model() {
  vibefuse::sim::ModelSpec m;
  m.geometry = small_strip();
  vibefuse::sim::DofSelector f1, f2, out;
  f1.point = vibefuse::fem::Vec3(0.2, 0.0, 0.01);
  f2.point = vibefuse::fem::Vec3(0.2, 0.1, 0.01);
  out.point = vibefuse::fem::Vec3(0.2, 0.05, 0.01);
  m.forces = {f1, f2};
  m.outputs = {out};
  m.freq_start_hz = 100.0;
  m.freq_stop_hz = 300.0;
  m.freq_count = 5;
  return m;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace testing
