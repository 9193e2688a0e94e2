// SPDX-License-Identifier: MIT
//
// Seed-deterministic weather corruption of LiDAR point clouds: fog, rain,
// snow, and strong sunlight, each at a low and a high severity.
//
// Fog and precipitation share an outcome space per point: keep with
// attenuated reflectance, relocate to a near-sensor scatter return, or
// drop. Sunlight perturbs an exact fraction of points geometrically and
// leaves reflectance alone. All randomness is counter-based and keyed by
// (seed, point index), so results are independent of evaluation order.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wxbench/errors.hpp"
#include "wxbench/kitti_io.hpp"
#include "wxbench/rng.hpp"

namespace wxbench {

enum class WeatherKind { fog, rain, snow, sunlight };
enum class Severity { low, high };

inline const char* to_string(WeatherKind k) {
  switch (k) {
    case WeatherKind::fog: return "fog";
    case WeatherKind::rain: return "rain";
    case WeatherKind::snow: return "snow";
    default: return "sunlight";
  }
}

inline const char* to_string(Severity s) {
  return s == Severity::low ? "low" : "high";
}

struct CorruptionSpec {
  WeatherKind kind = WeatherKind::fog;
  Severity severity = Severity::low;
  double alpha = 0;        // fog extinction [1/m]
  double rate = 0;         // rain/snow rate [mm/h]
  double noise_ratio = 0;  // sunlight: fraction of perturbed points
  double noise_sigma = 2.0;       // sunlight: per-axis sigma [m]
  double intensity_floor = 0.05;  // tau: minimum detectable reflectance

  // Artifact model constants; standard_spec fills the per-kind values.
  double fog_scatter_probability = 0.5;
  double fog_scatter_cap = 25.0;   // max scatter range [m]
  double fog_scatter_floor = 1.0;  // nominal scatter interval lower edge
  double precip_k = 0;             // extinction scale
  double precip_e = 0;             // extinction exponent
  double precip_beta = 0;          // backscatter rate coefficient
  double precip_scatter_floor = 0.5;
  double backscatter_cap = 0.5;

  std::uint64_t seed = 0;
};

// The per-severity parameters: fog alpha {0.005, 0.06} 1/m, rain rate
// {0.2, 7.3} mm/h, snow rate {0.20, 7.29} mm/h, sunlight noise ratio
// {0.01, 0.05} with a 2 m per-axis sigma.
inline CorruptionSpec standard_spec(WeatherKind kind, Severity severity,
                                    std::uint64_t seed) {
  CorruptionSpec s;
  s.kind = kind;
  s.severity = severity;
  s.seed = seed;
  const bool high = severity == Severity::high;
  switch (kind) {
    case WeatherKind::fog:
      s.alpha = high ? 0.06 : 0.005;
      break;
    case WeatherKind::rain:
      s.rate = high ? 7.3 : 0.2;
      s.precip_k = 0.01;
      s.precip_e = 0.6;
      s.precip_beta = 2e-4;
      break;
    case WeatherKind::snow:
      s.rate = high ? 7.29 : 0.20;
      s.precip_k = 0.02;
      s.precip_e = 0.7;
      s.precip_beta = 4e-4;
      break;
    case WeatherKind::sunlight:
      s.noise_ratio = high ? 0.05 : 0.01;
      s.noise_sigma = 2.0;
      break;
  }
  return s;
}

struct CorruptionReport {
  std::size_t n_input = 0;
  std::size_t n_kept = 0;
  std::size_t n_attenuated = 0;  // kept points whose reflectance changed
  std::size_t n_scattered = 0;
  std::size_t n_dropped = 0;
  std::size_t n_perturbed = 0;  // sunlight only
};

// Precipitation extinction coefficient alpha_w = k * rate^e.
inline double precip_extinction(double k, double e, double rate) {
  return k * std::pow(rate, e);
}

// Backscatter probability p = 1 - exp(-beta * rate * r), clamped.
inline double backscatter_probability(double beta, double rate, double r,
                                      double cap) {
  const double p = 1.0 - std::exp(-beta * rate * r);
  return std::min(std::max(p, 0.0), cap);
}

namespace detail {

inline void require_kind(const CorruptionSpec& spec, WeatherKind a) {
  if (spec.kind != a) {
    throw WrongKind(std::string("corruption spec built for ") +
                    to_string(spec.kind));
  }
}

inline void require_kind(const CorruptionSpec& spec, WeatherKind a,
                         WeatherKind b) {
  if (spec.kind != a && spec.kind != b) {
    throw WrongKind(std::string("corruption spec built for ") +
                    to_string(spec.kind));
  }
}

// Relocate p along its ray to target range r_new < r, drawing it toward
// the sensor until the float-space range strictly shrinks. Returns false
// when no strictly closer representation exists (point at the origin).
inline bool relocate_closer(LidarPoint& p, double r, double r_new,
                            float new_reflectance) {
  if (!(r > 0) || !(r_new > 0)) return false;
  double f = r_new / r;
  for (int attempt = 0; attempt < 16; ++attempt) {
    LidarPoint q;
    q.x = static_cast<float>(p.x * f);
    q.y = static_cast<float>(p.y * f);
    q.z = static_cast<float>(p.z * f);
    q.reflectance = new_reflectance;
    if (q.range() < p.range()) {
      p = q;
      return true;
    }
    f *= 0.5;
  }
  return false;
}

// Shared keep / relocate / drop walk for fog and precipitation. Each
// point owns counters {3i, 3i+1, 3i+2}: outcome draw, relocation range,
// scatter reflectance.
template <typename AttenuateFn, typename RelocateProbFn, typename IntervalFn>
std::pair<PointCloud, CorruptionReport> scatter_walk(
    const PointCloud& pc, const CorruptionSpec& spec, AttenuateFn attenuate,
    RelocateProbFn relocate_prob, IntervalFn interval,
    bool relocate_before_threshold) {
  const CounterRng rng(spec.seed, static_cast<std::uint64_t>(spec.kind));
  const double tau = spec.intensity_floor;

  PointCloud out;
  out.frame = pc.frame;
  out.points.reserve(pc.points.size());
  CorruptionReport rep;
  rep.n_input = pc.points.size();

  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const LidarPoint& p = pc.points[i];
    const double r = p.range();
    const double i_new = attenuate(double(p.reflectance), r);
    const std::uint64_t c = 3 * static_cast<std::uint64_t>(i);

    const bool relocate =
        rng.uniform(c) < relocate_prob(r, i_new < tau);
    const bool keep = i_new >= tau;

    // Precipitation rolls backscatter first; fog only scatters points
    // that fell below the detection floor.
    if ((relocate_before_threshold && relocate) ||
        (!relocate_before_threshold && !keep && relocate)) {
      auto [lo, hi] = interval(r);
      LidarPoint q = p;
      const double r_new = rng.uniform(c + 1, lo, hi);
      const float refl = static_cast<float>(rng.uniform(c + 2, 0.0, tau));
      if (relocate_closer(q, r, r_new, refl)) {
        out.points.push_back(q);
        rep.n_scattered += 1;
      } else {
        rep.n_dropped += 1;
      }
      continue;
    }
    if (keep) {
      LidarPoint q = p;
      q.reflectance = static_cast<float>(i_new);
      out.points.push_back(q);
      rep.n_kept += 1;
      rep.n_attenuated += (q.reflectance != p.reflectance);
    } else {
      rep.n_dropped += 1;
    }
  }
  return {std::move(out), rep};
}

}  // namespace detail

// Fog: reflectance decays as exp(-2 alpha r); sub-floor points become a
// near-sensor scatter return with probability 1/2, otherwise vanish.
inline std::pair<PointCloud, CorruptionReport> corrupt_fog(
    const PointCloud& pc, const CorruptionSpec& spec) {
  detail::require_kind(spec, WeatherKind::fog);
  if (spec.alpha < 0) throw DataError("fog extinction must be non-negative");
  if (spec.alpha == 0) {
    CorruptionReport rep;
    rep.n_input = rep.n_kept = pc.points.size();
    return {pc, rep};
  }
  const double alpha = spec.alpha;
  return detail::scatter_walk(
      pc, spec,
      [alpha](double i, double r) { return i * std::exp(-2.0 * alpha * r); },
      [&spec](double, bool sub_floor) {
        return sub_floor ? spec.fog_scatter_probability : 0.0;
      },
      [&spec](double r) {
        const double hi = std::min(r, spec.fog_scatter_cap);
        return std::pair<double, double>(
            std::min(spec.fog_scatter_floor, hi / 2), hi);
      },
      /*relocate_before_threshold=*/false);
}

// Rain and snow: LISA-flavored extinction plus range-dependent
// backscatter that relocates the return into [0.5, r).
inline std::pair<PointCloud, CorruptionReport> corrupt_precip(
    const PointCloud& pc, const CorruptionSpec& spec) {
  detail::require_kind(spec, WeatherKind::rain, WeatherKind::snow);
  if (spec.rate < 0) throw DataError("precipitation rate must be non-negative");
  if (spec.rate == 0) {
    CorruptionReport rep;
    rep.n_input = rep.n_kept = pc.points.size();
    return {pc, rep};
  }
  const double alpha_w =
      precip_extinction(spec.precip_k, spec.precip_e, spec.rate);
  return detail::scatter_walk(
      pc, spec,
      [alpha_w](double i, double r) {
        return i * std::exp(-2.0 * alpha_w * r);
      },
      [&spec](double r, bool) {
        return backscatter_probability(spec.precip_beta, spec.rate, r,
                                       spec.backscatter_cap);
      },
      [&spec](double r) {
        return std::pair<double, double>(
            std::min(spec.precip_scatter_floor, r / 2), r);
      },
      /*relocate_before_threshold=*/true);
}

// Sunlight: exactly round(ratio * N) distinct points get isotropic
// Gaussian position noise; everything else is untouched.
inline std::pair<PointCloud, CorruptionReport> corrupt_sunlight(
    const PointCloud& pc, const CorruptionSpec& spec) {
  detail::require_kind(spec, WeatherKind::sunlight);
  if (spec.noise_ratio < 0 || spec.noise_ratio > 1) {
    throw DataError("sunlight noise ratio must lie in [0, 1]");
  }
  CorruptionReport rep;
  rep.n_input = rep.n_kept = pc.points.size();
  if (spec.noise_ratio == 0 || pc.points.empty()) {
    return {pc, rep};
  }

  const std::size_t n = pc.points.size();
  const std::size_t m = static_cast<std::size_t>(
      std::llround(spec.noise_ratio * double(n)));
  PointCloud out = pc;
  if (m == 0) return {std::move(out), rep};

  // Partial Fisher-Yates over the index array picks m distinct points.
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  SplitMix pick(mix64(spec.seed, 0x5e1ec7u));
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t k = j + static_cast<std::size_t>(pick.below(n - j));
    std::swap(idx[j], idx[k]);
  }

  const CounterRng rng(spec.seed, static_cast<std::uint64_t>(spec.kind));
  for (std::size_t j = 0; j < m; ++j) {
    LidarPoint& p = out.points[idx[j]];
    const std::uint64_t c = 3 * static_cast<std::uint64_t>(idx[j]);
    p.x += static_cast<float>(spec.noise_sigma * rng.gauss(c));
    p.y += static_cast<float>(spec.noise_sigma * rng.gauss(c + 1));
    p.z += static_cast<float>(spec.noise_sigma * rng.gauss(c + 2));
  }
  rep.n_perturbed = m;
  return {std::move(out), rep};
}

// Standard-severity dispatch; bitwise deterministic in (pc, kind,
// severity, seed).
inline std::pair<PointCloud, CorruptionReport> corrupt(
    const PointCloud& pc, WeatherKind kind, Severity severity,
    std::uint64_t seed) {
  const CorruptionSpec spec = standard_spec(kind, severity, seed);
  switch (kind) {
    case WeatherKind::fog: return corrupt_fog(pc, spec);
    case WeatherKind::rain:
    case WeatherKind::snow: return corrupt_precip(pc, spec);
    default: return corrupt_sunlight(pc, spec);
  }
}

}  // namespace wxbench
