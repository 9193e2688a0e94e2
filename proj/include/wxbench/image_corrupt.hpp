// SPDX-License-Identifier: MIT
//
// Seed-deterministic image corruption: fog overlay, rain streaks, snow
// with darkening, and a sun flare, at a low and a high severity. All
// effects are pure functions of (image, spec); per-streak and per-flake
// randomness is keyed by entity index, pixel blends round half away from
// zero and clamp to [0, 255].
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

#include "wxbench/errors.hpp"
#include "wxbench/image.hpp"
#include "wxbench/rng.hpp"
#include "wxbench/weather_sim.hpp"

namespace wxbench {

struct ImageCorruptionSpec {
  WeatherKind kind = WeatherKind::fog;
  Severity severity = Severity::low;

  double fog_opacity = 0;       // fog: {0.10, 0.50}
  double haze_amplitude = 0.1;  // fog: local opacity modulation depth

  double rain_density = 0;  // rain: streak seeds per pixel, {0.01, 0.20}
  double rain_alpha = 0.5;
  int rain_boost = 40;
  double streak_min_len = 15, streak_max_len = 35;          // pixels
  double streak_min_angle = -20, streak_max_angle = -10;    // deg from vertical

  double snow_density = 0;  // snow: flakes per pixel, {0.002, 0.01}
  double snow_mask_opacity = 0.30;
  double brightness_scale = 0.70;
  double flake_min_radius = 1, flake_max_radius = 2;  // pixels

  double sun_radius = 0;  // sunlight: {30, 70} pixels
  double sun_blend = 0.8;

  std::uint64_t seed = 0;
};

// Severity parameters: fog opacity {0.10, 0.50}, rain density
// {0.01, 0.20}, snow density {0.002, 0.01}, sun radius {30, 70} px.
inline ImageCorruptionSpec standard_image_spec(WeatherKind kind,
                                               Severity severity,
                                               std::uint64_t seed) {
  ImageCorruptionSpec s;
  s.kind = kind;
  s.severity = severity;
  s.seed = seed;
  const bool high = severity == Severity::high;
  switch (kind) {
    case WeatherKind::fog: s.fog_opacity = high ? 0.50 : 0.10; break;
    case WeatherKind::rain: s.rain_density = high ? 0.20 : 0.01; break;
    case WeatherKind::snow: s.snow_density = high ? 0.01 : 0.002; break;
    case WeatherKind::sunlight: s.sun_radius = high ? 70 : 30; break;
  }
  return s;
}

namespace detail {

inline void require_image_kind(const ImageCorruptionSpec& spec,
                               WeatherKind want) {
  if (spec.kind != want) {
    throw WrongKind(std::string("image corruption spec built for ") +
                    to_string(spec.kind));
  }
}

inline std::uint8_t clamp_u8(long long v) {
  return std::uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
}

// Gray blend p <- (1 - o) p + o * 128, rounded and clamped.
inline std::uint8_t gray_blend(std::uint8_t p, double o) {
  return clamp_u8(std::llround((1.0 - o) * p + o * 128.0));
}

// Bilinear lattice value noise in [-1, 1]: `cells` cells across each
// image dimension, node values keyed by (octave, node index).
inline double value_noise(const CounterRng& rng, std::uint64_t octave_tag,
                          int cells, int w, int h, int x, int y) {
  const double u = (x + 0.5) / double(w) * cells;
  const double v = (y + 0.5) / double(h) * cells;
  int i0 = int(u), j0 = int(v);
  if (i0 >= cells) i0 = cells - 1;
  if (j0 >= cells) j0 = cells - 1;
  const double fu = u - i0, fv = v - j0;
  auto node = [&](int i, int j) {
    const std::uint64_t idx =
        std::uint64_t(j) * std::uint64_t(cells + 1) + std::uint64_t(i);
    return 2.0 * rng.uniform(octave_tag + idx) - 1.0;
  };
  const double top = node(i0, j0) * (1 - fu) + node(i0 + 1, j0) * fu;
  const double bot = node(i0, j0 + 1) * (1 - fu) + node(i0 + 1, j0 + 1) * fu;
  return top * (1 - fv) + bot * fv;
}

}  // namespace detail

// Fog: blend toward mid-gray 128 at the spec opacity, locally modulated
// by a two-octave haze field within +-haze_amplitude*o. The haze field is
// disabled at the opacity extremes so the identity and full-gray limits
// hold exactly.
inline Image fog_image(const Image& img, const ImageCorruptionSpec& spec) {
  detail::require_image_kind(spec, WeatherKind::fog);
  const double o = spec.fog_opacity;
  if (o < 0 || o > 1) throw DataError("fog opacity must lie in [0, 1]");
  if (o == 0) return img;

  const bool haze = o < 1.0 && spec.haze_amplitude > 0;
  const CounterRng rng(spec.seed, std::uint64_t(spec.kind));
  constexpr std::uint64_t kOctaveCoarse = 1u << 20;
  constexpr std::uint64_t kOctaveFine = 2u << 20;

  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double o_eff = o;
      if (haze) {
        const double n =
            (2.0 / 3.0) *
                detail::value_noise(rng, kOctaveCoarse, 8, img.width,
                                    img.height, x, y) +
            (1.0 / 3.0) * detail::value_noise(rng, kOctaveFine, 4, img.width,
                                              img.height, x, y);
        o_eff = std::min(1.0, std::max(0.0, o + spec.haze_amplitude * o * n));
      }
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = detail::gray_blend(img.at(x, y, c), o_eff);
      }
    }
  }
  return out;
}

// Rain: round(density*H*W) streak seeds; each is a one-pixel-wide line,
// length U(15, 35) px, angled U(-20, -10) degrees off vertical, blended
// at alpha 0.5 against the pixel brightened by +40 (clamped).
inline Image rain_image(const Image& img, const ImageCorruptionSpec& spec) {
  detail::require_image_kind(spec, WeatherKind::rain);
  if (spec.rain_density < 0 || spec.rain_density > 1) {
    throw DataError("rain density must lie in [0, 1]");
  }
  Image out = img;
  const long long n_streaks = std::llround(
      spec.rain_density * double(img.width) * double(img.height));
  if (n_streaks == 0) return out;

  const CounterRng rng(spec.seed, std::uint64_t(spec.kind));
  const double deg = std::numbers::pi / 180.0;
  for (long long s = 0; s < n_streaks; ++s) {
    const std::uint64_t c = 4 * std::uint64_t(s);
    const double x0 = rng.uniform(c) * img.width;
    const double y0 = rng.uniform(c + 1) * img.height;
    const double len =
        rng.uniform(c + 2, spec.streak_min_len, spec.streak_max_len);
    const double theta =
        rng.uniform(c + 3, spec.streak_min_angle, spec.streak_max_angle) * deg;
    const double dx = std::sin(theta), dy = std::cos(theta);

    int last_x = -1, last_y = -1;
    const long long steps = std::llround(len);
    for (long long t = 0; t < steps; ++t) {
      const int px = int(std::floor(x0 + t * dx));
      const int py = int(std::floor(y0 + t * dy));
      if (px == last_x && py == last_y) continue;  // one blend per pixel
      last_x = px;
      last_y = py;
      if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const int p = out.at(px, py, ch);
        const int lit = std::min(255, p + spec.rain_boost);
        out.at(px, py, ch) = detail::clamp_u8(std::llround(
            (1.0 - spec.rain_alpha) * p + spec.rain_alpha * lit));
      }
    }
  }
  return out;
}

// Snow, in fixed order: white flake discs, then global darkening by
// brightness_scale, then the gray mask blend. The order is part of the
// contract so golden images stay stable.
inline Image snow_image(const Image& img, const ImageCorruptionSpec& spec) {
  detail::require_image_kind(spec, WeatherKind::snow);
  if (spec.snow_density < 0 || spec.snow_density > 1) {
    throw DataError("snow density must lie in [0, 1]");
  }
  Image out = img;
  const long long n_flakes = std::llround(
      spec.snow_density * double(img.width) * double(img.height));

  const CounterRng rng(spec.seed, std::uint64_t(spec.kind));
  for (long long f = 0; f < n_flakes; ++f) {
    const std::uint64_t c = 4 * std::uint64_t(f);
    const double cx = rng.uniform(c) * img.width;
    const double cy = rng.uniform(c + 1) * img.height;
    const double rad =
        rng.uniform(c + 2, spec.flake_min_radius, spec.flake_max_radius);
    const int x_lo = std::max(0, int(std::floor(cx - rad - 1)));
    const int x_hi = std::min(img.width - 1, int(std::ceil(cx + rad + 1)));
    const int y_lo = std::max(0, int(std::floor(cy - rad - 1)));
    const int y_hi = std::min(img.height - 1, int(std::ceil(cy + rad + 1)));
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
        if (ddx * ddx + ddy * ddy <= rad * rad) {
          out.at(x, y, 0) = out.at(x, y, 1) = out.at(x, y, 2) = 255;
        }
      }
    }
  }
  for (auto& v : out.data) {
    v = detail::clamp_u8(std::llround(spec.brightness_scale * v));
  }
  for (auto& v : out.data) {
    v = detail::gray_blend(v, spec.snow_mask_opacity);
  }
  return out;
}

namespace detail {

// Flare with an explicit center: saturated disc of radius r, then an
// exponential skirt out to 3r blended additively.
inline Image sunlight_at(const Image& img, const ImageCorruptionSpec& spec,
                         double cx, double cy) {
  const double r = spec.sun_radius;
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d <= r) {
        out.at(x, y, 0) = out.at(x, y, 1) = out.at(x, y, 2) = 255;
      } else if (d <= 3 * r) {
        const double add = 255.0 * std::exp(-(d - r) / r);
        for (int c = 0; c < 3; ++c) {
          out.at(x, y, c) = clamp_u8(
              std::llround(img.at(x, y, c) + spec.sun_blend * add));
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// Sunlight: sun center drawn uniformly over the top third of the image.
inline Image sunlight_image(const Image& img,
                            const ImageCorruptionSpec& spec) {
  detail::require_image_kind(spec, WeatherKind::sunlight);
  if (!(spec.sun_radius > 0)) throw DataError("sun radius must be positive");
  const CounterRng rng(spec.seed, std::uint64_t(spec.kind));
  const double cx = rng.uniform(0) * img.width;
  const double cy = rng.uniform(1) * (img.height / 3.0);
  return detail::sunlight_at(img, spec, cx, cy);
}

// Standard-severity dispatch, bitwise deterministic in (img, kind,
// severity, seed).
inline Image corrupt_image(const Image& img, WeatherKind kind,
                           Severity severity, std::uint64_t seed) {
  const ImageCorruptionSpec spec = standard_image_spec(kind, severity, seed);
  switch (kind) {
    case WeatherKind::fog: return fog_image(img, spec);
    case WeatherKind::rain: return rain_image(img, spec);
    case WeatherKind::snow: return snow_image(img, spec);
    default: return sunlight_image(img, spec);
  }
}

}  // namespace wxbench
