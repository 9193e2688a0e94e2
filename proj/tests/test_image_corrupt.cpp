// SPDX-License-Identifier: MIT
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "support.hpp"
#include "wxbench/image_corrupt.hpp"

using namespace wxbench;

namespace {

Image gradient_image(int w, int h) {
  Image img;
  img.width = w;
  img.height = h;
  img.data.resize(std::size_t(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = std::uint8_t((40 * x + 10 * y + 20 * c) % 256);
      }
    }
  }
  return img;
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
      }
    }
  }
  return out;
}

double mean_value(const Image& img) {
  double s = 0;
  for (auto v : img.data) s += v;
  return s / double(img.data.size());
}

}  // namespace

TEST_CASE("standard image specs carry the published parameters",
          "[image_corrupt]") {
  CHECK(standard_image_spec(WeatherKind::fog, Severity::low, 0).fog_opacity ==
        0.10);
  CHECK(standard_image_spec(WeatherKind::fog, Severity::high, 0).fog_opacity ==
        0.50);
  CHECK(standard_image_spec(WeatherKind::rain, Severity::low, 0)
            .rain_density == 0.01);
  CHECK(standard_image_spec(WeatherKind::rain, Severity::high, 0)
            .rain_density == 0.20);
  CHECK(standard_image_spec(WeatherKind::snow, Severity::low, 0)
            .snow_density == 0.002);
  CHECK(standard_image_spec(WeatherKind::snow, Severity::high, 0)
            .snow_density == 0.01);
  CHECK(standard_image_spec(WeatherKind::sunlight, Severity::low, 0)
            .sun_radius == 30);
  CHECK(standard_image_spec(WeatherKind::sunlight, Severity::high, 0)
            .sun_radius == 70);
  const auto snow = standard_image_spec(WeatherKind::snow, Severity::low, 0);
  CHECK(snow.snow_mask_opacity == 0.30);
  CHECK(snow.brightness_scale == 0.70);
}

TEST_CASE("image kind mismatch is rejected", "[image_corrupt]") {
  const Image img = gradient_image(6, 4);
  const auto fog = standard_image_spec(WeatherKind::fog, Severity::low, 1);
  const auto rain = standard_image_spec(WeatherKind::rain, Severity::low, 1);
  const auto snow = standard_image_spec(WeatherKind::snow, Severity::low, 1);
  const auto sun =
      standard_image_spec(WeatherKind::sunlight, Severity::low, 1);
  CHECK_THROWS_AS(fog_image(img, rain), WrongKind);
  CHECK_THROWS_AS(rain_image(img, snow), WrongKind);
  CHECK_THROWS_AS(snow_image(img, sun), WrongKind);
  CHECK_THROWS_AS(sunlight_image(img, fog), WrongKind);
}

TEST_CASE("fog blend hits the hand-computed values", "[image_corrupt]") {
  auto spec = standard_image_spec(WeatherKind::fog, Severity::high, 7);

  SECTION("zero opacity is the identity") {
    spec.fog_opacity = 0;
    const Image img = gradient_image(8, 5);
    CHECK(fog_image(img, spec) == img);
  }
  SECTION("full opacity is uniform mid-gray") {
    spec.fog_opacity = 1.0;
    const Image out = fog_image(gradient_image(8, 5), spec);
    for (auto v : out.data) CHECK(v == 128);
  }
  SECTION("half opacity with the haze field off") {
    spec.fog_opacity = 0.5;
    spec.haze_amplitude = 0;
    const Image blended = fog_image(Image::filled(6, 4, 200, 200, 200), spec);
    for (auto v : blended.data) CHECK(v == 164);  // round(0.5*200 + 0.5*128)
  }
}

TEST_CASE("haze keeps the local opacity within its band",
          "[image_corrupt]") {
  auto spec = standard_image_spec(WeatherKind::fog, Severity::high, 11);
  const Image in = Image::filled(64, 32, 200, 200, 200);
  const Image out = fog_image(in, spec);
  // o_eff in [0.45, 0.55]: blend of 200 lands in [160, 168].
  int lo_seen = 255, hi_seen = 0;
  for (auto v : out.data) {
    CHECK(v >= 160);
    CHECK(v <= 168);
    lo_seen = std::min(lo_seen, int(v));
    hi_seen = std::max(hi_seen, int(v));
  }
  CHECK(lo_seen < hi_seen);  // the field actually varies
}

TEST_CASE("per-pixel fog commutes with horizontal flip", "[image_corrupt]") {
  auto spec = standard_image_spec(WeatherKind::fog, Severity::high, 13);
  spec.haze_amplitude = 0;
  const Image img = gradient_image(9, 6);
  CHECK(fog_image(flip_horizontal(img), spec) ==
        flip_horizontal(fog_image(img, spec)));
}

TEST_CASE("rain streaks only ever brighten", "[image_corrupt]") {
  const Image img = Image::filled(100, 60, 100, 100, 100);
  const auto spec = standard_image_spec(WeatherKind::rain, Severity::high, 3);
  const Image out = rain_image(img, spec);
  REQUIRE(out.width == img.width);
  REQUIRE(out.height == img.height);
  CHECK(mean_value(out) > mean_value(img));
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    CHECK(out.data[i] >= img.data[i]);
  }
  // Streak pixels after one blend: round(0.5*100 + 0.5*140) = 120.
  std::set<int> values(out.data.begin(), out.data.end());
  CHECK(values.count(120) == 1);
}

TEST_CASE("zero rain density is the identity", "[image_corrupt]") {
  auto spec = standard_image_spec(WeatherKind::rain, Severity::low, 3);
  spec.rain_density = 0;
  const Image img = gradient_image(12, 9);
  CHECK(rain_image(img, spec) == img);
}

TEST_CASE("saturated images are a rain fixed point", "[image_corrupt]") {
  const Image img = Image::filled(40, 30, 255, 255, 255);
  const auto spec = standard_image_spec(WeatherKind::rain, Severity::high, 5);
  CHECK(rain_image(img, spec) == img);
}

TEST_CASE("snow pipeline matches the hand-computed pixel chain",
          "[image_corrupt]") {
  // Flakeless: 200 -> x0.70 = 140 -> gray mask 0.30 = round(98 + 38.4) = 136.
  auto spec = standard_image_spec(WeatherKind::snow, Severity::low, 9);
  spec.snow_density = 0;
  const Image out = snow_image(Image::filled(5, 5, 200, 200, 200), spec);
  for (auto v : out.data) CHECK(v == 136);

  // All three stages disabled: identity.
  spec.brightness_scale = 1.0;
  spec.snow_mask_opacity = 0;
  const Image img = gradient_image(7, 5);
  CHECK(snow_image(img, spec) == img);
}

TEST_CASE("snow flakes stay the brightest pixels", "[image_corrupt]") {
  // One flake on a uniform 50 image: flake pixels 255 -> 179 -> 164, the
  // rest 50 -> 35 -> 63.
  auto spec = standard_image_spec(WeatherKind::snow, Severity::low, 21);
  spec.snow_density = 1.0 / 400.0;
  const Image out = snow_image(Image::filled(20, 20, 50, 50, 50), spec);
  std::size_t flake = 0, ground = 0;
  for (auto v : out.data) {
    if (v == 164) {
      flake += 1;
    } else {
      CHECK(v == 63);
      ground += 1;
    }
  }
  CHECK(flake >= 3);         // a radius-1 disc covers at least one pixel
  CHECK(flake <= 17 * 3);    // radius-2 disc upper bound
  CHECK(flake + ground == out.data.size());
}

TEST_CASE("sun flare hand values at the ring boundary", "[image_corrupt]") {
  auto spec = standard_image_spec(WeatherKind::sunlight, Severity::low, 2);
  spec.sun_radius = 10;
  const Image img = Image::filled(40, 4, 100, 100, 100);
  // Center on the (0,0) pixel center: distances are exactly x offsets.
  const Image out = detail::sunlight_at(img, spec, 0.5, 0.5);
  CHECK(out.at(5, 0, 0) == 255);   // d = 5 <= R
  CHECK(out.at(10, 0, 0) == 255);  // d = 10 = R, disc edge inclusive
  // d = 3R exactly: add = 255 exp(-2) = 34.51, blended 0.8 -> +27.6.
  CHECK(out.at(30, 0, 0) == 128);
  // d just past 3R: unchanged.
  CHECK(out.at(31, 0, 0) == 100);
  CHECK(out.at(39, 3, 0) == 100);
}

TEST_CASE("a sun radius covering the frame saturates it",
          "[image_corrupt]") {
  const Image img = gradient_image(4, 4);
  for (auto sev : {Severity::low, Severity::high}) {
    const Image out = corrupt_image(img, WeatherKind::sunlight, sev, 77);
    for (auto v : out.data) CHECK(v == 255);
  }
}

TEST_CASE("the sun rises in the top third", "[image_corrupt]") {
  const Image img = Image::filled(300, 150, 20, 20, 20);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto spec =
        standard_image_spec(WeatherKind::sunlight, Severity::low, seed);
    const Image out = sunlight_image(img, spec);
    // Saturated pixels exist and all sit above H/3 + R.
    bool any = false;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (out.at(x, y, 0) == 255) {
          any = true;
          CHECK(y <= 150 / 3 + 30 + 1);
        }
      }
    }
    CHECK(any);
  }
}

TEST_CASE("image corruption is bitwise deterministic", "[image_corrupt]") {
  const Image img = gradient_image(50, 40);
  for (auto kind : {WeatherKind::fog, WeatherKind::rain, WeatherKind::snow,
                    WeatherKind::sunlight}) {
    for (auto sev : {Severity::low, Severity::high}) {
      const Image a = corrupt_image(img, kind, sev, 4242);
      const Image b = corrupt_image(img, kind, sev, 4242);
      CHECK(a == b);
      CHECK(a.width == img.width);
      CHECK(a.height == img.height);
    }
  }
}

TEST_CASE("corrupted goldens match byte for byte", "[image_corrupt]") {
  const auto dir = std::filesystem::path(WXBENCH_TEST_DATA_DIR);
  const Image base = read_image(dir / "base_4x4.ppm");
  CHECK(base == gradient_image(4, 4));
  for (auto kind : {WeatherKind::fog, WeatherKind::rain, WeatherKind::snow,
                    WeatherKind::sunlight}) {
    for (auto sev : {Severity::low, Severity::high}) {
      const auto name = std::string("golden_") + to_string(kind) + "_" +
                        to_string(sev) + ".ppm";
      const Image want = read_image(dir / name);
      const Image got = corrupt_image(base, kind, sev, 42);
      INFO(name);
      CHECK(got == want);
      CHECK(encode_ppm(got) == encode_ppm(want));
    }
  }
}

TEST_CASE("out-of-range image parameters are rejected", "[image_corrupt]") {
  const Image img = gradient_image(4, 4);
  auto fog = standard_image_spec(WeatherKind::fog, Severity::low, 0);
  fog.fog_opacity = 1.5;
  CHECK_THROWS_AS(fog_image(img, fog), DataError);
  auto rain = standard_image_spec(WeatherKind::rain, Severity::low, 0);
  rain.rain_density = -0.2;
  CHECK_THROWS_AS(rain_image(img, rain), DataError);
  auto sun = standard_image_spec(WeatherKind::sunlight, Severity::low, 0);
  sun.sun_radius = 0;
  CHECK_THROWS_AS(sunlight_image(img, sun), DataError);
}
