// SPDX-License-Identifier: MIT
//
// Dataset-level orchestration behind the CLI: corrupting KITTI trees
// under a reproducibility manifest, evaluating detections to CSV,
// relative-corruption-error tables with plot output, and the fusion demo
// report.
//
// Reproducibility contract: a manifest pins the resolved per-branch
// corruption parameters plus the global seed, per-frame seeds derive as
// mix64(global_seed, frame_index), and replaying a manifest must
// reproduce the recorded content digest byte for byte.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wxbench/errors.hpp"
#include "wxbench/fusion.hpp"
#include "wxbench/image.hpp"
#include "wxbench/image_corrupt.hpp"
#include "wxbench/kitti_io.hpp"
#include "wxbench/metrics.hpp"
#include "wxbench/rng.hpp"
#include "wxbench/version.hpp"
#include "wxbench/weather_sim.hpp"

namespace wxbench {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kSeedRule = "mix64(global_seed, frame_index)";
inline constexpr const char* kManifestFileName = "manifest.json";

enum class BranchMode { both, lidar_only, camera_only };

inline const char* to_string(BranchMode m) {
  switch (m) {
    case BranchMode::both: return "both";
    case BranchMode::lidar_only: return "lidar";
    default: return "camera";
  }
}

inline BranchMode branch_mode_from_string(const std::string& s) {
  if (s == "both") return BranchMode::both;
  if (s == "lidar") return BranchMode::lidar_only;
  if (s == "camera") return BranchMode::camera_only;
  throw DataError("unknown branch mode: " + s);
}

inline WeatherKind weather_kind_from_string(const std::string& s) {
  if (s == "fog") return WeatherKind::fog;
  if (s == "rain") return WeatherKind::rain;
  if (s == "snow") return WeatherKind::snow;
  if (s == "sunlight") return WeatherKind::sunlight;
  throw DataError("unknown weather kind: " + s);
}

inline Severity severity_from_string(const std::string& s) {
  if (s == "low") return Severity::low;
  if (s == "high") return Severity::high;
  throw DataError("unknown severity: " + s);
}

inline Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "moderate") return Difficulty::moderate;
  if (s == "hard") return Difficulty::hard;
  throw DataError("unknown difficulty: " + s);
}

// ----------------------------------------------------- digest & seeds --

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

inline std::uint64_t fnv1a64(std::uint64_t h, const void* data,
                             std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

// Decimal stems map to their numeric value ("000123" -> 123); anything
// else hashes, so seeds stay stable under any naming scheme.
inline std::uint64_t frame_index_of(const std::string& stem) {
  const bool numeric =
      !stem.empty() && stem.size() <= 19 &&
      std::all_of(stem.begin(), stem.end(),
                  [](unsigned char c) { return c >= '0' && c <= '9'; });
  if (numeric) return std::stoull(stem);
  return fnv1a64(kFnvOffset, stem.data(), stem.size());
}

inline std::uint64_t frame_seed(std::uint64_t global_seed,
                                const std::string& stem) {
  return mix64(global_seed, frame_index_of(stem));
}

namespace detail {

inline std::vector<std::uint8_t> read_file_blob(
    const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + p.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_blob(const std::filesystem::path& p,
                            std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + p.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) throw IoFailure("short write to " + p.string());
}

}  // namespace detail

// FNV-1a over the sorted relative paths and contents of every regular
// file under root; the top-level manifest file is excluded so the digest
// can be recorded inside it.
inline std::string content_digest(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root);
    if (rel == fs::path(kManifestFileName)) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.generic_string() < b.generic_string();
            });
  std::uint64_t h = kFnvOffset;
  for (const fs::path& rel : files) {
    const std::string name = rel.generic_string();
    h = fnv1a64(h, name.data(), name.size());
    h = fnv1a64(h, "\0", 1);
    const auto bytes = detail::read_file_blob(root / rel);
    const std::uint64_t size = bytes.size();
    h = fnv1a64(h, &size, sizeof size);
    h = fnv1a64(h, bytes.data(), bytes.size());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

// --------------------------------------------- spec JSON serialization --

namespace detail {

inline double json_num(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad or missing field '") + key +
                    "': " + e.what());
  }
}

inline std::uint64_t json_u64(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad or missing field '") + key +
                    "': " + e.what());
  }
}

inline std::string json_str(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad or missing field '") + key +
                    "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json spec_to_json(const CorruptionSpec& s) {
  return nlohmann::json{{"kind", to_string(s.kind)},
                        {"severity", to_string(s.severity)},
                        {"alpha", s.alpha},
                        {"rate", s.rate},
                        {"noise_ratio", s.noise_ratio},
                        {"noise_sigma", s.noise_sigma},
                        {"intensity_floor", s.intensity_floor},
                        {"fog_scatter_probability", s.fog_scatter_probability},
                        {"fog_scatter_cap", s.fog_scatter_cap},
                        {"fog_scatter_floor", s.fog_scatter_floor},
                        {"precip_k", s.precip_k},
                        {"precip_e", s.precip_e},
                        {"precip_beta", s.precip_beta},
                        {"precip_scatter_floor", s.precip_scatter_floor},
                        {"backscatter_cap", s.backscatter_cap},
                        {"seed", s.seed}};
}

inline CorruptionSpec spec_from_json(const nlohmann::json& j) {
  CorruptionSpec s;
  s.kind = weather_kind_from_string(detail::json_str(j, "kind"));
  s.severity = severity_from_string(detail::json_str(j, "severity"));
  s.alpha = detail::json_num(j, "alpha");
  s.rate = detail::json_num(j, "rate");
  s.noise_ratio = detail::json_num(j, "noise_ratio");
  s.noise_sigma = detail::json_num(j, "noise_sigma");
  s.intensity_floor = detail::json_num(j, "intensity_floor");
  s.fog_scatter_probability = detail::json_num(j, "fog_scatter_probability");
  s.fog_scatter_cap = detail::json_num(j, "fog_scatter_cap");
  s.fog_scatter_floor = detail::json_num(j, "fog_scatter_floor");
  s.precip_k = detail::json_num(j, "precip_k");
  s.precip_e = detail::json_num(j, "precip_e");
  s.precip_beta = detail::json_num(j, "precip_beta");
  s.precip_scatter_floor = detail::json_num(j, "precip_scatter_floor");
  s.backscatter_cap = detail::json_num(j, "backscatter_cap");
  s.seed = detail::json_u64(j, "seed");
  return s;
}

inline nlohmann::json image_spec_to_json(const ImageCorruptionSpec& s) {
  return nlohmann::json{{"kind", to_string(s.kind)},
                        {"severity", to_string(s.severity)},
                        {"fog_opacity", s.fog_opacity},
                        {"haze_amplitude", s.haze_amplitude},
                        {"rain_density", s.rain_density},
                        {"rain_alpha", s.rain_alpha},
                        {"rain_boost", s.rain_boost},
                        {"streak_min_len", s.streak_min_len},
                        {"streak_max_len", s.streak_max_len},
                        {"streak_min_angle", s.streak_min_angle},
                        {"streak_max_angle", s.streak_max_angle},
                        {"snow_density", s.snow_density},
                        {"snow_mask_opacity", s.snow_mask_opacity},
                        {"brightness_scale", s.brightness_scale},
                        {"flake_min_radius", s.flake_min_radius},
                        {"flake_max_radius", s.flake_max_radius},
                        {"sun_radius", s.sun_radius},
                        {"sun_blend", s.sun_blend},
                        {"seed", s.seed}};
}

inline ImageCorruptionSpec image_spec_from_json(const nlohmann::json& j) {
  ImageCorruptionSpec s;
  s.kind = weather_kind_from_string(detail::json_str(j, "kind"));
  s.severity = severity_from_string(detail::json_str(j, "severity"));
  s.fog_opacity = detail::json_num(j, "fog_opacity");
  s.haze_amplitude = detail::json_num(j, "haze_amplitude");
  s.rain_density = detail::json_num(j, "rain_density");
  s.rain_alpha = detail::json_num(j, "rain_alpha");
  s.rain_boost = int(detail::json_num(j, "rain_boost"));
  s.streak_min_len = detail::json_num(j, "streak_min_len");
  s.streak_max_len = detail::json_num(j, "streak_max_len");
  s.streak_min_angle = detail::json_num(j, "streak_min_angle");
  s.streak_max_angle = detail::json_num(j, "streak_max_angle");
  s.snow_density = detail::json_num(j, "snow_density");
  s.snow_mask_opacity = detail::json_num(j, "snow_mask_opacity");
  s.brightness_scale = detail::json_num(j, "brightness_scale");
  s.flake_min_radius = detail::json_num(j, "flake_min_radius");
  s.flake_max_radius = detail::json_num(j, "flake_max_radius");
  s.sun_radius = detail::json_num(j, "sun_radius");
  s.sun_blend = detail::json_num(j, "sun_blend");
  s.seed = detail::json_u64(j, "seed");
  return s;
}

// Spec-level dispatch (the kind/severity dispatcher in weather_sim always
// re-derives standard parameters; replay and --raw-params need the exact
// recorded spec).
inline std::pair<PointCloud, CorruptionReport> corrupt_cloud(
    const PointCloud& pc, const CorruptionSpec& spec) {
  switch (spec.kind) {
    case WeatherKind::fog: return corrupt_fog(pc, spec);
    case WeatherKind::rain:
    case WeatherKind::snow: return corrupt_precip(pc, spec);
    default: return corrupt_sunlight(pc, spec);
  }
}

inline Image corrupt_image_with(const Image& img,
                                const ImageCorruptionSpec& spec) {
  switch (spec.kind) {
    case WeatherKind::fog: return fog_image(img, spec);
    case WeatherKind::rain: return rain_image(img, spec);
    case WeatherKind::snow: return snow_image(img, spec);
    default: return sunlight_image(img, spec);
  }
}

// --------------------------------------------------------- manifest --

struct RunManifest {
  int schema_version = kManifestSchemaVersion;
  std::string tool_version = version();
  std::string command = "corrupt";
  std::uint64_t global_seed = 0;
  std::string seed_rule = kSeedRule;
  BranchMode branch_mode = BranchMode::both;
  WeatherKind kind = WeatherKind::fog;
  Severity severity = Severity::low;
  CorruptionSpec lidar_spec;    // resolved; seed field = global seed
  ImageCorruptionSpec camera_spec;
  bool raw_params = false;
  std::string input_dir;
  std::string output_dir;
  int frame_count = 0;
  std::string content_digest;
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  return nlohmann::json{{"schema_version", m.schema_version},
                        {"tool_version", m.tool_version},
                        {"command", m.command},
                        {"global_seed", m.global_seed},
                        {"seed_rule", m.seed_rule},
                        {"branch_mode", to_string(m.branch_mode)},
                        {"kind", to_string(m.kind)},
                        {"severity", to_string(m.severity)},
                        {"lidar_spec", spec_to_json(m.lidar_spec)},
                        {"camera_spec", image_spec_to_json(m.camera_spec)},
                        {"raw_params", m.raw_params},
                        {"input_dir", m.input_dir},
                        {"output_dir", m.output_dir},
                        {"frame_count", m.frame_count},
                        {"content_digest", m.content_digest}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion) {
      throw DataError("unsupported manifest schema version " +
                      std::to_string(m.schema_version));
    }
    m.tool_version = detail::json_str(j, "tool_version");
    m.command = detail::json_str(j, "command");
    m.global_seed = detail::json_u64(j, "global_seed");
    m.seed_rule = detail::json_str(j, "seed_rule");
    m.branch_mode = branch_mode_from_string(detail::json_str(j, "branch_mode"));
    m.kind = weather_kind_from_string(detail::json_str(j, "kind"));
    m.severity = severity_from_string(detail::json_str(j, "severity"));
    m.lidar_spec = spec_from_json(j.at("lidar_spec"));
    m.camera_spec = image_spec_from_json(j.at("camera_spec"));
    m.raw_params = j.at("raw_params").get<bool>();
    m.input_dir = detail::json_str(j, "input_dir");
    m.output_dir = detail::json_str(j, "output_dir");
    m.frame_count = j.at("frame_count").get<int>();
    m.content_digest = detail::json_str(j, "content_digest");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

inline void write_manifest(const RunManifest& m,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw IoFailure("short write to " + path.string());
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest JSON: ") + e.what());
  }
  return manifest_from_json(j);
}

// ------------------------------------------------------ cmd: corrupt --

struct CorruptOptions {
  WeatherKind kind = WeatherKind::fog;
  Severity severity = Severity::low;
  BranchMode branch_mode = BranchMode::both;
  std::uint64_t seed = 0;
  int jobs = 1;
  // field-name -> value overrides per branch: {"lidar": {...}, "camera":
  // {...}}; recorded in the manifest via the resolved specs
  std::optional<nlohmann::json> raw_params;
};

namespace detail {

inline void apply_spec_overrides(CorruptionSpec& s, const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    double* field = nullptr;
    if (key == "alpha") field = &s.alpha;
    else if (key == "rate") field = &s.rate;
    else if (key == "noise_ratio") field = &s.noise_ratio;
    else if (key == "noise_sigma") field = &s.noise_sigma;
    else if (key == "intensity_floor") field = &s.intensity_floor;
    else if (key == "fog_scatter_probability")
      field = &s.fog_scatter_probability;
    else if (key == "fog_scatter_cap") field = &s.fog_scatter_cap;
    else if (key == "fog_scatter_floor") field = &s.fog_scatter_floor;
    else if (key == "precip_k") field = &s.precip_k;
    else if (key == "precip_e") field = &s.precip_e;
    else if (key == "precip_beta") field = &s.precip_beta;
    else if (key == "precip_scatter_floor") field = &s.precip_scatter_floor;
    else if (key == "backscatter_cap") field = &s.backscatter_cap;
    else throw DataError("unknown lidar raw parameter: " + key);
    if (!value.is_number()) {
      throw DataError("raw parameter " + key + " must be numeric");
    }
    *field = value.get<double>();
  }
}

inline void apply_image_spec_overrides(ImageCorruptionSpec& s,
                                       const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    if (key == "rain_boost") {
      if (!value.is_number()) {
        throw DataError("raw parameter rain_boost must be numeric");
      }
      s.rain_boost = value.get<int>();
      continue;
    }
    double* field = nullptr;
    if (key == "fog_opacity") field = &s.fog_opacity;
    else if (key == "haze_amplitude") field = &s.haze_amplitude;
    else if (key == "rain_density") field = &s.rain_density;
    else if (key == "rain_alpha") field = &s.rain_alpha;
    else if (key == "streak_min_len") field = &s.streak_min_len;
    else if (key == "streak_max_len") field = &s.streak_max_len;
    else if (key == "streak_min_angle") field = &s.streak_min_angle;
    else if (key == "streak_max_angle") field = &s.streak_max_angle;
    else if (key == "snow_density") field = &s.snow_density;
    else if (key == "snow_mask_opacity") field = &s.snow_mask_opacity;
    else if (key == "brightness_scale") field = &s.brightness_scale;
    else if (key == "flake_min_radius") field = &s.flake_min_radius;
    else if (key == "flake_max_radius") field = &s.flake_max_radius;
    else if (key == "sun_radius") field = &s.sun_radius;
    else if (key == "sun_blend") field = &s.sun_blend;
    else throw DataError("unknown camera raw parameter: " + key);
    if (!value.is_number()) {
      throw DataError("raw parameter " + key + " must be numeric");
    }
    *field = value.get<double>();
  }
}

struct FrameTask {
  enum class Kind { lidar, camera } kind;
  std::filesystem::path in_path;
  std::filesystem::path out_path;
  std::string stem;
};

// Runs one task; `active` says whether this branch is corrupted or
// copied through byte-identically.
inline void run_frame_task(const FrameTask& t, const RunManifest& m,
                           bool active) {
  if (!active) {
    write_file_blob(t.out_path, read_file_blob(t.in_path));
    return;
  }
  if (t.kind == FrameTask::Kind::lidar) {
    const PointCloud pc = read_point_cloud(t.in_path);
    CorruptionSpec spec = m.lidar_spec;
    spec.seed = frame_seed(m.global_seed, t.stem);
    write_point_cloud(corrupt_cloud(pc, spec).first, t.out_path);
  } else {
    const Image img = read_image(t.in_path);
    ImageCorruptionSpec spec = m.camera_spec;
    spec.seed = frame_seed(m.global_seed, t.stem);
    write_image(t.out_path, corrupt_image_with(img, spec));
  }
}

inline std::vector<std::filesystem::path> sorted_files(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// The shared corrupt runner; `m` arrives with everything but frame_count
// and content_digest resolved. Any failure mid-write removes the whole
// output tree before surfacing as PartialWrite.
inline RunManifest run_corrupt(const std::filesystem::path& in_dir,
                               const std::filesystem::path& out_dir,
                               RunManifest m, int jobs) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(in_dir)) {
    throw DataError("input directory does not exist: " + in_dir.string());
  }
  for (const char* sub : {"velodyne", "image_2"}) {
    if (!fs::is_directory(in_dir / sub)) {
      throw MissingSubtree("input is missing required subtree " +
                           std::string(sub) + "/");
    }
  }
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    throw DataError("output directory exists and is not empty: " +
                    out_dir.string());
  }
  m.input_dir = in_dir.string();
  m.output_dir = out_dir.string();

  fs::create_directories(out_dir);
  try {
    const bool lidar_active = m.branch_mode != BranchMode::camera_only;
    const bool camera_active = m.branch_mode != BranchMode::lidar_only;

    std::vector<FrameTask> tasks;
    std::vector<std::string> stems;
    fs::create_directories(out_dir / "velodyne");
    for (const fs::path& p : sorted_files(in_dir / "velodyne")) {
      tasks.push_back(FrameTask{FrameTask::Kind::lidar, p,
                                out_dir / "velodyne" / p.filename(),
                                p.stem().string()});
      stems.push_back(p.stem().string());
    }
    fs::create_directories(out_dir / "image_2");
    for (const fs::path& p : sorted_files(in_dir / "image_2")) {
      tasks.push_back(FrameTask{FrameTask::Kind::camera, p,
                                out_dir / "image_2" / p.filename(),
                                p.stem().string()});
      stems.push_back(p.stem().string());
    }
    std::sort(stems.begin(), stems.end());
    stems.erase(std::unique(stems.begin(), stems.end()), stems.end());
    m.frame_count = int(stems.size());

    const auto active_for = [&](const FrameTask& t) {
      return t.kind == FrameTask::Kind::lidar ? lidar_active : camera_active;
    };
    const int n_workers =
        std::clamp(jobs, 1, int(std::max<std::size_t>(tasks.size(), 1)));
    if (n_workers <= 1) {
      for (const FrameTask& t : tasks) run_frame_task(t, m, active_for(t));
    } else {
      std::atomic<std::size_t> next{0};
      std::mutex err_mutex;
      std::exception_ptr first_error;
      const auto worker = [&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          try {
            run_frame_task(tasks[i], m, active_for(tasks[i]));
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) first_error = std::current_exception();
            next.store(tasks.size());
            return;
          }
        }
      };
      std::vector<std::thread> pool;
      for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
      if (first_error) std::rethrow_exception(first_error);
    }

    // labels and calib pass through unmodified
    for (const char* sub : {"label_2", "calib"}) {
      if (!fs::is_directory(in_dir / sub)) continue;
      fs::create_directories(out_dir / sub);
      for (const fs::path& p : sorted_files(in_dir / sub)) {
        write_file_blob(out_dir / sub / p.filename(), read_file_blob(p));
      }
    }

    m.content_digest = content_digest(out_dir);
    write_manifest(m, out_dir / kManifestFileName);
    return m;
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::remove_all(out_dir, ec);
    throw PartialWrite(std::string("corrupt aborted, output removed: ") +
                       e.what());
  }
}

}  // namespace detail

inline RunManifest cmd_corrupt(const std::filesystem::path& in_dir,
                               const std::filesystem::path& out_dir,
                               const CorruptOptions& opts) {
  RunManifest m;
  m.command = "corrupt";
  m.global_seed = opts.seed;
  m.branch_mode = opts.branch_mode;
  m.kind = opts.kind;
  m.severity = opts.severity;
  m.lidar_spec = standard_spec(opts.kind, opts.severity, opts.seed);
  m.camera_spec = standard_image_spec(opts.kind, opts.severity, opts.seed);
  if (opts.raw_params) {
    m.raw_params = true;
    if (!opts.raw_params->is_object()) {
      throw DataError("raw params must be a JSON object");
    }
    for (const auto& [key, value] : opts.raw_params->items()) {
      if (key == "lidar") {
        detail::apply_spec_overrides(m.lidar_spec, value);
      } else if (key == "camera") {
        detail::apply_image_spec_overrides(m.camera_spec, value);
      } else {
        throw DataError("raw params keys must be 'lidar' or 'camera', got " +
                        key);
      }
    }
  }
  return detail::run_corrupt(in_dir, out_dir, m, opts.jobs);
}

// Re-runs a recorded manifest against its input tree and verifies the
// digest; a mismatch means the inputs or the tool changed.
inline RunManifest cmd_replay(const RunManifest& recorded,
                              const std::filesystem::path& out_dir,
                              int jobs = 1) {
  RunManifest fresh = recorded;
  fresh.frame_count = 0;
  fresh.content_digest.clear();
  fresh = detail::run_corrupt(recorded.input_dir, out_dir, fresh, jobs);
  if (fresh.content_digest != recorded.content_digest) {
    throw DataError("replay digest mismatch: recorded " +
                    recorded.content_digest + ", got " +
                    fresh.content_digest);
  }
  return fresh;
}

// ----------------------------------------------------- cmd: evaluate --

struct EvalOptions {
  std::string class_name = "Car";
  std::vector<Difficulty> difficulties = {Difficulty::easy,
                                          Difficulty::moderate,
                                          Difficulty::hard};
  double iou_3d = 0.7;
  double iou_bev = 0.7;
};

struct EvalRow {
  std::string metric;  // "ap_3d" | "ap_bev"
  Difficulty difficulty = Difficulty::easy;
  double iou_threshold = 0;
  double ap = 0;
  int n_gt = 0;
};

struct EvalCurve {
  std::string metric;
  Difficulty difficulty = Difficulty::easy;
  std::array<PrPoint, 41> points{};
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalCurve> curves;
  int frame_count = 0;
};

namespace detail {

inline std::vector<std::string> stems_with_extension(
    const std::filesystem::path& dir, const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) {
      out.push_back(e.path().stem().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// gt_dir is a KITTI root (label_2/ + calib/); det_dir holds result label
// files named by frame stem. A missing det file means no detections for
// that frame; a det stem absent from the ground truth is an alignment
// error.
inline std::vector<EvalFrame> load_eval_frames(
    const std::filesystem::path& gt_dir,
    const std::filesystem::path& det_dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"label_2", "calib"}) {
    if (!fs::is_directory(gt_dir / sub)) {
      throw MissingSubtree("ground truth is missing subtree " +
                           std::string(sub) + "/");
    }
  }
  if (!fs::is_directory(det_dir)) {
    throw DataError("detection directory does not exist: " +
                    det_dir.string());
  }
  const auto gt_stems = detail::stems_with_extension(gt_dir / "label_2",
                                                     ".txt");
  const auto det_stems = detail::stems_with_extension(det_dir, ".txt");
  for (const std::string& s : det_stems) {
    if (!std::binary_search(gt_stems.begin(), gt_stems.end(), s)) {
      throw MismatchedFrames("detection frame " + s +
                             " has no ground-truth counterpart");
    }
  }
  std::vector<EvalFrame> frames;
  frames.reserve(gt_stems.size());
  for (const std::string& s : gt_stems) {
    const fs::path calib_path = gt_dir / "calib" / (s + ".txt");
    if (!fs::is_regular_file(calib_path)) {
      throw MismatchedFrames("frame " + s + " has labels but no calib");
    }
    const auto gts = read_labels(gt_dir / "label_2" / (s + ".txt"));
    const fs::path det_path = det_dir / (s + ".txt");
    const std::vector<ObjectLabel> dets =
        fs::is_regular_file(det_path) ? read_labels(det_path)
                                      : std::vector<ObjectLabel>{};
    frames.push_back(make_eval_frame(gts, dets, read_calib(calib_path)));
  }
  return frames;
}

inline EvalReport evaluate_frames(std::span<const EvalFrame> frames,
                                   const EvalOptions& opts) {
  EvalReport out;
  out.frame_count = int(frames.size());
  const std::pair<const char*, IouKind> metrics[] = {
      {"ap_3d", IouKind::box3d}, {"ap_bev", IouKind::bev}};
  for (const auto& [name, kind] : metrics) {
    const double thresh =
        kind == IouKind::box3d ? opts.iou_3d : opts.iou_bev;
    for (Difficulty d : opts.difficulties) {
      const ApResult r =
          evaluate_ap_r40(frames, opts.class_name, kind, thresh, d);
      out.rows.push_back(EvalRow{name, d, thresh, r.ap, r.n_gt});
      out.curves.push_back(EvalCurve{name, d, r.curve});
    }
  }
  return out;
}

inline EvalReport cmd_evaluate(const std::filesystem::path& gt_dir,
                                const std::filesystem::path& det_dir,
                                const EvalOptions& opts = {}) {
  const auto frames = load_eval_frames(gt_dir, det_dir);
  return evaluate_frames(frames, opts);
}

// ------------------------------------------------------- CSV helpers --

namespace detail {

inline std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_csv_num(const std::string& tok, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw MalformedLine("line " + std::to_string(line_no) +
                        ": bad number '" + tok + "'");
  }
}

}  // namespace detail

inline constexpr const char* kEvalCsvHeader =
    "metric,difficulty,iou_threshold,ap,n_gt";

inline void write_eval_summary_csv(const EvalReport& s,
                                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << kEvalCsvHeader << '\n';
  for (const EvalRow& r : s.rows) {
    out << r.metric << ',' << to_string(r.difficulty) << ','
        << detail::format_g(r.iou_threshold) << ',' << detail::format_g(r.ap)
        << ',' << r.n_gt << '\n';
  }
  if (!out) throw IoFailure("short write to " + path.string());
}

inline void write_pr_curves_csv(const EvalReport& s,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << "metric,difficulty,recall,precision\n";
  for (const EvalCurve& c : s.curves) {
    for (const PrPoint& p : c.points) {
      out << c.metric << ',' << to_string(c.difficulty) << ','
          << detail::format_g(p.recall) << ',' << detail::format_g(p.precision)
          << '\n';
    }
  }
  if (!out) throw IoFailure("short write to " + path.string());
}

inline std::vector<EvalRow> read_eval_summary_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kEvalCsvHeader) {
    throw DataError("bad evaluation CSV header in " + path.string());
  }
  std::vector<EvalRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 5) {
      throw MalformedLine("line " + std::to_string(line_no) +
                          ": expected 5 fields, got " +
                          std::to_string(f.size()));
    }
    EvalRow r;
    r.metric = f[0];
    if (r.metric != "ap_3d" && r.metric != "ap_bev") {
      throw DataError("line " + std::to_string(line_no) +
                      ": unknown metric '" + r.metric + "'");
    }
    r.difficulty = difficulty_from_string(f[1]);
    r.iou_threshold = detail::parse_csv_num(f[2], line_no);
    r.ap = detail::parse_csv_num(f[3], line_no);
    r.n_gt = int(detail::parse_csv_num(f[4], line_no));
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------- cmd: rce --

struct RceRow {
  std::string corruption;
  std::string metric;
  Difficulty difficulty = Difficulty::easy;
  double iou_threshold = 0;
  double ap_clean = 0;
  double ap_corrupt = 0;
  double rce = 0;
};

// Clean rows against each corrupt set; row keys must agree pairwise in
// order and count.
inline std::vector<RceRow> rce_table(
    const std::vector<EvalRow>& clean,
    const std::vector<std::pair<std::string, std::vector<EvalRow>>>&
        corrupt_sets) {
  std::vector<RceRow> out;
  for (const auto& [label, rows] : corrupt_sets) {
    if (rows.size() != clean.size()) {
      throw RowMismatch("corruption '" + label + "' has " +
                        std::to_string(rows.size()) + " rows, clean has " +
                        std::to_string(clean.size()));
    }
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const EvalRow& c = clean[i];
      const EvalRow& k = rows[i];
      if (c.metric != k.metric || c.difficulty != k.difficulty ||
          c.iou_threshold != k.iou_threshold) {
        throw RowMismatch("corruption '" + label + "' row " +
                          std::to_string(i) + " does not match the clean row");
      }
      RceRow r;
      r.corruption = label;
      r.metric = c.metric;
      r.difficulty = c.difficulty;
      r.iou_threshold = c.iou_threshold;
      r.ap_clean = c.ap;
      r.ap_corrupt = k.ap;
      r.rce = rce(c.ap, k.ap);
      out.push_back(r);
    }
  }
  return out;
}

inline std::vector<RceRow> cmd_rce(
    const std::filesystem::path& clean_csv,
    const std::vector<std::filesystem::path>& corrupt_csvs) {
  const auto clean = read_eval_summary_csv(clean_csv);
  std::vector<std::pair<std::string, std::vector<EvalRow>>> sets;
  for (const auto& p : corrupt_csvs) {
    sets.emplace_back(p.stem().string(), read_eval_summary_csv(p));
  }
  return rce_table(clean, sets);
}

inline constexpr const char* kRceCsvHeader =
    "corruption,metric,difficulty,iou_threshold,ap_clean,ap_corrupt,rce";

inline void write_rce_csv(std::span<const RceRow> rows,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << kRceCsvHeader << '\n';
  for (const RceRow& r : rows) {
    out << r.corruption << ',' << r.metric << ',' << to_string(r.difficulty)
        << ',' << detail::format_g(r.iou_threshold) << ','
        << detail::format_g(r.ap_clean) << ','
        << detail::format_g(r.ap_corrupt) << ',' << detail::format_g(r.rce)
        << '\n';
  }
  if (!out) throw IoFailure("short write to " + path.string());
}

inline std::vector<RceRow> read_rce_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRceCsvHeader) {
    throw DataError("bad RCE CSV header in " + path.string());
  }
  std::vector<RceRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 7) {
      throw MalformedLine("line " + std::to_string(line_no) +
                          ": expected 7 fields, got " +
                          std::to_string(f.size()));
    }
    RceRow r;
    r.corruption = f[0];
    r.metric = f[1];
    r.difficulty = difficulty_from_string(f[2]);
    r.iou_threshold = detail::parse_csv_num(f[3], line_no);
    r.ap_clean = detail::parse_csv_num(f[4], line_no);
    r.ap_corrupt = detail::parse_csv_num(f[5], line_no);
    r.rce = detail::parse_csv_num(f[6], line_no);
    rows.push_back(r);
  }
  return rows;
}

// Grouped bars, one group per corruption, one bar per (metric,
// difficulty) row within it. Negative RCE (corrupt beat clean) clamps to
// a zero-height bar.
inline void write_rce_svg(std::span<const RceRow> rows,
                          const std::filesystem::path& path) {
  std::vector<std::string> groups;
  std::map<std::string, std::vector<const RceRow*>> by_group;
  for (const RceRow& r : rows) {
    if (!by_group.count(r.corruption)) groups.push_back(r.corruption);
    by_group[r.corruption].push_back(&r);
  }
  std::size_t bars_per_group = 1;
  double max_rce = 0;
  for (const auto& g : groups) {
    bars_per_group = std::max(bars_per_group, by_group[g].size());
    for (const RceRow* r : by_group[g]) max_rce = std::max(max_rce, r->rce);
  }
  const double y_max = std::max(0.1, std::ceil(max_rce * 10.0) / 10.0);

  const double bar_w = 18, bar_gap = 4, group_gap = 30;
  const double plot_h = 240, margin_l = 56, margin_t = 24, margin_b = 64;
  const double group_w =
      double(bars_per_group) * bar_w + double(bars_per_group - 1) * bar_gap;
  const double width = margin_l + 20 +
                       double(groups.size()) * (group_w + group_gap);
  const double height = margin_t + plot_h + margin_b;
  static constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759",
                                             "#76b7b2", "#59a14f", "#edc948"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << detail::format_g(width) << "\" height=\"" << detail::format_g(height)
      << "\" viewBox=\"0 0 " << detail::format_g(width) << ' '
      << detail::format_g(height) << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // y axis with three ticks
  for (int t = 0; t <= 2; ++t) {
    const double frac = t / 2.0;
    const double y = margin_t + plot_h * (1.0 - frac);
    svg << "<line x1=\"" << detail::format_g(margin_l) << "\" y1=\""
        << detail::format_g(y) << "\" x2=\"" << detail::format_g(width - 8)
        << "\" y2=\"" << detail::format_g(y)
        << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    char tick[32];
    std::snprintf(tick, sizeof tick, "%.2f", y_max * frac);
    svg << "<text x=\"" << detail::format_g(margin_l - 6) << "\" y=\""
        << detail::format_g(y + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << tick << "</text>\n";
  }
  svg << "<text x=\"14\" y=\"" << detail::format_g(margin_t + plot_h / 2)
      << "\" font-family=\"sans-serif\" font-size=\"11\" "
         "transform=\"rotate(-90 14 "
      << detail::format_g(margin_t + plot_h / 2) << ")\" "
      << "text-anchor=\"middle\">relative corruption error</text>\n";

  double gx = margin_l + 10;
  for (const std::string& g : groups) {
    const auto& bars = by_group[g];
    for (std::size_t i = 0; i < bars.size(); ++i) {
      const RceRow& r = *bars[i];
      const double h = plot_h * std::clamp(r.rce / y_max, 0.0, 1.0);
      const double x = gx + double(i) * (bar_w + bar_gap);
      svg << "<rect x=\"" << detail::format_g(x) << "\" y=\""
          << detail::format_g(margin_t + plot_h - h) << "\" width=\""
          << detail::format_g(bar_w) << "\" height=\"" << detail::format_g(h)
          << "\" fill=\"" << kPalette[i % 6] << "\"><title>" << r.corruption
          << ' ' << r.metric << ' ' << to_string(r.difficulty) << " rce="
          << detail::format_g(r.rce) << "</title></rect>\n";
    }
    svg << "<text x=\"" << detail::format_g(gx + group_w / 2) << "\" y=\""
        << detail::format_g(margin_t + plot_h + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << g << "</text>\n";
    gx += group_w + group_gap;
  }
  // legend: metric/difficulty labels in bar order of the first group
  if (!groups.empty()) {
    const auto& bars = by_group[groups.front()];
    double lx = margin_l + 10;
    const double ly = margin_t + plot_h + 40;
    for (std::size_t i = 0; i < bars.size(); ++i) {
      svg << "<rect x=\"" << detail::format_g(lx) << "\" y=\""
          << detail::format_g(ly - 9) << "\" width=\"10\" height=\"10\" "
          << "fill=\"" << kPalette[i % 6] << "\"/>\n";
      svg << "<text x=\"" << detail::format_g(lx + 14) << "\" y=\""
          << detail::format_g(ly)
          << "\" font-family=\"sans-serif\" font-size=\"11\">"
          << bars[i]->metric << '/' << to_string(bars[i]->difficulty)
          << "</text>\n";
      lx += 110;
    }
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << svg.str();
  if (!out) throw IoFailure("short write to " + path.string());
}

// -------------------------------------------------- cmd: fusion demo --

struct FusionDemoOptions {
  FusionStrategy strategy = FusionStrategy::sigmoid_gate;
  int n = 500;
  int d = 8;
  int m = 4;
  int epochs = 400;
  double lr = 2.0;
  std::uint64_t seed = 100;
  int sweep = 1;  // number of consecutive seeds
};

namespace detail {

inline nlohmann::json accuracy_json(const TrainResult& r) {
  nlohmann::json acc;
  acc["clean"] = r.heldout_by_tag[std::size_t(CorruptionTag::clean)].accuracy;
  acc["lidar_corrupt"] =
      r.heldout_by_tag[std::size_t(CorruptionTag::lidar_corrupt)].accuracy;
  acc["camera_corrupt"] =
      r.heldout_by_tag[std::size_t(CorruptionTag::camera_corrupt)].accuracy;
  acc["overall"] = r.heldout_overall.accuracy;
  return acc;
}

}  // namespace detail

// Trains on the toy dataset for `sweep` consecutive seeds and reports
// per-tag accuracy, a gradient probe, and (for the gated strategy) mean
// gate weights with their deltas against the clean tag.
inline nlohmann::json cmd_fusion_demo(const FusionDemoOptions& opts) {
  if (opts.sweep < 1) throw DataError("sweep must be at least 1");
  nlohmann::json report;
  report["schema_version"] = 1;
  report["command"] = "fusion-demo";
  report["tool_version"] = version();
  report["strategy"] = to_string(opts.strategy);
  report["hyperparams"] = {{"n", opts.n},       {"d", opts.d},
                           {"m", opts.m},       {"epochs", opts.epochs},
                           {"lr", opts.lr},     {"seed", opts.seed},
                           {"sweep", opts.sweep}};

  nlohmann::json runs = nlohmann::json::array();
  std::array<double, kCorruptionTagCount> acc_sum{};
  double overall_sum = 0;
  std::array<double, kCorruptionTagCount> gate_sum{};
  for (int s = 0; s < opts.sweep; ++s) {
    const std::uint64_t dataset_seed = opts.seed + std::uint64_t(s);
    const std::uint64_t model_seed = dataset_seed + 1000;
    const ToyFusionDataset ds =
        generate_toy_dataset(opts.n, opts.d, opts.m, dataset_seed);
    const TrainResult r =
        train(ds, opts.strategy, opts.epochs, opts.lr, model_seed);

    nlohmann::json run;
    run["dataset_seed"] = dataset_seed;
    run["model_seed"] = model_seed;
    run["n_train"] = r.n_train;
    run["n_heldout"] = r.n_heldout;
    run["final_train_loss"] = r.final_train_loss;
    run["accuracy"] = detail::accuracy_json(r);

    const std::size_t n_probe = std::min<std::size_t>(4, ds.samples.size());
    run["grad_check_max_rel_error"] = grad_check(
        r.model, std::span<const ToyFusionSample>(ds.samples.data(), n_probe));

    if (opts.strategy == FusionStrategy::sigmoid_gate) {
      const GateStatistics gs = gate_statistics(r.model, ds);
      nlohmann::json gate;
      gate["w_p_plus_w_i"] = 1.0;  // convex combination by construction
      gate["mean_w_p"] = {
          {"clean", gs.mean_gate[std::size_t(CorruptionTag::clean)]},
          {"lidar_corrupt",
           gs.mean_gate[std::size_t(CorruptionTag::lidar_corrupt)]},
          {"camera_corrupt",
           gs.mean_gate[std::size_t(CorruptionTag::camera_corrupt)]}};
      gate["delta_vs_clean"] = {
          {"lidar_corrupt",
           gs.delta_vs_clean[std::size_t(CorruptionTag::lidar_corrupt)]},
          {"camera_corrupt",
           gs.delta_vs_clean[std::size_t(CorruptionTag::camera_corrupt)]}};
      gate["sample_count"] = {
          {"clean", gs.sample_count[std::size_t(CorruptionTag::clean)]},
          {"lidar_corrupt",
           gs.sample_count[std::size_t(CorruptionTag::lidar_corrupt)]},
          {"camera_corrupt",
           gs.sample_count[std::size_t(CorruptionTag::camera_corrupt)]}};
      run["gate"] = gate;
      for (std::size_t t = 0; t < kCorruptionTagCount; ++t) {
        gate_sum[t] += gs.mean_gate[t];
      }
    }
    for (std::size_t t = 0; t < kCorruptionTagCount; ++t) {
      acc_sum[t] += r.heldout_by_tag[t].accuracy;
    }
    overall_sum += r.heldout_overall.accuracy;
    runs.push_back(run);
  }
  report["runs"] = runs;

  if (opts.sweep > 1) {
    const double inv = 1.0 / opts.sweep;
    nlohmann::json agg;
    agg["mean_accuracy"] = {
        {"clean", acc_sum[std::size_t(CorruptionTag::clean)] * inv},
        {"lidar_corrupt",
         acc_sum[std::size_t(CorruptionTag::lidar_corrupt)] * inv},
        {"camera_corrupt",
         acc_sum[std::size_t(CorruptionTag::camera_corrupt)] * inv},
        {"overall", overall_sum * inv}};
    if (opts.strategy == FusionStrategy::sigmoid_gate) {
      agg["mean_w_p"] = {
          {"clean", gate_sum[std::size_t(CorruptionTag::clean)] * inv},
          {"lidar_corrupt",
           gate_sum[std::size_t(CorruptionTag::lidar_corrupt)] * inv},
          {"camera_corrupt",
           gate_sum[std::size_t(CorruptionTag::camera_corrupt)] * inv}};
    }
    report["aggregate"] = agg;
  }
  return report;
}

// ------------------------------------------------------- cmd: report --

// Renders the RCE table and/or a fusion-demo report as one Markdown
// document; either input may be absent.
inline std::string render_report(const std::vector<RceRow>* rce_rows,
                                 const nlohmann::json* fusion_report) {
  std::ostringstream md;
  md << "# Robustness report\n";
  if (rce_rows) {
    md << "\n## Relative corruption error\n\n";
    md << "| corruption | metric | difficulty | AP clean | AP corrupt | RCE "
          "|\n";
    md << "|---|---|---|---|---|---|\n";
    for (const RceRow& r : *rce_rows) {
      char ap_c[32], ap_k[32], rc[32];
      std::snprintf(ap_c, sizeof ap_c, "%.2f", r.ap_clean);
      std::snprintf(ap_k, sizeof ap_k, "%.2f", r.ap_corrupt);
      std::snprintf(rc, sizeof rc, "%.4f", r.rce);
      md << "| " << r.corruption << " | " << r.metric << " | "
         << to_string(r.difficulty) << " | " << ap_c << " | " << ap_k
         << " | " << rc << " |\n";
    }
  }
  if (fusion_report) {
    const nlohmann::json& f = *fusion_report;
    md << "\n## Fusion demo (" << f.at("strategy").get<std::string>()
       << ")\n\n";
    md << "| seed | clean acc | lidar-corrupt acc | camera-corrupt acc | "
          "overall |\n";
    md << "|---|---|---|---|---|\n";
    for (const auto& run : f.at("runs")) {
      const auto& acc = run.at("accuracy");
      char c[32], l[32], k[32], o[32];
      std::snprintf(c, sizeof c, "%.3f", acc.at("clean").get<double>());
      std::snprintf(l, sizeof l, "%.3f",
                    acc.at("lidar_corrupt").get<double>());
      std::snprintf(k, sizeof k, "%.3f",
                    acc.at("camera_corrupt").get<double>());
      std::snprintf(o, sizeof o, "%.3f", acc.at("overall").get<double>());
      md << "| " << run.at("dataset_seed").get<std::uint64_t>() << " | " << c
         << " | " << l << " | " << k << " | " << o << " |\n";
    }
    if (f.contains("aggregate") && f.at("aggregate").contains("mean_w_p")) {
      const auto& w = f.at("aggregate").at("mean_w_p");
      char c[32], l[32], k[32];
      std::snprintf(c, sizeof c, "%.3f", w.at("clean").get<double>());
      std::snprintf(l, sizeof l, "%.3f", w.at("lidar_corrupt").get<double>());
      std::snprintf(k, sizeof k, "%.3f",
                    w.at("camera_corrupt").get<double>());
      md << "\nMean LiDAR gate weight w_P: clean " << c << ", lidar-corrupt "
         << l << ", camera-corrupt " << k << " (w_I = 1 - w_P).\n";
    }
  }
  return md.str();
}

inline void cmd_report(const std::optional<std::filesystem::path>& rce_csv,
                       const std::optional<std::filesystem::path>& fusion_json,
                       const std::filesystem::path& out_path) {
  std::optional<std::vector<RceRow>> rce_rows;
  if (rce_csv) rce_rows = read_rce_csv(*rce_csv);
  std::optional<nlohmann::json> fusion;
  if (fusion_json) {
    std::ifstream in(*fusion_json);
    if (!in) throw IoFailure("cannot open " + fusion_json->string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed fusion report JSON: ") +
                      e.what());
    }
    fusion = std::move(j);
  }
  const std::string md = render_report(rce_rows ? &*rce_rows : nullptr,
                                       fusion ? &*fusion : nullptr);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + out_path.string() +
                            " for writing");
  out << md;
  if (!out) throw IoFailure("short write to " + out_path.string());
}

}  // namespace wxbench
