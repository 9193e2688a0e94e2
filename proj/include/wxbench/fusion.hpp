// SPDX-License-Identifier: MIT
//
// Feature-level fusion strategies with a trainable toy task.
//
// Three ways to merge a LiDAR feature map F_P with a camera feature map
// F_I: elementwise sum, a sigmoid gate (one scalar weight per spatial
// cell), and single-head cross-attention (query from camera, key/value
// from LiDAR). A synthetic two-modality dataset plus a full-batch
// gradient-descent trainer make the strategies comparable end to end,
// and a finite-difference checker validates every analytic gradient.
//
// Everything here is 64-bit and single-threaded: this module is a
// correctness reference, not a performance kernel.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wxbench/errors.hpp"
#include "wxbench/rng.hpp"

namespace wxbench {

// ---------------------------------------------------------------------------
// Small dense matrix, row-major. Sized for M x d feature maps (M, d < 100);
// no BLAS, loops are clearer at this scale.

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  static Matrix zeros(int r, int c) {
    Matrix m;
    m.rows = r;
    m.cols = c;
    m.data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c),
                  0.0);
    return m;
  }

  static Matrix identity(int n) {
    Matrix m = zeros(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  double& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  bool operator==(const Matrix&) const = default;
};

namespace detail {

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::zeros(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  return out;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::zeros(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(j, k);
      out.at(i, j) = s;
    }
  return out;
}

// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::zeros(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k)
    for (int i = 0; i < a.cols; ++i) {
      const double aki = a.at(k, i);
      for (int j = 0; j < b.cols; ++j) out.at(i, j) += aki * b.at(k, j);
    }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Domain types

enum class FeatureRole { lidar, camera, fused };

inline std::string_view to_string(FeatureRole r) {
  switch (r) {
    case FeatureRole::lidar: return "lidar";
    case FeatureRole::camera: return "camera";
    case FeatureRole::fused: return "fused";
  }
  return "?";
}

// M spatial cells by d channels.
struct FeatureMap {
  Matrix cells;
  FeatureRole role = FeatureRole::fused;

  int rows() const { return cells.rows; }
  int cols() const { return cells.cols; }
};

inline FeatureMap make_feature_map(int m, int d, FeatureRole role) {
  return FeatureMap{Matrix::zeros(m, d), role};
}

// Two dense layers d -> h -> 1 with a rectifier between them.
struct GateMlpParams {
  Matrix w1;               // h x d
  std::vector<double> b1;  // h
  Matrix w2;               // 1 x h
  std::vector<double> b2;  // 1
};

struct AttentionParams {
  Matrix w_q;  // d x d
  Matrix w_k;  // d x d
  Matrix w_v;  // d x d
};

enum class FusionStrategy { sum, sigmoid_gate, cross_attention };

inline std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::sum: return "sum";
    case FusionStrategy::sigmoid_gate: return "sigmoid_gate";
    case FusionStrategy::cross_attention: return "cross_attention";
  }
  return "?";
}

inline FusionStrategy fusion_strategy_from_string(std::string_view name) {
  if (name == "sum") return FusionStrategy::sum;
  if (name == "sigmoid_gate") return FusionStrategy::sigmoid_gate;
  if (name == "cross_attention") return FusionStrategy::cross_attention;
  throw DataError("unknown fusion strategy: " + std::string(name));
}

enum class CorruptionTag { clean = 0, lidar_corrupt = 1, camera_corrupt = 2 };

inline constexpr int kCorruptionTagCount = 3;

inline std::string_view to_string(CorruptionTag t) {
  switch (t) {
    case CorruptionTag::clean: return "clean";
    case CorruptionTag::lidar_corrupt: return "lidar_corrupt";
    case CorruptionTag::camera_corrupt: return "camera_corrupt";
  }
  return "?";
}

struct ToyFusionSample {
  FeatureMap f_lidar;   // role lidar
  FeatureMap f_camera;  // role camera
  int label = 0;        // 0 or 1
  CorruptionTag tag = CorruptionTag::clean;
};

struct ToyFusionDataset {
  int d = 0;
  int m = 0;
  std::uint64_t seed = 0;
  std::vector<ToyFusionSample> samples;
};

// ---------------------------------------------------------------------------
// Elementary ops

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Max-subtracted softmax; safe for entries up to the double exponent range.
inline std::vector<double> softmax_row(std::span<const double> v) {
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

// Scalar MLP output for one cell vector (pre-sigmoid gate activation).
inline double mlp_forward(std::span<const double> x,
                          const GateMlpParams& params) {
  if (static_cast<int>(x.size()) != params.w1.cols)
    throw ShapeMismatch("mlp_forward: input size does not match w1");
  const int h = params.w1.rows;
  double out = params.b2[0];
  for (int j = 0; j < h; ++j) {
    double a = params.b1[j];
    for (int i = 0; i < params.w1.cols; ++i) a += params.w1.at(j, i) * x[i];
    out += params.w2.at(0, j) * std::max(a, 0.0);
  }
  return out;
}

namespace detail {

inline void require_same_shape(const FeatureMap& a, const FeatureMap& b,
                               const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(what) + ": feature map shapes differ");
}

inline void require_gate_shapes(const GateMlpParams& p, int d,
                                const char* what) {
  const int h = p.w1.rows;
  if (p.w1.cols != d || p.w2.rows != 1 || p.w2.cols != h ||
      static_cast<int>(p.b1.size()) != h || p.b2.size() != 1)
    throw ShapeMismatch(std::string(what) + ": gate MLP shapes inconsistent");
}

inline void require_attention_shapes(const AttentionParams& p, int d,
                                     const char* what) {
  const auto square = [d](const Matrix& m) {
    return m.rows == d && m.cols == d;
  };
  if (!square(p.w_q) || !square(p.w_k) || !square(p.w_v))
    throw ShapeMismatch(std::string(what) + ": attention matrices not d x d");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fusion strategies

inline FeatureMap fuse_sum(const FeatureMap& f_p, const FeatureMap& f_i) {
  detail::require_same_shape(f_p, f_i, "fuse_sum");
  FeatureMap out = make_feature_map(f_p.rows(), f_p.cols(), FeatureRole::fused);
  for (std::size_t i = 0; i < out.cells.data.size(); ++i)
    out.cells.data[i] = f_p.cells.data[i] + f_i.cells.data[i];
  return out;
}

struct GatedFusion {
  FeatureMap fused;
  std::vector<double> gate;  // w_P, one scalar per cell, each in (0,1)
};

// Per cell m: w_P = sigmoid(MLP(F_P[m] + F_I[m])); output is the convex
// combination w_P * F_P[m] + (1 - w_P) * F_I[m].
inline GatedFusion fuse_sigmoid(const FeatureMap& f_p, const FeatureMap& f_i,
                                const GateMlpParams& params) {
  detail::require_same_shape(f_p, f_i, "fuse_sigmoid");
  detail::require_gate_shapes(params, f_p.cols(), "fuse_sigmoid");
  const int m = f_p.rows();
  const int d = f_p.cols();
  GatedFusion out;
  out.fused = make_feature_map(m, d, FeatureRole::fused);
  out.gate.resize(m);
  std::vector<double> cell(d);
  for (int r = 0; r < m; ++r) {
    for (int j = 0; j < d; ++j)
      cell[j] = f_p.cells.at(r, j) + f_i.cells.at(r, j);
    const double g = sigmoid(mlp_forward(cell, params));
    out.gate[r] = g;
    for (int j = 0; j < d; ++j)
      out.fused.cells.at(r, j) =
          g * f_p.cells.at(r, j) + (1.0 - g) * f_i.cells.at(r, j);
  }
  return out;
}

// Q = F_I W_q, K = F_P W_k, V = F_P W_v; A = row-softmax(Q K^T / sqrt(d));
// output A V. Single head, no residual.
inline FeatureMap fuse_attention(const FeatureMap& f_p, const FeatureMap& f_i,
                                 const AttentionParams& params) {
  detail::require_same_shape(f_p, f_i, "fuse_attention");
  detail::require_attention_shapes(params, f_p.cols(), "fuse_attention");
  const int m = f_p.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(f_p.cols()));
  const Matrix q = detail::matmul(f_i.cells, params.w_q);
  const Matrix k = detail::matmul(f_p.cells, params.w_k);
  const Matrix v = detail::matmul(f_p.cells, params.w_v);
  Matrix z = detail::matmul_nt(q, k);
  for (double& x : z.data) x *= scale;
  FeatureMap out = make_feature_map(m, f_p.cols(), FeatureRole::fused);
  for (int i = 0; i < m; ++i) {
    const std::vector<double> row = softmax_row(
        std::span<const double>(z.data.data() + std::size_t(i) * m, m));
    for (int j = 0; j < f_p.cols(); ++j) {
      double s = 0.0;
      for (int l = 0; l < m; ++l) s += row[l] * v.at(l, j);
      out.cells.at(i, j) = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy two-modality dataset
//
// Latent truth t ~ N(0, I) per cell; both branches observe t plus noise.
// Corrupting a branch inflates that branch's noise sigma 0.3 -> 2.0 and
// shifts its mean (LiDAR attenuation dims returns, camera overexposure
// brightens), so the summed gate input carries which branch is degraded.
// The label depends only on t, through a fixed seeded unit direction.

inline constexpr double kToyBaseSigma = 0.3;
inline constexpr double kToyCorruptSigma = 2.0;
inline constexpr double kToyCorruptBias = 1.0;

// Tag layout per index block of 10: 0-3 clean, 4-6 lidar, 7-9 camera (40/30/30).
inline CorruptionTag toy_tag_for_index(std::size_t i) {
  const std::size_t r = i % 10;
  if (r < 4) return CorruptionTag::clean;
  if (r < 7) return CorruptionTag::lidar_corrupt;
  return CorruptionTag::camera_corrupt;
}

inline ToyFusionDataset generate_toy_dataset(int n, int d, int m,
                                             std::uint64_t seed) {
  if (n < 0 || d < 1 || m < 1)
    throw DataError("generate_toy_dataset: need n >= 0, d >= 1, m >= 1");
  ToyFusionDataset ds;
  ds.d = d;
  ds.m = m;
  ds.seed = seed;
  ds.samples.reserve(static_cast<std::size_t>(n));
  SplitMix rng(mix64(seed, 0xda7a5e7ull));

  std::vector<double> u(d);
  double norm2 = 0.0;
  for (double& x : u) {
    x = rng.gauss();
    norm2 += x * x;
  }
  const double norm = std::sqrt(norm2);
  for (double& x : u) x = (norm > 0.0) ? x / norm : 0.0;
  if (norm == 0.0) u[0] = 1.0;

  for (int i = 0; i < n; ++i) {
    ToyFusionSample s;
    s.tag = toy_tag_for_index(static_cast<std::size_t>(i));
    s.f_lidar = make_feature_map(m, d, FeatureRole::lidar);
    s.f_camera = make_feature_map(m, d, FeatureRole::camera);

    Matrix t = Matrix::zeros(m, d);
    for (double& x : t.data) x = rng.gauss();
    const bool lidar_bad = s.tag == CorruptionTag::lidar_corrupt;
    const bool camera_bad = s.tag == CorruptionTag::camera_corrupt;
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const double ep = lidar_bad
                            ? kToyCorruptSigma * rng.gauss() - kToyCorruptBias
                            : kToyBaseSigma * rng.gauss();
      s.f_lidar.cells.data[j] = t.data[j] + ep;
    }
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const double ei = camera_bad
                            ? kToyCorruptSigma * rng.gauss() + kToyCorruptBias
                            : kToyBaseSigma * rng.gauss();
      s.f_camera.cells.data[j] = t.data[j] + ei;
    }

    double proj = 0.0;
    for (int j = 0; j < d; ++j) {
      double pooled = 0.0;
      for (int r = 0; r < m; ++r) pooled += t.at(r, j);
      proj += u[j] * (pooled / m);
    }
    s.label = proj > 0.0 ? 1 : 0;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Model: fuse -> mean-pool over cells -> linear classifier -> sigmoid

inline constexpr int kGateHiddenWidth = 16;

struct FusionModel {
  FusionStrategy strategy = FusionStrategy::sum;
  int d = 0;
  int h = 0;  // gate hidden width; carried for all strategies
  std::uint64_t init_seed = 0;
  GateMlpParams gate;    // populated iff strategy == sigmoid_gate
  AttentionParams attn;  // populated iff strategy == cross_attention
  std::vector<double> w;  // classifier, d
  double b = 0.0;

  // Default init. Gate layers draw N(0, 1/d) and N(0, 1/h); biases zero.
  // Attention starts at the uniform-attention point (w_q = w_k = 0,
  // w_v = I), which trains like mean-pooled logistic regression and then
  // sharpens; random attention init is harder to train at this scale.
  static FusionModel make(FusionStrategy s, int d, int h, std::uint64_t seed) {
    if (d < 1 || h < 1) throw DataError("FusionModel: need d >= 1, h >= 1");
    FusionModel mdl;
    mdl.strategy = s;
    mdl.d = d;
    mdl.h = h;
    mdl.init_seed = seed;
    SplitMix rng(mix64(seed, 0x10de1ull));
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sh = 1.0 / std::sqrt(static_cast<double>(h));
    if (s == FusionStrategy::sigmoid_gate) {
      mdl.gate.w1 = Matrix::zeros(h, d);
      for (double& x : mdl.gate.w1.data) x = sd * rng.gauss();
      mdl.gate.b1.assign(h, 0.0);
      mdl.gate.w2 = Matrix::zeros(1, h);
      for (double& x : mdl.gate.w2.data) x = sh * rng.gauss();
      mdl.gate.b2.assign(1, 0.0);
    } else if (s == FusionStrategy::cross_attention) {
      mdl.attn.w_q = Matrix::zeros(d, d);
      mdl.attn.w_k = Matrix::zeros(d, d);
      mdl.attn.w_v = Matrix::identity(d);
    }
    mdl.w.resize(d);
    for (double& x : mdl.w) x = sd * rng.gauss();
    mdl.b = 0.0;
    return mdl;
  }

  // Draw every parameter of the current strategy from N(0, 1/d) (N(0, 1/h)
  // for the second gate layer), biases zero. Used by gradient checks,
  // where the default attention init would sit at a w_q/w_k saddle.
  void randomize(std::uint64_t seed) {
    SplitMix rng(mix64(seed, 0x5eedull));
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sh = 1.0 / std::sqrt(static_cast<double>(h));
    if (strategy == FusionStrategy::sigmoid_gate) {
      for (double& x : gate.w1.data) x = sd * rng.gauss();
      for (double& x : gate.w2.data) x = sh * rng.gauss();
      std::fill(gate.b1.begin(), gate.b1.end(), 0.0);
      std::fill(gate.b2.begin(), gate.b2.end(), 0.0);
    } else if (strategy == FusionStrategy::cross_attention) {
      for (double& x : attn.w_q.data) x = sd * rng.gauss();
      for (double& x : attn.w_k.data) x = sd * rng.gauss();
      for (double& x : attn.w_v.data) x = sd * rng.gauss();
    }
    for (double& x : w) x = sd * rng.gauss();
    b = 0.0;
  }

  FeatureMap fuse(const FeatureMap& f_p, const FeatureMap& f_i) const {
    switch (strategy) {
      case FusionStrategy::sum: return fuse_sum(f_p, f_i);
      case FusionStrategy::sigmoid_gate:
        return fuse_sigmoid(f_p, f_i, gate).fused;
      case FusionStrategy::cross_attention:
        return fuse_attention(f_p, f_i, attn);
    }
    throw DataError("FusionModel: bad strategy");
  }

  // P(label = 1) for one sample.
  double predict(const FeatureMap& f_p, const FeatureMap& f_i) const {
    const FeatureMap ff = fuse(f_p, f_i);
    double logit = b;
    for (int j = 0; j < d; ++j) {
      double pooled = 0.0;
      for (int r = 0; r < ff.rows(); ++r) pooled += ff.cells.at(r, j);
      logit += w[j] * (pooled / ff.rows());
    }
    return sigmoid(logit);
  }
};

// ---------------------------------------------------------------------------
// Training internals

namespace detail {

struct ForwardCache {
  Matrix fused;                // M x d
  std::vector<double> pooled;  // d
  double prob = 0.0;
  // sigmoid gate
  Matrix sum_in;          // M x d
  Matrix a1;              // M x h, pre-rectifier
  std::vector<double> g;  // M, gate values
  // attention
  Matrix q, k, v;  // M x d
  Matrix a;        // M x M, softmax rows
};

inline ForwardCache forward_cached(const FusionModel& mdl,
                                   const ToyFusionSample& s) {
  ForwardCache c;
  const Matrix& fp = s.f_lidar.cells;
  const Matrix& fi = s.f_camera.cells;
  const int m = fp.rows;
  const int d = fp.cols;
  switch (mdl.strategy) {
    case FusionStrategy::sum: {
      c.fused = Matrix::zeros(m, d);
      for (std::size_t i = 0; i < c.fused.data.size(); ++i)
        c.fused.data[i] = fp.data[i] + fi.data[i];
      break;
    }
    case FusionStrategy::sigmoid_gate: {
      c.sum_in = Matrix::zeros(m, d);
      for (std::size_t i = 0; i < c.sum_in.data.size(); ++i)
        c.sum_in.data[i] = fp.data[i] + fi.data[i];
      const int h = mdl.h;
      c.a1 = Matrix::zeros(m, h);
      c.g.resize(m);
      c.fused = Matrix::zeros(m, d);
      for (int r = 0; r < m; ++r) {
        double a2 = mdl.gate.b2[0];
        for (int j = 0; j < h; ++j) {
          double a = mdl.gate.b1[j];
          for (int i = 0; i < d; ++i)
            a += mdl.gate.w1.at(j, i) * c.sum_in.at(r, i);
          c.a1.at(r, j) = a;
          a2 += mdl.gate.w2.at(0, j) * std::max(a, 0.0);
        }
        const double g = sigmoid(a2);
        c.g[r] = g;
        for (int j = 0; j < d; ++j)
          c.fused.at(r, j) = g * fp.at(r, j) + (1.0 - g) * fi.at(r, j);
      }
      break;
    }
    case FusionStrategy::cross_attention: {
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      c.q = matmul(fi, mdl.attn.w_q);
      c.k = matmul(fp, mdl.attn.w_k);
      c.v = matmul(fp, mdl.attn.w_v);
      Matrix z = matmul_nt(c.q, c.k);
      for (double& x : z.data) x *= scale;
      c.a = Matrix::zeros(m, m);
      for (int i = 0; i < m; ++i) {
        const std::vector<double> row = softmax_row(
            std::span<const double>(z.data.data() + std::size_t(i) * m, m));
        for (int j = 0; j < m; ++j) c.a.at(i, j) = row[j];
      }
      c.fused = matmul(c.a, c.v);
      break;
    }
  }
  c.pooled.assign(d, 0.0);
  double logit = mdl.b;
  for (int j = 0; j < d; ++j) {
    double pooled = 0.0;
    for (int r = 0; r < m; ++r) pooled += c.fused.at(r, j);
    c.pooled[j] = pooled / m;
    logit += mdl.w[j] * c.pooled[j];
  }
  c.prob = sigmoid(logit);
  return c;
}

// Gradient accumulator, same shapes as the model's live parameters.
struct Gradients {
  std::vector<double> w;
  double b = 0.0;
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;
  Matrix w_q, w_k, w_v;

  static Gradients zeros_like(const FusionModel& mdl) {
    Gradients g;
    g.w.assign(mdl.w.size(), 0.0);
    if (mdl.strategy == FusionStrategy::sigmoid_gate) {
      g.w1 = Matrix::zeros(mdl.gate.w1.rows, mdl.gate.w1.cols);
      g.b1.assign(mdl.gate.b1.size(), 0.0);
      g.w2 = Matrix::zeros(mdl.gate.w2.rows, mdl.gate.w2.cols);
      g.b2.assign(mdl.gate.b2.size(), 0.0);
    } else if (mdl.strategy == FusionStrategy::cross_attention) {
      g.w_q = Matrix::zeros(mdl.attn.w_q.rows, mdl.attn.w_q.cols);
      g.w_k = Matrix::zeros(mdl.attn.w_k.rows, mdl.attn.w_k.cols);
      g.w_v = Matrix::zeros(mdl.attn.w_v.rows, mdl.attn.w_v.cols);
    }
    return g;
  }
};

// Accumulates d(BCE)/d(params) for one sample into `grads` (unnormalized;
// the caller divides by the batch size).
inline void backward_into(const FusionModel& mdl, const ToyFusionSample& s,
                          const ForwardCache& c, Gradients& grads) {
  const Matrix& fp = s.f_lidar.cells;
  const Matrix& fi = s.f_camera.cells;
  const int m = fp.rows;
  const int d = fp.cols;
  const double dlogit = c.prob - static_cast<double>(s.label);
  for (int j = 0; j < d; ++j) grads.w[j] += dlogit * c.pooled[j];
  grads.b += dlogit;

  // dL/dFf[r][j] is constant down each column: w[j] * dlogit / M.
  std::vector<double> dff_col(d);
  for (int j = 0; j < d; ++j) dff_col[j] = dlogit * mdl.w[j] / m;

  switch (mdl.strategy) {
    case FusionStrategy::sum:
      break;
    case FusionStrategy::sigmoid_gate: {
      const int h = mdl.h;
      for (int r = 0; r < m; ++r) {
        double dg = 0.0;
        for (int j = 0; j < d; ++j)
          dg += dff_col[j] * (fp.at(r, j) - fi.at(r, j));
        const double g = c.g[r];
        const double da2 = dg * g * (1.0 - g);
        grads.b2[0] += da2;
        for (int j = 0; j < h; ++j) {
          const double a = c.a1.at(r, j);
          const double rect = std::max(a, 0.0);
          grads.w2.at(0, j) += da2 * rect;
          if (a > 0.0) {
            const double da1 = da2 * mdl.gate.w2.at(0, j);
            grads.b1[j] += da1;
            for (int i = 0; i < d; ++i)
              grads.w1.at(j, i) += da1 * c.sum_in.at(r, i);
          }
        }
      }
      break;
    }
    case FusionStrategy::cross_attention: {
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      // dFf as a full matrix (rows identical).
      Matrix dff = Matrix::zeros(m, d);
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < d; ++j) dff.at(r, j) = dff_col[j];
      const Matrix dv = matmul_tn(c.a, dff);
      const Matrix da = matmul_nt(dff, c.v);
      Matrix dz = Matrix::zeros(m, m);
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += da.at(i, j) * c.a.at(i, j);
        for (int j = 0; j < m; ++j)
          dz.at(i, j) = c.a.at(i, j) * (da.at(i, j) - dot);
      }
      Matrix dq = matmul(dz, c.k);
      Matrix dk = matmul_tn(dz, c.q);
      for (double& x : dq.data) x *= scale;
      for (double& x : dk.data) x *= scale;
      const Matrix gq = matmul_tn(fi, dq);
      const Matrix gk = matmul_tn(fp, dk);
      const Matrix gv = matmul_tn(fp, dv);
      for (std::size_t i = 0; i < gq.data.size(); ++i) {
        grads.w_q.data[i] += gq.data[i];
        grads.w_k.data[i] += gk.data[i];
        grads.w_v.data[i] += gv.data[i];
      }
      break;
    }
  }
}

inline double bce_loss(double prob, int label) {
  const double p = std::min(std::max(prob, 1e-12), 1.0 - 1e-12);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

inline void apply_update(FusionModel& mdl, const Gradients& grads,
                         double step) {
  for (std::size_t j = 0; j < mdl.w.size(); ++j) mdl.w[j] -= step * grads.w[j];
  mdl.b -= step * grads.b;
  if (mdl.strategy == FusionStrategy::sigmoid_gate) {
    for (std::size_t i = 0; i < mdl.gate.w1.data.size(); ++i)
      mdl.gate.w1.data[i] -= step * grads.w1.data[i];
    for (std::size_t i = 0; i < mdl.gate.b1.size(); ++i)
      mdl.gate.b1[i] -= step * grads.b1[i];
    for (std::size_t i = 0; i < mdl.gate.w2.data.size(); ++i)
      mdl.gate.w2.data[i] -= step * grads.w2.data[i];
    mdl.gate.b2[0] -= step * grads.b2[0];
  } else if (mdl.strategy == FusionStrategy::cross_attention) {
    for (std::size_t i = 0; i < mdl.attn.w_q.data.size(); ++i) {
      mdl.attn.w_q.data[i] -= step * grads.w_q.data[i];
      mdl.attn.w_k.data[i] -= step * grads.w_k.data[i];
      mdl.attn.w_v.data[i] -= step * grads.w_v.data[i];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training

struct TagAccuracy {
  int count = 0;
  int correct = 0;
  // NaN when no sample of the tag lands in the held-out split.
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  FusionModel model;
  std::array<TagAccuracy, kCorruptionTagCount> heldout_by_tag;
  TagAccuracy heldout_overall;
  double final_train_loss = 0.0;
  int n_train = 0;
  int n_heldout = 0;
};

// Full-batch gradient descent on mean BCE. The first 80% of the dataset
// (at least one sample) trains; the tail is held out for the per-tag
// accuracies. Deterministic given (dataset, strategy, seed).
inline TrainResult train(const ToyFusionDataset& ds, FusionStrategy strategy,
                         int epochs, double lr, std::uint64_t seed) {
  if (ds.samples.empty()) throw DataError("train: empty dataset");
  if (epochs < 0) throw DataError("train: negative epoch count");
  const std::size_t n = ds.samples.size();
  const std::size_t n_train = std::max<std::size_t>(1, (n * 4) / 5);

  TrainResult res;
  res.model = FusionModel::make(strategy, ds.d, kGateHiddenWidth, seed);
  res.n_train = static_cast<int>(n_train);
  res.n_heldout = static_cast<int>(n - n_train);

  FusionModel& mdl = res.model;
  const double inv_n = 1.0 / static_cast<double>(n_train);
  for (int ep = 0; ep < epochs; ++ep) {
    detail::Gradients grads = detail::Gradients::zeros_like(mdl);
    double loss = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const detail::ForwardCache c = detail::forward_cached(mdl, ds.samples[i]);
      loss += detail::bce_loss(c.prob, ds.samples[i].label);
      detail::backward_into(mdl, ds.samples[i], c, grads);
    }
    loss *= inv_n;
    if (!std::isfinite(loss))
      throw DivergedLoss("train: non-finite loss at epoch " +
                         std::to_string(ep));
    detail::apply_update(mdl, grads, lr * inv_n);
  }

  double final_loss = 0.0;
  for (std::size_t i = 0; i < n_train; ++i) {
    const detail::ForwardCache c = detail::forward_cached(mdl, ds.samples[i]);
    final_loss += detail::bce_loss(c.prob, ds.samples[i].label);
  }
  res.final_train_loss = final_loss * inv_n;
  if (!std::isfinite(res.final_train_loss))
    throw DivergedLoss("train: non-finite final loss");

  for (std::size_t i = n_train; i < n; ++i) {
    const ToyFusionSample& s = ds.samples[i];
    const double prob = mdl.predict(s.f_lidar, s.f_camera);
    const int pred = prob > 0.5 ? 1 : 0;
    TagAccuracy& t = res.heldout_by_tag[static_cast<int>(s.tag)];
    t.count += 1;
    t.correct += pred == s.label ? 1 : 0;
    res.heldout_overall.count += 1;
    res.heldout_overall.correct += pred == s.label ? 1 : 0;
  }
  for (TagAccuracy* t : {&res.heldout_by_tag[0], &res.heldout_by_tag[1],
                         &res.heldout_by_tag[2], &res.heldout_overall}) {
    if (t->count > 0)
      t->accuracy = static_cast<double>(t->correct) / t->count;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient verification

// Central finite differences on the mean BCE over `samples`, against the
// analytic gradients, for every live parameter. Returns the max over
// parameters of |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
inline double grad_check(const FusionModel& model,
                         std::span<const ToyFusionSample> samples,
                         double eps = 1e-5) {
  if (eps < 1e-6 || eps > 1e-4)
    throw DataError("grad_check: eps outside [1e-6, 1e-4]");
  if (samples.empty()) throw DataError("grad_check: no samples");

  const double inv_n = 1.0 / static_cast<double>(samples.size());
  detail::Gradients grads = detail::Gradients::zeros_like(model);
  for (const ToyFusionSample& s : samples) {
    const detail::ForwardCache c = detail::forward_cached(model, s);
    detail::backward_into(model, s, c, grads);
  }

  FusionModel probe = model;
  const auto loss_at = [&]() {
    double loss = 0.0;
    for (const ToyFusionSample& s : samples) {
      const detail::ForwardCache c = detail::forward_cached(probe, s);
      loss += detail::bce_loss(c.prob, s.label);
    }
    return loss * inv_n;
  };

  double max_rel = 0.0;
  const auto check_one = [&](double* live, double analytic_sum) {
    const double analytic = analytic_sum * inv_n;
    const double old = *live;
    *live = old + eps;
    const double lp = loss_at();
    *live = old - eps;
    const double lm = loss_at();
    *live = old;
    const double numeric = (lp - lm) / (2.0 * eps);
    if (!std::isfinite(analytic) || !std::isfinite(numeric))
      throw NonFiniteGradient("grad_check: non-finite gradient");
    const double rel = std::abs(analytic - numeric) /
                       std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  };

  for (std::size_t j = 0; j < probe.w.size(); ++j)
    check_one(&probe.w[j], grads.w[j]);
  check_one(&probe.b, grads.b);
  if (model.strategy == FusionStrategy::sigmoid_gate) {
    for (std::size_t i = 0; i < probe.gate.w1.data.size(); ++i)
      check_one(&probe.gate.w1.data[i], grads.w1.data[i]);
    for (std::size_t i = 0; i < probe.gate.b1.size(); ++i)
      check_one(&probe.gate.b1[i], grads.b1[i]);
    for (std::size_t i = 0; i < probe.gate.w2.data.size(); ++i)
      check_one(&probe.gate.w2.data[i], grads.w2.data[i]);
    check_one(&probe.gate.b2[0], grads.b2[0]);
  } else if (model.strategy == FusionStrategy::cross_attention) {
    for (std::size_t i = 0; i < probe.attn.w_q.data.size(); ++i)
      check_one(&probe.attn.w_q.data[i], grads.w_q.data[i]);
    for (std::size_t i = 0; i < probe.attn.w_k.data.size(); ++i)
      check_one(&probe.attn.w_k.data[i], grads.w_k.data[i]);
    for (std::size_t i = 0; i < probe.attn.w_v.data.size(); ++i)
      check_one(&probe.attn.w_v.data[i], grads.w_v.data[i]);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Gate statistics

struct GateStatistics {
  // Indexed by CorruptionTag. Mean of every per-cell gate value under the
  // tag; NaN when the dataset has no sample of that tag.
  std::array<double, kCorruptionTagCount> mean_gate{};
  std::array<double, kCorruptionTagCount> delta_vs_clean{};
  std::array<int, kCorruptionTagCount> sample_count{};
};

inline GateStatistics gate_statistics(const FusionModel& model,
                                      const ToyFusionDataset& ds) {
  if (model.strategy != FusionStrategy::sigmoid_gate)
    throw WrongStrategy("gate_statistics: model is not sigmoid-gated");
  std::array<double, kCorruptionTagCount> sums{};
  std::array<long, kCorruptionTagCount> cells{};
  GateStatistics stats;
  for (const ToyFusionSample& s : ds.samples) {
    const GatedFusion gf = fuse_sigmoid(s.f_lidar, s.f_camera, model.gate);
    const int t = static_cast<int>(s.tag);
    stats.sample_count[t] += 1;
    for (double g : gf.gate) {
      sums[t] += g;
      cells[t] += 1;
    }
  }
  for (int t = 0; t < kCorruptionTagCount; ++t)
    stats.mean_gate[t] = cells[t] > 0
                             ? sums[t] / static_cast<double>(cells[t])
                             : std::numeric_limits<double>::quiet_NaN();
  for (int t = 0; t < kCorruptionTagCount; ++t)
    stats.delta_vs_clean[t] =
        stats.mean_gate[t] -
        stats.mean_gate[static_cast<int>(CorruptionTag::clean)];
  return stats;
}

// ---------------------------------------------------------------------------
// JSON serialization
//
// Schema: { "strategy": str, "shapes": {d, h, per-matrix [rows, cols]},
//           "params": flat row-major arrays, "seed": {"init": u64} }.

namespace detail {

inline nlohmann::json shape_of(const Matrix& m) {
  return nlohmann::json::array({m.rows, m.cols});
}

inline Matrix matrix_from_flat(const nlohmann::json& flat, int rows, int cols,
                               const char* name) {
  if (!flat.is_array() ||
      flat.size() != static_cast<std::size_t>(rows) * cols)
    throw ShapeMismatch(std::string("model JSON: bad size for ") + name);
  Matrix m = Matrix::zeros(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    m.data[i] = flat[i].get<double>();
    if (!std::isfinite(m.data[i]))
      throw NonFiniteValue(std::string("model JSON: non-finite entry in ") +
                           name);
  }
  return m;
}

inline std::vector<double> vector_from_flat(const nlohmann::json& flat,
                                            std::size_t size,
                                            const char* name) {
  if (!flat.is_array() || flat.size() != size)
    throw ShapeMismatch(std::string("model JSON: bad size for ") + name);
  std::vector<double> v(size);
  for (std::size_t i = 0; i < size; ++i) {
    v[i] = flat[i].get<double>();
    if (!std::isfinite(v[i]))
      throw NonFiniteValue(std::string("model JSON: non-finite entry in ") +
                           name);
  }
  return v;
}

}  // namespace detail

inline nlohmann::json model_to_json(const FusionModel& mdl) {
  nlohmann::json j;
  j["strategy"] = std::string(to_string(mdl.strategy));
  nlohmann::json shapes;
  shapes["d"] = mdl.d;
  shapes["h"] = mdl.h;
  nlohmann::json params;
  params["classifier_w"] = mdl.w;
  params["classifier_b"] = mdl.b;
  if (mdl.strategy == FusionStrategy::sigmoid_gate) {
    shapes["gate_w1"] = detail::shape_of(mdl.gate.w1);
    shapes["gate_w2"] = detail::shape_of(mdl.gate.w2);
    params["gate_w1"] = mdl.gate.w1.data;
    params["gate_b1"] = mdl.gate.b1;
    params["gate_w2"] = mdl.gate.w2.data;
    params["gate_b2"] = mdl.gate.b2;
  } else if (mdl.strategy == FusionStrategy::cross_attention) {
    shapes["attn_w_q"] = detail::shape_of(mdl.attn.w_q);
    shapes["attn_w_k"] = detail::shape_of(mdl.attn.w_k);
    shapes["attn_w_v"] = detail::shape_of(mdl.attn.w_v);
    params["attn_w_q"] = mdl.attn.w_q.data;
    params["attn_w_k"] = mdl.attn.w_k.data;
    params["attn_w_v"] = mdl.attn.w_v.data;
  }
  j["shapes"] = std::move(shapes);
  j["params"] = std::move(params);
  j["seed"] = nlohmann::json{{"init", mdl.init_seed}};
  return j;
}

inline FusionModel model_from_json(const nlohmann::json& j) {
  try {
    FusionModel mdl;
    mdl.strategy =
        fusion_strategy_from_string(j.at("strategy").get<std::string>());
    const nlohmann::json& shapes = j.at("shapes");
    mdl.d = shapes.at("d").get<int>();
    mdl.h = shapes.at("h").get<int>();
    if (mdl.d < 1 || mdl.h < 1)
      throw ShapeMismatch("model JSON: d and h must be >= 1");
    mdl.init_seed = j.at("seed").at("init").get<std::uint64_t>();
    const nlohmann::json& params = j.at("params");
    mdl.w = detail::vector_from_flat(params.at("classifier_w"),
                                     static_cast<std::size_t>(mdl.d),
                                     "classifier_w");
    mdl.b = params.at("classifier_b").get<double>();
    if (!std::isfinite(mdl.b))
      throw NonFiniteValue("model JSON: non-finite classifier_b");
    if (mdl.strategy == FusionStrategy::sigmoid_gate) {
      mdl.gate.w1 =
          detail::matrix_from_flat(params.at("gate_w1"), mdl.h, mdl.d,
                                   "gate_w1");
      mdl.gate.b1 = detail::vector_from_flat(
          params.at("gate_b1"), static_cast<std::size_t>(mdl.h), "gate_b1");
      mdl.gate.w2 =
          detail::matrix_from_flat(params.at("gate_w2"), 1, mdl.h, "gate_w2");
      mdl.gate.b2 = detail::vector_from_flat(params.at("gate_b2"), 1,
                                             "gate_b2");
    } else if (mdl.strategy == FusionStrategy::cross_attention) {
      mdl.attn.w_q = detail::matrix_from_flat(params.at("attn_w_q"), mdl.d,
                                              mdl.d, "attn_w_q");
      mdl.attn.w_k = detail::matrix_from_flat(params.at("attn_w_k"), mdl.d,
                                              mdl.d, "attn_w_k");
      mdl.attn.w_v = detail::matrix_from_flat(params.at("attn_w_v"), mdl.d,
                                              mdl.d, "attn_w_v");
    }
    return mdl;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model JSON: ") + e.what());
  }
}

}  // namespace wxbench
