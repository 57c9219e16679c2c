#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stmixer/featspace.hpp"
#include "stmixer/geometry.hpp"
#include "stmixer/nn.hpp"

namespace stmixer {

enum class SamplingStrategy { kAdaptive, kFixedGrid };
enum class TemporalMode { kCopy, kMove };

inline SamplingStrategy sampling_strategy_from(const std::string& s) {
  if (s == "adaptive") return SamplingStrategy::kAdaptive;
  if (s == "fixed_grid") return SamplingStrategy::kFixedGrid;
  throw ConfigError("unknown sampling strategy '" + s + "' (want adaptive|fixed_grid)");
}

inline TemporalMode temporal_mode_from(const std::string& s) {
  if (s == "copy") return TemporalMode::kCopy;
  if (s == "move") return TemporalMode::kMove;
  throw ConfigError("unknown temporal mode '" + s + "' (want copy|move)");
}

/// Continuous sampling locations, one (x, y, z) triple per query, group,
/// frame and point, in input-pixel / scale-index units.
struct SamplingPoints {
  Tensor coords;  // [N, G, T, P, 3]

  int64_t queries() const { return coords.dim(0); }
  int64_t groups() const { return coords.dim(1); }
  int64_t frames() const { return coords.dim(2); }
  int64_t points() const { return coords.dim(3); }
};

/// Box-relative offsets -> absolute sampling points for one frame:
///   x = qx + dx * 2^(z-r),  y = qy + dy * 2^(z+r),  z = qz + dz.
/// Spatial offsets scale with the box width/height. Differentiable in both
/// the positional queries [N,4] and the offsets [N,G,P,3].
inline Tensor decode_points(const Tensor& pqueries, const Tensor& offsets) {
  if (pqueries.rank() != 2 || pqueries.dim(1) != 4)
    throw DimensionError("decode_points: positional queries must be [N,4]");
  if (offsets.rank() != 4 || offsets.dim(3) != 3 || offsets.dim(0) != pqueries.dim(0))
    throw DimensionError("decode_points: offsets must be [N,G,P,3] matching " +
                         shape_str(pqueries.shape()));
  int64_t n = offsets.dim(0), g = offsets.dim(1), p = offsets.dim(2);
  Tensor out = Tensor::uninit({n, g, p, 3});
  for (int64_t i = 0; i < n; ++i) {
    const double* q = pqueries.data() + i * 4;
    double w = std::exp2(q[2] - q[3]);
    double h = std::exp2(q[2] + q[3]);
    for (int64_t j = 0; j < g * p; ++j) {
      const double* d = offsets.data() + (i * g * p + j) * 3;
      double* o = out.data() + (i * g * p + j) * 3;
      o[0] = q[0] + d[0] * w;
      o[1] = q[1] + d[1] * h;
      o[2] = q[2] + d[2];
    }
  }
  detail::wire(out, {pqueries, offsets}, [n, g, p](TensorNode& nn) {
    auto& Q = *nn.parents[0];
    auto& D = *nn.parents[1];
    for (int64_t i = 0; i < n; ++i) {
      const double* q = Q.data.data() + i * 4;
      double w = std::exp2(q[2] - q[3]);
      double h = std::exp2(q[2] + q[3]);
      for (int64_t j = 0; j < g * p; ++j) {
        const double* d = D.data.data() + (i * g * p + j) * 3;
        const double* gr = nn.grad.data() + (i * g * p + j) * 3;
        if (Q.requires_grad) {
          double* gq = Q.grad.data() + i * 4;
          gq[0] += gr[0];
          gq[1] += gr[1];
          gq[2] += gr[2] + kLn2 * (d[0] * w * gr[0] + d[1] * h * gr[1]);
          gq[3] += kLn2 * (-d[0] * w * gr[0] + d[1] * h * gr[1]);
        }
        if (D.requires_grad) {
          double* gd = D.grad.data() + (i * g * p + j) * 3;
          gd[0] += gr[0] * w;
          gd[1] += gr[1] * h;
          gd[2] += gr[2];
        }
      }
    }
  });
  return out;
}

/// Copies keyframe points [N,G,P,3] along the temporal axis -> [N,G,T,P,3].
inline SamplingPoints propagate_copy(const Tensor& keyframe_points, int64_t t) {
  const Shape& s = keyframe_points.shape();
  Tensor one = reshape(keyframe_points, {s[0], s[1], 1, s[2], s[3]});
  std::vector<Tensor> frames(size_t(t), one);
  return SamplingPoints{concat(frames, 2)};
}

/// Moves the reference box by a per-frame delta before decoding, so each
/// frame samples around its own predicted box. Zero deltas reduce exactly
/// to the copy mode.
inline SamplingPoints propagate_move(const Tensor& pqueries, const Tensor& offsets,
                                     const Tensor& frame_deltas) {
  if (!frame_deltas.defined())
    throw ConfigError("temporal move mode requires per-frame box deltas");
  if (frame_deltas.rank() != 3 || frame_deltas.dim(0) != pqueries.dim(0) ||
      frame_deltas.dim(2) != 4)
    throw DimensionError("propagate_move: frame deltas must be [N,T,4]");
  int64_t t = frame_deltas.dim(1);
  std::vector<Tensor> frames;
  for (int64_t f = 0; f < t; ++f) {
    Tensor delta_f = reshape(slice(frame_deltas, 1, f, 1), {frame_deltas.dim(0), 4});
    Tensor box_f = apply_box_deltas(pqueries, delta_f);
    Tensor pts = decode_points(box_f, offsets);
    const Shape& s = pts.shape();
    frames.push_back(reshape(pts, {s[0], s[1], 1, s[2], s[3]}));
  }
  return SamplingPoints{concat(frames, 2)};
}

/// Interpolated read of the 4D feature space at continuous points:
/// bilinear over the stride-4 common grid (grid position = pixel/4 - 0.5),
/// linear over the scale axis with z clamped into [2, 5]. Spatial
/// out-of-bounds neighbors contribute zero. Group g reads only channel
/// block g. Differentiable w.r.t. the volume and the point coordinates.
///
/// Arithmetic convention (tests rely on it): the eight corner
/// contributions accumulate in (z, y, x) order with weight ((wz*wy)*wx).
inline Tensor sample_4d(const FeatureSpace4D& space, const SamplingPoints& points) {
  const Tensor& vol = space.volume;
  const Tensor& pts = points.coords;
  if (vol.rank() != 5) throw DimensionError("sample_4d: volume must be [D,T,Z,H,W]");
  if (pts.rank() != 5 || pts.dim(4) != 3) throw DimensionError("sample_4d: points must be [N,G,T,P,3]");
  int64_t d = vol.dim(0), t = vol.dim(1), z = vol.dim(2), h = vol.dim(3), w = vol.dim(4);
  int64_t n = pts.dim(0), g = pts.dim(1), pt = pts.dim(2), p = pts.dim(3);
  if (pt != t)
    throw DimensionError("sample_4d: points cover " + std::to_string(pt) + " frames, volume has " +
                         std::to_string(t));
  if (d % g != 0)
    throw DimensionError("sample_4d: channels " + std::to_string(d) + " not divisible into " +
                         std::to_string(g) + " groups");
  for (int64_t i = 0; i < pts.numel(); ++i)
    if (!std::isfinite(pts.data()[i])) throw NumericError("sample_4d: non-finite sampling coordinate");
  int64_t dg = d / g;
  const double stride = double(FeatureSpace4D::kGridStride);
  const double zmin = double(FeatureSpace4D::kZMin), zmax = double(FeatureSpace4D::kZMax);

  Tensor out = Tensor::zeros({n, g, t, p, dg});
  const double* pv = vol.data();
  const double* pp = pts.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t gg = 0; gg < g; ++gg)
      for (int64_t f = 0; f < t; ++f)
        for (int64_t k = 0; k < p; ++k) {
          const double* c = pp + (((i * g + gg) * t + f) * p + k) * 3;
          double u = c[0] / stride - 0.5;
          double v = c[1] / stride - 0.5;
          double zc = std::clamp(c[2], zmin, zmax) - zmin;
          int64_t x0 = int64_t(std::floor(u)), y0 = int64_t(std::floor(v));
          int64_t z0 = int64_t(std::floor(zc));
          double fx = u - double(x0), fy = v - double(y0), fz = zc - double(z0);
          double* o = po + (((i * g + gg) * t + f) * p + k) * dg;
          for (int dz = 0; dz < 2; ++dz) {
            int64_t zi = z0 + dz;
            if (zi < 0 || zi >= z) continue;
            double wz = dz ? fz : 1.0 - fz;
            if (wz == 0.0) continue;
            for (int dy = 0; dy < 2; ++dy) {
              int64_t yi = y0 + dy;
              if (yi < 0 || yi >= h) continue;
              double wy = dy ? fy : 1.0 - fy;
              for (int dx = 0; dx < 2; ++dx) {
                int64_t xi = x0 + dx;
                if (xi < 0 || xi >= w) continue;
                double wx = dx ? fx : 1.0 - fx;
                double weight = (wz * wy) * wx;
                const double* src = pv + ((((gg * dg) * t + f) * z + zi) * h + yi) * w + xi;
                for (int64_t ch = 0; ch < dg; ++ch)
                  o[ch] += weight * src[ch * t * z * h * w];
              }
            }
          }
        }

  detail::wire(out, {vol, pts}, [d, t, z, h, w, n, g, p, dg, stride, zmin, zmax](TensorNode& nn) {
    auto& V = *nn.parents[0];
    auto& P = *nn.parents[1];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t gg = 0; gg < g; ++gg)
        for (int64_t f = 0; f < t; ++f)
          for (int64_t k = 0; k < p; ++k) {
            const double* c = P.data.data() + (((i * g + gg) * t + f) * p + k) * 3;
            double u = c[0] / stride - 0.5;
            double v = c[1] / stride - 0.5;
            bool z_interior = c[2] > zmin && c[2] < zmax;
            double zc = std::clamp(c[2], zmin, zmax) - zmin;
            int64_t x0 = int64_t(std::floor(u)), y0 = int64_t(std::floor(v));
            int64_t z0 = int64_t(std::floor(zc));
            double fx = u - double(x0), fy = v - double(y0), fz = zc - double(z0);
            const double* go = nn.grad.data() + (((i * g + gg) * t + f) * p + k) * dg;
            double du = 0.0, dv = 0.0, dzc = 0.0;
            for (int dz = 0; dz < 2; ++dz) {
              int64_t zi = z0 + dz;
              if (zi < 0 || zi >= z) continue;
              double wz = dz ? fz : 1.0 - fz;
              double dwz = dz ? 1.0 : -1.0;
              for (int dy = 0; dy < 2; ++dy) {
                int64_t yi = y0 + dy;
                if (yi < 0 || yi >= h) continue;
                double wy = dy ? fy : 1.0 - fy;
                double dwy = dy ? 1.0 : -1.0;
                for (int dx = 0; dx < 2; ++dx) {
                  int64_t xi = x0 + dx;
                  if (xi < 0 || xi >= w) continue;
                  double wx = dx ? fx : 1.0 - fx;
                  double dwx = dx ? 1.0 : -1.0;
                  double weight = (wz * wy) * wx;
                  int64_t base = ((((gg * dg) * t + f) * z + zi) * h + yi) * w + xi;
                  double dot = 0.0;
                  for (int64_t ch = 0; ch < dg; ++ch) {
                    double val = V.data[size_t(base + ch * t * z * h * w)];
                    if (V.requires_grad)
                      V.grad[size_t(base + ch * t * z * h * w)] += weight * go[ch];
                    dot += go[ch] * val;
                  }
                  if (P.requires_grad) {
                    du += dwx * (wz * wy) * dot;
                    dv += dwy * (wz * wx) * dot;
                    dzc += dwz * (wy * wx) * dot;
                  }
                }
              }
            }
            if (P.requires_grad) {
              double* gp = P.grad.data() + (((i * g + gg) * t + f) * p + k) * 3;
              gp[0] += du / stride;
              gp[1] += dv / stride;
              gp[2] += z_interior ? dzc : 0.0;
            }
          }
  });
  return out;
}

/// Regular lattice of cell centers strictly inside each decoded box at the
/// box's own scale: offset (i+0.5)/grid - 0.5 of the box extent per axis,
/// dz = 0. Shared by every group; realized through decode_points so the
/// fixed-grid baseline stays differentiable w.r.t. the boxes.
inline Tensor lattice_offsets(int64_t n, int64_t groups, int grid) {
  if (grid < 1) throw ConfigError("lattice_offsets: grid must be >= 1");
  int64_t p = int64_t(grid) * grid;
  Tensor off = Tensor::uninit({n, groups, p, 3});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t g = 0; g < groups; ++g)
      for (int row = 0; row < grid; ++row)
        for (int col = 0; col < grid; ++col) {
          double* o = off.data() + (((i * groups + g) * p) + row * grid + col) * 3;
          o[0] = (double(col) + 0.5) / double(grid) - 0.5;
          o[1] = (double(row) + 0.5) / double(grid) - 0.5;
          o[2] = 0.0;
        }
  return off;
}

/// Query-guided offset regression (one linear map per ASAM module).
/// Initialized with zero weights and ring-pattern biases so the first
/// forward pass samples a fixed spread around each box center.
struct SamplerHead {
  Linear offsets;
  int64_t groups = 0;
  int64_t p_in = 0;

  SamplerHead() = default;
  SamplerHead(const std::string& name, int64_t d, int64_t g, int64_t p, Rng& rng, double ring_radius = 0.25)
      : offsets(name + ".offsets", d, g * p * 3, rng, -1.0, /*zero_init=*/true), groups(g), p_in(p) {
    double* b = offsets.b.value.data();
    for (int64_t gg = 0; gg < g; ++gg)
      for (int64_t i = 0; i < p; ++i) {
        double angle = 2.0 * 3.141592653589793 * (double(i) + double(gg) / double(g)) / double(p);
        b[(gg * p + i) * 3 + 0] = ring_radius * std::cos(angle);
        b[(gg * p + i) * 3 + 1] = ring_radius * std::sin(angle);
        b[(gg * p + i) * 3 + 2] = 0.0;
      }
  }

  /// [N, D] spatial queries -> [N, G, P_in, 3] offsets.
  Tensor regress(const Tensor& spatial_queries) const {
    Tensor flat = offsets.forward(spatial_queries);
    return reshape(flat, {spatial_queries.dim(0), groups, p_in, 3});
  }

  void visit(const ParamVisitor& v) { offsets.visit(v); }
};

}  // namespace stmixer
