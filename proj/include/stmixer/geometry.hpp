#pragma once

#include <cmath>

#include "stmixer/rng.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

/// Axis-aligned box in continuous input-pixel coordinates, x1 < x2, y1 < y2.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

/// Box code (x, y, z, r): center, log2 scale and log2 aspect ratio.
/// Width is 2^(z-r) and height is 2^(z+r), so z = log2(sqrt(w*h)) and
/// r = log2(sqrt(h/w)).
struct PositionalQuery {
  double x = 0.0, y = 0.0, z = 0.0, r = 0.0;
};

inline Box pquery_to_box(const PositionalQuery& q) {
  double w = std::exp2(q.z - q.r);
  double h = std::exp2(q.z + q.r);
  return Box{q.x - 0.5 * w, q.y - 0.5 * h, q.x + 0.5 * w, q.y + 0.5 * h};
}

inline PositionalQuery box_to_pquery(const Box& b) {
  if (!(b.x2 > b.x1) || !(b.y2 > b.y1))
    throw GeometryError("box_to_pquery: degenerate box [" + std::to_string(b.x1) + "," +
                        std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                        std::to_string(b.y2) + "]");
  double w = b.width(), h = b.height();
  return PositionalQuery{b.cx(), b.cy(), 0.5 * std::log2(w * h), 0.5 * std::log2(h / w)};
}

inline double iou(const Box& a, const Box& b) {
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  double uni = a.area() + b.area() - inter;
  return inter / uni;
}

/// Generalized IoU: IoU minus the fraction of the convex hull not covered
/// by the union. Always in (-1, 1]; equals IoU when the hull is the union.
inline double giou(const Box& a, const Box& b) {
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  double uni = a.area() + b.area() - inter;
  double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (hull - uni) / hull;
}

/// The three query blocks of the decoder. Content queries are [N, D]
/// tensors; positional queries are the rows of a [N, 4] tensor in
/// (x, y, z, r) order.
struct QuerySet {
  Tensor spatial;     // Q_s [N, D]
  Tensor temporal;    // Q_t [N, D]
  Tensor positional;  // Q_p [N, 4]

  int64_t count() const { return spatial.dim(0); }

  PositionalQuery pquery(int64_t n) const {
    const double* p = positional.data() + n * 4;
    return PositionalQuery{p[0], p[1], p[2], p[3]};
  }
};

/// Initial queries: every positional query decodes to the whole keyframe;
/// content queries are seeded small-variance normals.
inline QuerySet init_queries(int64_t n, int64_t d, double frame_w, double frame_h, Rng& rng) {
  if (n <= 0 || d <= 0) throw ConfigError("init_queries: N and D must be positive");
  QuerySet qs;
  qs.spatial = Tensor::randn({n, d}, rng, 0.1);
  qs.temporal = Tensor::randn({n, d}, rng, 0.1);
  PositionalQuery whole = box_to_pquery(Box{0.0, 0.0, frame_w, frame_h});
  qs.positional = Tensor::uninit({n, 4});
  for (int64_t i = 0; i < n; ++i) {
    double* p = qs.positional.data() + i * 4;
    p[0] = whole.x;
    p[1] = whole.y;
    p[2] = whole.z;
    p[3] = whole.r;
  }
  return qs;
}

// ---------------------------------------------------------------------------
// differentiable codecs over [N, 4] positional-query tensors
// ---------------------------------------------------------------------------

constexpr double kLn2 = 0.6931471805599453094172321214581766;

/// (x, y, z, r) rows -> (x1, y1, x2, y2) rows, differentiable.
inline Tensor pquery_to_corners(const Tensor& q) {
  if (q.rank() != 2 || q.dim(1) != 4)
    throw DimensionError("pquery_to_corners: want [N,4], got " + shape_str(q.shape()));
  int64_t n = q.dim(0);
  Tensor out = Tensor::uninit({n, 4});
  for (int64_t i = 0; i < n; ++i) {
    const double* p = q.data() + i * 4;
    double w = std::exp2(p[2] - p[3]);
    double h = std::exp2(p[2] + p[3]);
    double* o = out.data() + i * 4;
    o[0] = p[0] - 0.5 * w;
    o[1] = p[1] - 0.5 * h;
    o[2] = p[0] + 0.5 * w;
    o[3] = p[1] + 0.5 * h;
  }
  detail::wire(out, {q}, [n](TensorNode& nn) {
    auto& Q = *nn.parents[0];
    for (int64_t i = 0; i < n; ++i) {
      const double* p = Q.data.data() + i * 4;
      const double* g = nn.grad.data() + i * 4;
      double w = std::exp2(p[2] - p[3]);
      double h = std::exp2(p[2] + p[3]);
      double* gq = Q.grad.data() + i * 4;
      gq[0] += g[0] + g[2];
      gq[1] += g[1] + g[3];
      // d(w/2)/dz = ln2 * w/2, d(w/2)/dr = -ln2 * w/2; h symmetric with +r.
      gq[2] += kLn2 * 0.5 * (w * (g[2] - g[0]) + h * (g[3] - g[1]));
      gq[3] += kLn2 * 0.5 * (-w * (g[2] - g[0]) + h * (g[3] - g[1]));
    }
  });
  return out;
}

/// Positional-query update with width/height-scaled center deltas:
/// x += dx * 2^(z-r), y += dy * 2^(z+r), z += dz, r += dr.
inline Tensor apply_box_deltas(const Tensor& q, const Tensor& deltas) {
  if (q.rank() != 2 || q.dim(1) != 4 || deltas.shape() != q.shape())
    throw DimensionError("apply_box_deltas: want matching [N,4] tensors, got " +
                         shape_str(q.shape()) + " and " + shape_str(deltas.shape()));
  int64_t n = q.dim(0);
  Tensor out = Tensor::uninit({n, 4});
  for (int64_t i = 0; i < n; ++i) {
    const double* p = q.data() + i * 4;
    const double* d = deltas.data() + i * 4;
    double w = std::exp2(p[2] - p[3]);
    double h = std::exp2(p[2] + p[3]);
    double* o = out.data() + i * 4;
    o[0] = p[0] + d[0] * w;
    o[1] = p[1] + d[1] * h;
    o[2] = p[2] + d[2];
    o[3] = p[3] + d[3];
  }
  detail::wire(out, {q, deltas}, [n](TensorNode& nn) {
    auto& Q = *nn.parents[0];
    auto& D = *nn.parents[1];
    for (int64_t i = 0; i < n; ++i) {
      const double* p = Q.data.data() + i * 4;
      const double* d = D.data.data() + i * 4;
      const double* g = nn.grad.data() + i * 4;
      double w = std::exp2(p[2] - p[3]);
      double h = std::exp2(p[2] + p[3]);
      if (Q.requires_grad) {
        double* gq = Q.grad.data() + i * 4;
        gq[0] += g[0];
        gq[1] += g[1];
        gq[2] += g[2] + kLn2 * (d[0] * w * g[0] + d[1] * h * g[1]);
        gq[3] += g[3] + kLn2 * (-d[0] * w * g[0] + d[1] * h * g[1]);
      }
      if (D.requires_grad) {
        double* gd = D.grad.data() + i * 4;
        gd[0] += g[0] * w;
        gd[1] += g[1] * h;
        gd[2] += g[2];
        gd[3] += g[3];
      }
    }
  });
  return out;
}

/// GIoU of corresponding rows of two [K, 4] corner tensors, composed from
/// differentiable primitives. Returns [K, 1].
inline Tensor giou_pairs(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 4 || b.shape() != a.shape())
    throw DimensionError("giou_pairs: want matching [K,4] corner tensors");
  auto col = [](const Tensor& t, int64_t c) { return slice(t, 1, c, 1); };
  Tensor ax1 = col(a, 0), ay1 = col(a, 1), ax2 = col(a, 2), ay2 = col(a, 3);
  Tensor bx1 = col(b, 0), by1 = col(b, 1), bx2 = col(b, 2), by2 = col(b, 3);
  Tensor iw = relu(min_ew(ax2, bx2) - max_ew(ax1, bx1));
  Tensor ih = relu(min_ew(ay2, by2) - max_ew(ay1, by1));
  Tensor inter = iw * ih;
  Tensor area_a = (ax2 - ax1) * (ay2 - ay1);
  Tensor area_b = (bx2 - bx1) * (by2 - by1);
  Tensor uni = add(area_a, area_b) - inter;
  Tensor hull = (max_ew(ax2, bx2) - min_ew(ax1, bx1)) * (max_ew(ay2, by2) - min_ew(ay1, by1));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace stmixer
