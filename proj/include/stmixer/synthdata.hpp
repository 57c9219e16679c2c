#pragma once

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stmixer/geometry.hpp"
#include "stmixer/hash.hpp"
#include "stmixer/rng.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

/// Fixed, ordered action classes. The first five depend only on the actor's
/// own trajectory and box; near_other/alone depend on the surrounding
/// keyframe geometry, and reappearing depends on earlier clips of the same
/// video, so neither is decidable from the actor box alone.
struct ActionVocabulary {
  std::vector<std::string> names;

  static const ActionVocabulary& standard() {
    static ActionVocabulary v{{"move_left", "move_right", "still", "grow", "shrink",
                               "near_other", "alone", "reappearing"}};
    return v;
  }

  int64_t count() const { return int64_t(names.size()); }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return int(i);
    throw ConfigError("unknown action class '" + name + "'");
  }
};

enum ActionClass : int {
  kMoveLeft = 0,
  kMoveRight = 1,
  kStill = 2,
  kGrow = 3,
  kShrink = 4,
  kNearOther = 5,
  kAlone = 6,
  kReappearing = 7,
};

struct GeneratorConfig {
  int64_t t = 8;       // frames per clip, even; keyframe is t/2
  int64_t height = 64;
  int64_t width = 64;
  int min_actors = 1;
  int max_actors = 3;
  int identity_pool = 6;       // number of distinct actor textures
  double min_size = 10.0;      // keyframe box side range, pixels
  double max_size = 22.0;
  double d_near_factor = 1.5;  // near_other radius in mean actor widths

  std::string canonical() const {
    std::ostringstream os;
    os << "t=" << t << ";height=" << height << ";width=" << width
       << ";min_actors=" << min_actors << ";max_actors=" << max_actors
       << ";identity_pool=" << identity_pool << ";min_size=" << min_size
       << ";max_size=" << max_size << ";d_near_factor=" << d_near_factor;
    return os.str();
  }

  uint64_t hash() const { return fnv1a64(canonical()); }
};

/// Everything needed to replay one actor analytically. center(t) =
/// keyframe center + velocity * (t - keyframe), size(t) = keyframe size *
/// growth^(t - keyframe).
struct ActorParams {
  int identity = 0;
  double cx = 0.0, cy = 0.0;  // keyframe center
  double vx = 0.0, vy = 0.0;  // pixels per frame
  double w = 0.0, h = 0.0;    // keyframe size
  double growth = 1.0;        // per-frame scale factor
  bool reappearing = false;

  Box box_at(double dt) const {
    double s = std::pow(growth, dt);
    double bw = w * s, bh = h * s;
    double x = cx + vx * dt, y = cy + vy * dt;
    return Box{x - 0.5 * bw, y - 0.5 * bh, x + 0.5 * bw, y + 0.5 * bh};
  }
};

struct GroundTruth {
  Box box;
  std::set<int> labels;
};

struct ClipSample {
  Tensor video;  // [1, T, H, W], intensities in [0, 1]
  std::vector<GroundTruth> gt;
  int64_t keyframe_index = 0;
  std::vector<ActorParams> actors;  // generation audit trail, not model input
  uint64_t seed = 0;
};

// Label thresholds. The sampled parameter ranges stay clear of these
// boundaries so each label is unambiguous.
constexpr double kMoveThreshold = 1.0;   // |vx| >= this -> move_left/right
constexpr double kStillThreshold = 0.5;  // |vx| <= this -> still
constexpr double kGrowThreshold = 1.02;
constexpr double kShrinkThreshold = 0.98;

/// Labels that depend only on the actor's own trajectory.
inline std::set<int> motion_labels(const ActorParams& a) {
  std::set<int> s;
  if (a.vx <= -kMoveThreshold) s.insert(kMoveLeft);
  if (a.vx >= kMoveThreshold) s.insert(kMoveRight);
  if (std::fabs(a.vx) <= kStillThreshold) s.insert(kStill);
  if (a.growth >= kGrowThreshold) s.insert(kGrow);
  if (a.growth <= kShrinkThreshold) s.insert(kShrink);
  return s;
}

/// near_other iff another actor's keyframe center lies within
/// d_near_factor times the mean keyframe width of all actors in the clip.
inline bool is_near_other(const std::vector<ActorParams>& actors, size_t i, double d_near_factor) {
  if (actors.size() < 2) return false;
  double mean_w = 0.0;
  for (const ActorParams& a : actors) mean_w += a.w;
  mean_w /= double(actors.size());
  double d_near = d_near_factor * mean_w;
  for (size_t j = 0; j < actors.size(); ++j) {
    if (j == i) continue;
    double dx = actors[j].cx - actors[i].cx;
    double dy = actors[j].cy - actors[i].cy;
    if (std::sqrt(dx * dx + dy * dy) < d_near) return true;
  }
  return false;
}

inline std::set<int> derive_labels(const std::vector<ActorParams>& actors, size_t i,
                                   double d_near_factor) {
  std::set<int> s = motion_labels(actors[i]);
  s.insert(is_near_other(actors, i, d_near_factor) ? kNearOther : kAlone);
  if (actors[i].reappearing) s.insert(kReappearing);
  return s;
}

namespace detail {

/// Per-identity texture: a base intensity plus stripes anchored to the box
/// origin, so the pattern travels with the actor.
inline double actor_intensity(int identity, int pool, double u, double v) {
  double base = 0.25 + 0.55 * double(identity) / double(std::max(1, pool - 1));
  int period = 3 + identity % 3;
  double coord = (identity % 2 == 0) ? u : v;
  int band = int(std::floor(coord / double(period)));
  double stripe = (((band % 2) + 2) % 2 == 0) ? 0.15 : -0.12;
  return std::clamp(base + stripe, 0.0, 1.0);
}

inline double feasible_center(Rng& rng, double frame, int64_t t, int64_t key, double vel,
                              double size, double growth, bool& ok) {
  double lo = 0.0, hi = frame;
  for (int64_t f = 0; f < t; ++f) {
    double dt = double(f - key);
    double half = 0.5 * size * std::pow(growth, dt);
    lo = std::max(lo, half - vel * dt);
    hi = std::min(hi, frame - half - vel * dt);
  }
  if (lo > hi) {
    ok = false;
    return 0.0;
  }
  ok = true;
  return rng.uniform(lo, hi);
}

inline ActorParams sample_actor(Rng& rng, const GeneratorConfig& cfg, int identity) {
  ActorParams a;
  a.identity = identity;
  int motion = int(rng.uniform_int(0, 2));  // 0 left, 1 right, 2 still
  if (motion == 0)
    a.vx = -rng.uniform(1.2, 2.4);
  else if (motion == 1)
    a.vx = rng.uniform(1.2, 2.4);
  else
    a.vx = rng.uniform(-0.2, 0.2);
  a.vy = rng.uniform(-0.8, 0.8);
  int scale = int(rng.uniform_int(0, 2));  // 0 grow, 1 shrink, 2 none
  if (scale == 0)
    a.growth = rng.uniform(1.04, 1.08);
  else if (scale == 1)
    a.growth = rng.uniform(0.92, 0.96);
  else
    a.growth = 1.0;
  a.w = rng.uniform(cfg.min_size, cfg.max_size);
  a.h = rng.uniform(cfg.min_size, cfg.max_size);
  return a;
}

inline void render_clip(ClipSample& clip, const GeneratorConfig& cfg) {
  int64_t t = cfg.t, hh = cfg.height, ww = cfg.width;
  clip.video = Tensor::zeros({1, t, hh, ww});
  double* px = clip.video.data();
  for (int64_t f = 0; f < t; ++f) {
    double dt = double(f - clip.keyframe_index);
    for (const ActorParams& a : clip.actors) {
      Box b = a.box_at(dt);
      int64_t y0 = std::max<int64_t>(0, int64_t(std::ceil(b.y1 - 0.5)));
      int64_t y1 = std::min<int64_t>(hh - 1, int64_t(std::floor(b.y2 - 0.5)));
      int64_t x0 = std::max<int64_t>(0, int64_t(std::ceil(b.x1 - 0.5)));
      int64_t x1 = std::min<int64_t>(ww - 1, int64_t(std::floor(b.x2 - 0.5)));
      for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
          double u = (double(x) + 0.5) - b.x1;
          double v = (double(y) + 0.5) - b.y1;
          px[(f * hh + y) * ww + x] = actor_intensity(a.identity, cfg.identity_pool, u, v);
        }
    }
  }
}

}  // namespace detail

/// Generates one clip with the given actor identities (reappearing flags
/// parallel to them). The output is a pure function of all arguments.
inline ClipSample generate_clip_with_identities(uint64_t seed, const GeneratorConfig& cfg,
                                                const std::vector<int>& identities,
                                                const std::vector<bool>& reappearing) {
  if (cfg.t <= 0 || cfg.t % 2 != 0) throw ConfigError("generator: t must be positive and even");
  if (cfg.height <= 0 || cfg.width <= 0) throw ConfigError("generator: frame sizes must be positive");
  if (identities.empty()) throw ConfigError("generator: at least one actor required");
  Rng rng(splitmix64(seed ^ 0x9d2c5680u));
  ClipSample clip;
  clip.seed = seed;
  clip.keyframe_index = cfg.t / 2;

  for (size_t i = 0; i < identities.size(); ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      ActorParams a = detail::sample_actor(rng, cfg, identities[i]);
      a.reappearing = i < reappearing.size() && reappearing[i];
      bool okx = false, oky = false;
      a.cx = detail::feasible_center(rng, double(cfg.width), cfg.t, clip.keyframe_index, a.vx, a.w,
                                     a.growth, okx);
      a.cy = detail::feasible_center(rng, double(cfg.height), cfg.t, clip.keyframe_index, a.vy, a.h,
                                     a.growth, oky);
      if (!okx || !oky) continue;
      Box mine{a.cx - 0.5 * a.w, a.cy - 0.5 * a.h, a.cx + 0.5 * a.w, a.cy + 0.5 * a.h};
      bool overlaps = false;
      for (const ActorParams& other : clip.actors) {
        Box ob{other.cx - 0.5 * other.w, other.cy - 0.5 * other.h, other.cx + 0.5 * other.w,
               other.cy + 0.5 * other.h};
        if (iou(mine, ob) > 0.5) overlaps = true;
      }
      if (overlaps) continue;
      clip.actors.push_back(a);
      placed = true;
    }
    if (!placed)
      throw GenerationError("generator: could not place " + std::to_string(identities.size()) +
                            " actors in a " + std::to_string(cfg.width) + "x" +
                            std::to_string(cfg.height) + " frame without >50% overlap");
  }

  for (size_t i = 0; i < clip.actors.size(); ++i) {
    GroundTruth g;
    g.box = clip.actors[i].box_at(0.0);
    g.labels = derive_labels(clip.actors, i, cfg.d_near_factor);
    clip.gt.push_back(std::move(g));
  }
  detail::render_clip(clip, cfg);
  return clip;
}

/// Deterministic single clip: actor count and identities drawn from the seed.
inline ClipSample generate_clip(uint64_t seed, const GeneratorConfig& cfg) {
  if (cfg.min_actors < 1 || cfg.max_actors < cfg.min_actors)
    throw ConfigError("generator: bad actor count range");
  if (cfg.identity_pool < cfg.max_actors)
    throw ConfigError("generator: identity_pool must be >= max_actors");
  Rng rng(splitmix64(seed ^ 0x85ebca6bu));
  int n = int(rng.uniform_int(cfg.min_actors, cfg.max_actors));
  std::vector<int> pool;
  for (int i = 0; i < cfg.identity_pool; ++i) pool.push_back(i);
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    int j = int(rng.uniform_int(0, int64_t(pool.size()) - 1));
    ids.push_back(pool[size_t(j)]);
    pool.erase(pool.begin() + j);
  }
  return generate_clip_with_identities(seed, cfg, ids, {});
}

/// A video of n_clips clips with persistent actor identities. An actor is
/// labelled "reappearing" in clip c iff the same identity occurred in any
/// earlier clip of the video; the label is undecidable from one clip alone.
inline std::vector<ClipSample> generate_long_video(uint64_t seed, int64_t n_clips,
                                                   const GeneratorConfig& cfg) {
  if (n_clips < 1) throw ConfigError("generate_long_video: n_clips must be >= 1");
  if (cfg.identity_pool < cfg.max_actors)
    throw ConfigError("generator: identity_pool must be >= max_actors");
  Rng video_rng(splitmix64(seed ^ 0xc2b2ae35u));
  std::vector<ClipSample> clips;
  std::set<int> seen;
  for (int64_t c = 0; c < n_clips; ++c) {
    int n = int(video_rng.uniform_int(cfg.min_actors, cfg.max_actors));
    std::vector<int> pool;
    for (int i = 0; i < cfg.identity_pool; ++i) pool.push_back(i);
    std::vector<int> ids;
    std::vector<bool> reapp;
    for (int i = 0; i < n; ++i) {
      int j = int(video_rng.uniform_int(0, int64_t(pool.size()) - 1));
      ids.push_back(pool[size_t(j)]);
      reapp.push_back(seen.count(pool[size_t(j)]) > 0);
      pool.erase(pool.begin() + j);
    }
    uint64_t clip_seed = splitmix64(seed ^ splitmix64(uint64_t(c) + 0x1234567));
    clips.push_back(generate_clip_with_identities(clip_seed, cfg, ids, reapp));
    for (int id : ids) seen.insert(id);
  }
  return clips;
}

}  // namespace stmixer
