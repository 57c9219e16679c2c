#include "stmixer/synthdata.hpp"

#include <gtest/gtest.h>

#include "stmixer/manifest.hpp"

#include <cstdio>
#include <filesystem>

using namespace stmixer;

TEST(Synthdata, SameSeedBitwiseIdentical) {
  GeneratorConfig cfg;
  ClipSample a = generate_clip(1234, cfg);
  ClipSample b = generate_clip(1234, cfg);
  EXPECT_EQ(a.video.values(), b.video.values());
  ASSERT_EQ(a.gt.size(), b.gt.size());
  for (size_t i = 0; i < a.gt.size(); ++i) {
    EXPECT_EQ(a.gt[i].labels, b.gt[i].labels);
    EXPECT_DOUBLE_EQ(a.gt[i].box.x1, b.gt[i].box.x1);
  }
}

TEST(Synthdata, DifferentSeedsDiffer) {
  GeneratorConfig cfg;
  EXPECT_NE(generate_clip(1, cfg).video.values(), generate_clip(2, cfg).video.values());
}

TEST(Synthdata, SingleActorIsAlone) {
  GeneratorConfig cfg;
  cfg.min_actors = 1;
  cfg.max_actors = 1;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ClipSample clip = generate_clip(seed, cfg);
    ASSERT_EQ(clip.gt.size(), 1u);
    EXPECT_TRUE(clip.gt[0].labels.count(kAlone));
    EXPECT_FALSE(clip.gt[0].labels.count(kNearOther));
  }
}

TEST(Synthdata, LeftMovingActorIsLabelledMoveLeft) {
  GeneratorConfig cfg;
  cfg.min_actors = 1;
  cfg.max_actors = 1;
  // scan seeds for a clearly left-moving actor, then check the label and
  // recompute the trajectory from the stored parameters
  bool found = false;
  for (uint64_t seed = 0; seed < 200 && !found; ++seed) {
    ClipSample clip = generate_clip(seed, cfg);
    const ActorParams& a = clip.actors[0];
    if (a.vx <= -1.2) {
      found = true;
      EXPECT_TRUE(clip.gt[0].labels.count(kMoveLeft));
      EXPECT_FALSE(clip.gt[0].labels.count(kMoveRight));
      EXPECT_FALSE(clip.gt[0].labels.count(kStill));
      Box key = a.box_at(0.0);
      EXPECT_NEAR(key.cx(), a.cx, 1e-12);
      Box prev = a.box_at(-1.0);
      EXPECT_LT(key.cx(), prev.cx());  // moving left in frame coordinates
    }
  }
  EXPECT_TRUE(found);
}

// Independent analytic re-derivation of every label from stored actor
// parameters, following the documented thresholds.
static std::set<int> oracle_labels(const std::vector<ActorParams>& actors, size_t i,
                                   double d_near_factor) {
  const ActorParams& a = actors[i];
  std::set<int> s;
  if (a.vx <= -1.0) s.insert(kMoveLeft);
  if (a.vx >= 1.0) s.insert(kMoveRight);
  if (a.vx >= -0.5 && a.vx <= 0.5) s.insert(kStill);
  if (a.growth >= 1.02) s.insert(kGrow);
  if (a.growth <= 0.98) s.insert(kShrink);
  double mean_w = 0;
  for (const auto& o : actors) mean_w += o.w;
  mean_w /= double(actors.size());
  bool near = false;
  for (size_t j = 0; j < actors.size(); ++j) {
    if (j == i) continue;
    double dx = actors[j].cx - a.cx, dy = actors[j].cy - a.cy;
    if (std::hypot(dx, dy) < d_near_factor * mean_w) near = true;
  }
  s.insert(near ? kNearOther : kAlone);
  if (a.reappearing) s.insert(kReappearing);
  return s;
}

TEST(Synthdata, LabelsReproducibleFromStoredParameters) {
  GeneratorConfig cfg;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ClipSample clip = generate_clip(seed, cfg);
    for (size_t i = 0; i < clip.gt.size(); ++i)
      EXPECT_EQ(clip.gt[i].labels, oracle_labels(clip.actors, i, cfg.d_near_factor))
          << "seed " << seed << " actor " << i;
  }
}

TEST(Synthdata, PixelAndBoxInvariants) {
  GeneratorConfig cfg;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    ClipSample clip = generate_clip(seed, cfg);
    EXPECT_EQ(clip.keyframe_index, cfg.t / 2);
    for (double v : clip.video.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(clip.gt.size(), 1u);
    EXPECT_LE(int(clip.gt.size()), cfg.max_actors);
    for (const GroundTruth& g : clip.gt) {
      EXPECT_LT(g.box.x1, g.box.x2);
      EXPECT_LT(g.box.y1, g.box.y2);
      EXPECT_GE(g.box.x1, 0.0);
      EXPECT_GE(g.box.y1, 0.0);
      EXPECT_LE(g.box.x2, double(cfg.width));
      EXPECT_LE(g.box.y2, double(cfg.height));
      EXPECT_FALSE(g.labels.empty());
    }
  }
}

TEST(Synthdata, ImpossiblePackingRaisesGenerationError) {
  GeneratorConfig cfg;
  cfg.min_actors = 3;
  cfg.max_actors = 3;
  cfg.identity_pool = 50;
  cfg.height = 32;
  cfg.width = 32;
  cfg.min_size = 30.0;
  cfg.max_size = 31.5;
  bool threw = false;
  for (uint64_t seed = 0; seed < 5 && !threw; ++seed) {
    try {
      std::vector<int> ids(40);
      for (int i = 0; i < 40; ++i) ids[size_t(i)] = i;
      generate_clip_with_identities(seed, cfg, ids, {});
    } catch (const GenerationError&) {
      threw = true;
    }
  }
  EXPECT_TRUE(threw);
}

TEST(LongVideo, SingleClipNeverReappearing) {
  GeneratorConfig cfg;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto clips = generate_long_video(seed, 1, cfg);
    ASSERT_EQ(clips.size(), 1u);
    for (const GroundTruth& g : clips[0].gt) EXPECT_FALSE(g.labels.count(kReappearing));
  }
}

TEST(LongVideo, ReappearanceFollowsConstructionRule) {
  GeneratorConfig cfg;
  cfg.identity_pool = 3;
  cfg.min_actors = 1;
  cfg.max_actors = 2;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto clips = generate_long_video(seed, 5, cfg);
    std::set<int> seen;
    for (const ClipSample& clip : clips) {
      for (size_t i = 0; i < clip.actors.size(); ++i) {
        bool expected = seen.count(clip.actors[i].identity) > 0;
        EXPECT_EQ(clip.gt[i].labels.count(kReappearing) > 0, expected) << "seed " << seed;
      }
      for (const ActorParams& a : clip.actors) seen.insert(a.identity);
    }
  }
}

TEST(LongVideo, ActorInClipsZeroAndLater) {
  // an identity present in clip 0 and again later carries the label only
  // on the later occurrence
  GeneratorConfig cfg;
  cfg.identity_pool = 2;
  cfg.min_actors = 1;
  cfg.max_actors = 1;
  bool found = false;
  for (uint64_t seed = 0; seed < 100 && !found; ++seed) {
    auto clips = generate_long_video(seed, 5, cfg);
    int id0 = clips[0].actors[0].identity;
    EXPECT_FALSE(clips[0].gt[0].labels.count(kReappearing));
    for (size_t c = 1; c < clips.size(); ++c) {
      if (clips[c].actors[0].identity == id0) {
        EXPECT_TRUE(clips[c].gt[0].labels.count(kReappearing)) << "seed " << seed << " clip " << c;
        found = true;
        break;
      }
    }
  }
  EXPECT_TRUE(found);
}

TEST(Vocabulary, FixedOrderAndRequiredClasses) {
  const ActionVocabulary& v = ActionVocabulary::standard();
  EXPECT_EQ(v.count(), 8);
  EXPECT_EQ(v.names[kMoveLeft], "move_left");
  EXPECT_EQ(v.names[kGrow], "grow");
  EXPECT_EQ(v.names[kNearOther], "near_other");
  EXPECT_EQ(v.names[kAlone], "alone");
  EXPECT_EQ(v.names[kReappearing], "reappearing");
  EXPECT_EQ(v.index_of("shrink"), kShrink);
  EXPECT_THROW(v.index_of("jump"), ConfigError);
}

TEST(Manifest, RoundtripRegeneratesIdenticalDataset) {
  GeneratorConfig gen;
  gen.t = 4;
  gen.height = 32;
  gen.width = 32;
  gen.min_size = 8;
  gen.max_size = 14;
  Dataset d = build_dataset(gen, 5, 42, 2);
  auto path = std::filesystem::temp_directory_path() / "stmixer_manifest_test.jsonl";
  write_manifest(d, path);
  Dataset loaded = load_manifest(path);
  ASSERT_EQ(loaded.videos.size(), d.videos.size());
  for (size_t v = 0; v < d.videos.size(); ++v) {
    ASSERT_EQ(loaded.videos[v].size(), d.videos[v].size());
    for (size_t c = 0; c < d.videos[v].size(); ++c) {
      EXPECT_EQ(loaded.videos[v][c].video.values(), d.videos[v][c].video.values());
      for (size_t a = 0; a < d.videos[v][c].gt.size(); ++a)
        EXPECT_EQ(loaded.videos[v][c].gt[a].labels, d.videos[v][c].gt[a].labels);
    }
  }
  std::filesystem::remove(path);
}

TEST(Manifest, ByteIdenticalForSameInputs) {
  GeneratorConfig gen;
  gen.t = 4;
  gen.height = 32;
  gen.width = 32;
  Dataset a = build_dataset(gen, 4, 7);
  Dataset b = build_dataset(gen, 4, 7);
  EXPECT_EQ(manifest_to_string(a), manifest_to_string(b));
}
