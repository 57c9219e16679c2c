#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stmixer/synthdata.hpp"

namespace stmixer {

/// A dataset is a list of videos, each a list of clips. Datasets are
/// regenerable: the manifest stores per-video seeds and the generator
/// config, not pixels.
struct Dataset {
  GeneratorConfig generator;
  int64_t video_len = 1;
  std::vector<uint64_t> video_seeds;
  std::vector<std::vector<ClipSample>> videos;

  int64_t total_clips() const {
    int64_t n = 0;
    for (const auto& v : videos) n += int64_t(v.size());
    return n;
  }

  /// Flat (video, clip) index pairs in deterministic order.
  std::vector<std::pair<int64_t, int64_t>> flat_index() const {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (size_t v = 0; v < videos.size(); ++v)
      for (size_t c = 0; c < videos[v].size(); ++c) out.emplace_back(int64_t(v), int64_t(c));
    return out;
  }

  const ClipSample& clip(const std::pair<int64_t, int64_t>& idx) const {
    return videos[size_t(idx.first)][size_t(idx.second)];
  }
};

/// count videos of video_len clips each; per-video seeds derive from the
/// master seed only.
inline Dataset build_dataset(const GeneratorConfig& gen, int64_t count, uint64_t seed,
                             int64_t video_len = 1) {
  if (count < 0) throw ConfigError("build_dataset: negative count");
  if (video_len < 1) throw ConfigError("build_dataset: video_len must be >= 1");
  Dataset d;
  d.generator = gen;
  d.video_len = video_len;
  for (int64_t v = 0; v < count; ++v) {
    uint64_t vseed = splitmix64(seed ^ splitmix64(uint64_t(v) + 0xabcdef));
    d.video_seeds.push_back(vseed);
    if (video_len == 1)
      d.videos.push_back({generate_clip(vseed, gen)});
    else
      d.videos.push_back(generate_long_video(vseed, video_len, gen));
  }
  return d;
}

/// Newline-delimited JSON: a header record with the generator config and
/// its hash, then one record per clip (video, clip, video seed, labels).
inline std::string manifest_to_string(const Dataset& d) {
  const ActionVocabulary& vocab = ActionVocabulary::standard();
  std::ostringstream os;
  nlohmann::ordered_json header;
  header["format"] = 1;
  header["kind"] = "manifest";
  nlohmann::ordered_json gen;
  gen["frames"] = d.generator.t;
  gen["height"] = d.generator.height;
  gen["width"] = d.generator.width;
  gen["min_actors"] = d.generator.min_actors;
  gen["max_actors"] = d.generator.max_actors;
  gen["identity_pool"] = d.generator.identity_pool;
  gen["min_size"] = d.generator.min_size;
  gen["max_size"] = d.generator.max_size;
  gen["d_near_factor"] = d.generator.d_near_factor;
  header["generator"] = std::move(gen);
  std::ostringstream hash_hex;
  hash_hex << std::hex << d.generator.hash();
  header["cfg_hash"] = hash_hex.str();
  header["video_len"] = d.video_len;
  header["videos"] = int64_t(d.videos.size());
  os << header.dump() << "\n";
  for (size_t v = 0; v < d.videos.size(); ++v) {
    for (size_t c = 0; c < d.videos[v].size(); ++c) {
      nlohmann::ordered_json rec;
      rec["video"] = int64_t(v);
      rec["clip"] = int64_t(c);
      rec["seed"] = d.video_seeds[v];
      nlohmann::ordered_json labels = nlohmann::ordered_json::array();
      for (const GroundTruth& g : d.videos[v][c].gt) {
        nlohmann::ordered_json names = nlohmann::ordered_json::array();
        for (int cls : g.labels) names.push_back(vocab.names[size_t(cls)]);
        labels.push_back(std::move(names));
      }
      rec["labels"] = std::move(labels);
      os << rec.dump() << "\n";
    }
  }
  return os.str();
}

inline void write_manifest(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("manifest: cannot open '" + path.string() + "' for writing");
  out << manifest_to_string(d);
  if (!out) throw IoError("manifest: short write to '" + path.string() + "'");
}

/// Regenerates the dataset from the manifest seeds and verifies that the
/// regenerated labels match the recorded ones.
inline Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("manifest: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest: empty file '" + path.string() + "'");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("kind", "") != "manifest")
    throw IoError("manifest: '" + path.string() + "' is not a dataset manifest");
  Dataset d;
  const auto& gen = header.at("generator");
  d.generator.t = gen.at("frames").get<int64_t>();
  d.generator.height = gen.at("height").get<int64_t>();
  d.generator.width = gen.at("width").get<int64_t>();
  d.generator.min_actors = gen.at("min_actors").get<int>();
  d.generator.max_actors = gen.at("max_actors").get<int>();
  d.generator.identity_pool = gen.at("identity_pool").get<int>();
  d.generator.min_size = gen.at("min_size").get<double>();
  d.generator.max_size = gen.at("max_size").get<double>();
  d.generator.d_near_factor = gen.at("d_near_factor").get<double>();
  d.video_len = header.at("video_len").get<int64_t>();
  std::ostringstream hash_hex;
  hash_hex << std::hex << d.generator.hash();
  if (header.at("cfg_hash").get<std::string>() != hash_hex.str())
    throw IoError("manifest: cfg_hash does not match the recorded generator config");

  const ActionVocabulary& vocab = ActionVocabulary::standard();
  int64_t current_video = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw IoError("manifest: malformed record line");
    int64_t v = rec.at("video").get<int64_t>();
    int64_t c = rec.at("clip").get<int64_t>();
    uint64_t seed = rec.at("seed").get<uint64_t>();
    if (v == current_video + 1 && c == 0) {
      current_video = v;
      d.video_seeds.push_back(seed);
      if (d.video_len == 1)
        d.videos.push_back({generate_clip(seed, d.generator)});
      else
        d.videos.push_back(generate_long_video(seed, d.video_len, d.generator));
    } else if (v != current_video) {
      throw IoError("manifest: records out of order at video " + std::to_string(v));
    }
    const ClipSample& clip = d.videos[size_t(v)][size_t(c)];
    const auto& labels = rec.at("labels");
    if (labels.size() != clip.gt.size())
      throw IoError("manifest: regenerated clip disagrees with recorded actor count");
    for (size_t a = 0; a < clip.gt.size(); ++a) {
      std::set<int> recorded;
      for (const auto& name : labels[a]) recorded.insert(vocab.index_of(name.get<std::string>()));
      if (recorded != clip.gt[a].labels)
        throw IoError("manifest: regenerated labels disagree with recorded ones (video " +
                      std::to_string(v) + ", clip " + std::to_string(c) + ")");
    }
  }
  return d;
}

}  // namespace stmixer
