#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "stmixer/hash.hpp"
#include "stmixer/longterm.hpp"
#include "stmixer/model.hpp"

namespace stmixer {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian f64; big-endian hosts are unsupported");

/// Checkpoint container: 8-byte magic, u64 header length, a JSON header
/// naming every entry with its shape and element offset, the header's
/// FNV-1a digest, then one raw little-endian f64 payload. Offsets are
/// ascending and non-overlapping; payload length equals the sum of entry
/// sizes times 8 bytes.
constexpr char kCheckpointMagic[8] = {'S', 'T', 'M', 'X', 'C', 'K', 'P', '1'};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  int64_t offset = 0;  // elements into the payload
};

class CheckpointWriter {
 public:
  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }

  void add(const std::string& name, const Shape& shape, const std::vector<double>& values) {
    if (shape_numel(shape) != int64_t(values.size()))
      throw DimensionError("checkpoint: entry '" + name + "' shape " + shape_str(shape) +
                           " does not hold " + std::to_string(values.size()) + " values");
    entries_.push_back(CheckpointEntry{name, shape, int64_t(payload_.size())});
    payload_.insert(payload_.end(), values.begin(), values.end());
  }

  void add(const std::string& name, const Tensor& t) { add(name, t.shape(), t.values()); }

  void write(const std::filesystem::path& path) const {
    nlohmann::ordered_json header;
    header["version"] = 1;
    header["meta"] = meta_;
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const CheckpointEntry& e : entries_) {
      nlohmann::ordered_json j;
      j["name"] = e.name;
      j["shape"] = e.shape;
      j["offset"] = e.offset;
      entries.push_back(std::move(j));
    }
    header["entries"] = std::move(entries);
    std::string header_bytes = header.dump();
    uint64_t digest = fnv1a64(header_bytes);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path.string() + "' for writing");
    out.write(kCheckpointMagic, 8);
    uint64_t hlen = header_bytes.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(header_bytes.data(), std::streamsize(header_bytes.size()));
    out.write(reinterpret_cast<const char*>(&digest), 8);
    out.write(reinterpret_cast<const char*>(payload_.data()),
              std::streamsize(payload_.size() * sizeof(double)));
    if (!out) throw IoError("checkpoint: short write to '" + path.string() + "'");
  }

 private:
  std::map<std::string, std::string> meta_;
  std::vector<CheckpointEntry> entries_;
  std::vector<double> payload_;
};

class Checkpoint {
 public:
  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path.string() + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
      throw IoError("checkpoint: '" + path.string() + "' is not a checkpoint file");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || hlen > (1ull << 30)) throw IoError("checkpoint: corrupt header length");
    std::string header_bytes(hlen, '\0');
    in.read(header_bytes.data(), std::streamsize(hlen));
    uint64_t digest = 0;
    in.read(reinterpret_cast<char*>(&digest), 8);
    if (!in) throw IoError("checkpoint: truncated header");
    if (digest != fnv1a64(header_bytes))
      throw IoError("checkpoint: header digest mismatch in '" + path.string() + "'");
    Checkpoint ck;
    nlohmann::json header = nlohmann::json::parse(header_bytes, nullptr, false);
    if (header.is_discarded()) throw IoError("checkpoint: malformed header JSON");
    if (header.value("version", 0) != 1) throw IoError("checkpoint: unsupported format version");
    for (auto& [k, v] : header.at("meta").items()) ck.meta_[k] = v.get<std::string>();
    int64_t expected_offset = 0;
    for (const auto& j : header.at("entries")) {
      CheckpointEntry e;
      e.name = j.at("name").get<std::string>();
      e.shape = j.at("shape").get<Shape>();
      e.offset = j.at("offset").get<int64_t>();
      if (e.offset != expected_offset)
        throw IoError("checkpoint: entry '" + e.name + "' offset " + std::to_string(e.offset) +
                      " breaks the ascending non-overlapping layout");
      expected_offset += shape_numel(e.shape);
      ck.index_[e.name] = ck.entries_.size();
      ck.entries_.push_back(std::move(e));
    }
    ck.payload_.resize(size_t(expected_offset));
    in.read(reinterpret_cast<char*>(ck.payload_.data()),
            std::streamsize(ck.payload_.size() * sizeof(double)));
    if (!in || in.gcount() != std::streamsize(ck.payload_.size() * sizeof(double)))
      throw IoError("checkpoint: payload shorter than the header promises");
    in.peek();
    if (!in.eof()) throw IoError("checkpoint: trailing bytes after payload");
    return ck;
  }

  const std::map<std::string, std::string>& meta() const { return meta_; }

  std::string meta_value(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw IoError("checkpoint: missing meta key '" + key + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  Tensor tensor(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("checkpoint: no entry named '" + name + "'");
    const CheckpointEntry& e = entries_[it->second];
    int64_t n = shape_numel(e.shape);
    std::vector<double> v(payload_.begin() + e.offset, payload_.begin() + e.offset + n);
    return Tensor::of(e.shape, std::move(v));
  }

 private:
  std::map<std::string, std::string> meta_;
  std::vector<CheckpointEntry> entries_;
  std::map<std::string, size_t> index_;
  std::vector<double> payload_;
};

// ---------------------------------------------------------------------------
// model and bank persistence
// ---------------------------------------------------------------------------

/// Writes every parameter plus its AdamW state, and the full config, so a
/// reload reproduces both inference and further training bit-exactly.
inline void save_model(STMixerModel& model, const std::filesystem::path& path) {
  CheckpointWriter w;
  w.set_meta("kind", "model");
  w.set_meta("config", serialize_config(model.config()));
  for (Parameter* p : model.parameters()) {
    w.add(p->name, p->value);
    w.add(p->name + ".m1", p->first_moment);
    w.add(p->name + ".m2", p->second_moment);
    w.add(p->name + ".step", {1}, {double(p->step_count)});
  }
  w.write(path);
}

inline std::unique_ptr<STMixerModel> load_model(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta_value("kind") != "model")
    throw IoError("checkpoint: '" + path.string() + "' does not hold a model");
  TrainConfig cfg = parse_config(ck.meta_value("config"));
  auto model = std::make_unique<STMixerModel>(cfg, /*seed=*/0);
  for (Parameter* p : model->parameters()) {
    if (!ck.has(p->name))
      throw ConfigError("checkpoint: parameter '" + p->name + "' missing from '" + path.string() +
                        "'");
    Tensor v = ck.tensor(p->name);
    if (v.shape() != p->value.shape())
      throw ConfigError("checkpoint: parameter '" + p->name + "' has shape " +
                        shape_str(v.shape()) + ", model expects " + shape_str(p->value.shape()));
    std::copy(v.data(), v.data() + v.numel(), p->value.data());
    Tensor m1 = ck.tensor(p->name + ".m1");
    Tensor m2 = ck.tensor(p->name + ".m2");
    std::copy(m1.data(), m1.data() + m1.numel(), p->first_moment.data());
    std::copy(m2.data(), m2.data() + m2.numel(), p->second_moment.data());
    p->step_count = int64_t(ck.tensor(p->name + ".step").value());
  }
  return model;
}

/// Bank files share the container, keyed by video and clip index.
inline void save_bank(const QueryBank& bank, const std::filesystem::path& path) {
  CheckpointWriter w;
  w.set_meta("kind", "bank");
  w.set_meta("k", std::to_string(bank.k));
  w.set_meta("d", std::to_string(bank.d));
  w.set_meta("videos", std::to_string(bank.videos()));
  for (int64_t v = 0; v < bank.videos(); ++v) {
    w.set_meta("clips/v" + std::to_string(v), std::to_string(bank.clips(v)));
    for (int64_t c = 0; c < bank.clips(v); ++c)
      w.add("bank/v" + std::to_string(v) + "/c" + std::to_string(c), {bank.k, bank.d},
            bank.rows[size_t(v)][size_t(c)]);
  }
  w.write(path);
}

inline QueryBank load_bank(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta_value("kind") != "bank")
    throw IoError("checkpoint: '" + path.string() + "' does not hold a query bank");
  QueryBank bank;
  bank.k = std::stoll(ck.meta_value("k"));
  bank.d = std::stoll(ck.meta_value("d"));
  int64_t videos = std::stoll(ck.meta_value("videos"));
  for (int64_t v = 0; v < videos; ++v) {
    int64_t clips = std::stoll(ck.meta_value("clips/v" + std::to_string(v)));
    std::vector<std::vector<double>> rows;
    for (int64_t c = 0; c < clips; ++c)
      rows.push_back(ck.tensor("bank/v" + std::to_string(v) + "/c" + std::to_string(c)).values());
    bank.rows.push_back(std::move(rows));
  }
  return bank;
}

}  // namespace stmixer
