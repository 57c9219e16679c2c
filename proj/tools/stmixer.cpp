// Command-line surface for dataset generation, training, bank building,
// evaluation, inference and sampling-point export.
//
// Exit codes: 0 success, 2 usage, 3 configuration, 4 numeric failure,
// 5 file I/O. Set STMIXER_LOG=quiet to suppress progress lines.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stmixer/checkpoint.hpp"
#include "stmixer/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

bool quiet() {
  const char* v = std::getenv("STMIXER_LOG");
  return v != nullptr && std::string(v) == "quiet";
}

void note(const std::string& line) {
  if (!quiet()) std::cout << line << "\n";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw stmixer::IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

stmixer::TrainConfig load_config(const std::string& path) {
  return stmixer::parse_config(read_file(path));
}

void write_metrics(const std::vector<stmixer::StepMetrics>& metrics, const fs::path& path,
                   const std::string& error = "") {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw stmixer::IoError("cannot open '" + path.string() + "' for writing");
  for (const stmixer::StepMetrics& m : metrics) {
    ordered_json j;
    j["step"] = m.step;
    j["cls"] = m.cls;
    j["l1"] = m.l1;
    j["giou"] = m.giou;
    j["act"] = m.act;
    j["total"] = m.total;
    if (m.map >= 0.0) j["map"] = m.map;
    out << j.dump() << "\n";
  }
  if (!error.empty()) {
    ordered_json j;
    j["error"] = error;
    out << j.dump() << "\n";
  }
}

ordered_json report_to_json(const stmixer::EvalReport& report, double iou) {
  const auto& vocab = stmixer::ActionVocabulary::standard();
  ordered_json j;
  j["iou_threshold"] = iou;
  j["map"] = report.map;
  j["classes_in_mean"] = report.classes_in_mean;
  ordered_json classes = ordered_json::array();
  for (size_t c = 0; c < report.per_class.size(); ++c) {
    ordered_json e;
    e["class"] = vocab.names[c];
    e["ap"] = report.per_class[c].ap;
    e["gt_count"] = report.per_class[c].gt_count;
    e["det_count"] = report.per_class[c].det_count;
    classes.push_back(std::move(e));
  }
  j["per_class"] = std::move(classes);
  return j;
}

int cmd_gen_data(uint64_t seed, int64_t count, const std::string& out,
                 const std::string& cfg_path, int64_t video_len) {
  stmixer::TrainConfig cfg;
  if (!cfg_path.empty()) cfg = load_config(cfg_path);
  if (video_len > 0) cfg.video_len = video_len;
  stmixer::Dataset d = stmixer::build_dataset(cfg.data, count, seed, cfg.video_len);
  stmixer::write_manifest(d, out);
  note("wrote manifest with " + std::to_string(d.total_clips()) + " clips to " + out);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& bank_path) {
  stmixer::TrainConfig cfg = load_config(config_path);
  std::cout << "# effective config\n" << stmixer::serialize_config(cfg);
  fs::create_directories(out_dir);
  fs::path metrics_path = fs::path(out_dir) / "metrics.jsonl";
  stmixer::TrainResult result;
  try {
    if (cfg.phase == "long") {
      if (bank_path.empty())
        throw stmixer::UsageError("train-long requires --bank (a query bank file)");
      stmixer::QueryBank bank = stmixer::load_bank(bank_path);
      result = stmixer::train_long(cfg, bank);
    } else {
      result = stmixer::train(cfg);
    }
  } catch (const stmixer::NumericError& e) {
    write_metrics({}, metrics_path, e.what());
    throw;
  }
  stmixer::save_model(*result.model, fs::path(out_dir) / "checkpoint.stmx");
  write_metrics(result.metrics, metrics_path);
  stmixer::write_manifest(result.dataset, fs::path(out_dir) / "train_manifest.jsonl");
  note("final loss " + std::to_string(result.final_loss()) + " after " +
       std::to_string(cfg.steps) + " steps; artifacts in " + out_dir);
  return 0;
}

int cmd_build_bank(const std::string& ckpt_path, const std::string& data_path,
                   const std::string& out, int64_t k) {
  auto model = stmixer::load_model(ckpt_path);
  stmixer::Dataset d = stmixer::load_manifest(data_path);
  int64_t use_k = k > 0 ? k : model->config().bank_k;
  stmixer::QueryBank bank = stmixer::build_bank(*model, d.videos, use_k);
  stmixer::save_bank(bank, out);
  note("bank over " + std::to_string(bank.videos()) + " videos (k=" + std::to_string(bank.k) +
       ", d=" + std::to_string(bank.d) + ") written to " + out);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, double iou,
             const std::string& bank_path, const std::string& out) {
  auto model = stmixer::load_model(ckpt_path);
  stmixer::Dataset d = stmixer::load_manifest(data_path);
  if (d.generator.t != model->config().data.t || d.generator.height != model->config().data.height ||
      d.generator.width != model->config().data.width)
    throw stmixer::ConfigError(
        "eval: dataset geometry (data.frames/data.height/data.width) does not match the "
        "checkpointed model config");
  stmixer::EvalReport report;
  if (model->is_long()) {
    if (bank_path.empty()) throw stmixer::UsageError("eval of a long-phase model requires --bank");
    stmixer::QueryBank bank = stmixer::load_bank(bank_path);
    report = stmixer::evaluate(*model, d, iou, &bank);
  } else {
    report = stmixer::evaluate(*model, d, iou);
  }
  ordered_json j = report_to_json(report, iou);
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw stmixer::IoError("cannot open '" + out + "' for writing");
    f << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& data_path, int64_t clip_index,
                  const std::string& out, const std::string& bank_path) {
  auto model = stmixer::load_model(ckpt_path);
  stmixer::Dataset d = stmixer::load_manifest(data_path);
  auto flat = d.flat_index();
  if (clip_index < 0 || clip_index >= int64_t(flat.size()))
    throw stmixer::UsageError("visualize: clip index " + std::to_string(clip_index) +
                              " out of range (dataset has " + std::to_string(flat.size()) +
                              " clips)");
  const stmixer::ClipSample& clip = d.clip(flat[size_t(clip_index)]);
  stmixer::StageTrace trace;
  if (model->is_long()) {
    if (bank_path.empty())
      throw stmixer::UsageError("visualize of a long-phase model requires --bank");
    stmixer::QueryBank bank = stmixer::load_bank(bank_path);
    stmixer::StackedWindow window = stmixer::window_stack(
        bank, flat[size_t(clip_index)].first, flat[size_t(clip_index)].second,
        model->config().window);
    trace = model->forward_long(clip.video, window);
  } else {
    trace = model->forward(clip.video);
  }

  ordered_json j;
  j["clip"] = clip_index;
  j["stages"] = ordered_json::array();
  for (const stmixer::Stage& s : trace) {
    ordered_json stage;
    stage["points_shape"] = s.points.coords.shape();
    stage["points"] = s.points.coords.values();  // (x,y,z) triples, input-pixel units
    ordered_json boxes = ordered_json::array();
    auto probs = stmixer::human_probabilities(s.human_logits);
    int64_t classes = s.action_logits.dim(1);
    for (int64_t i = 0; i < s.boxes.dim(0); ++i) {
      const double* b = s.boxes.data() + i * 4;
      ordered_json entry;
      entry["box"] = {b[0], b[1], b[2], b[3]};
      entry["human_prob"] = probs[size_t(i)];
      double best = -1.0;
      int64_t best_c = 0;
      for (int64_t c = 0; c < classes; ++c) {
        double l = s.action_logits.data()[i * classes + c];
        double score = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
        if (score > best) {
          best = score;
          best_c = c;
        }
      }
      entry["top_action"] = stmixer::ActionVocabulary::standard().names[size_t(best_c)];
      entry["top_score"] = best;
      boxes.push_back(std::move(entry));
    }
    stage["detections"] = std::move(boxes);
    j["stages"].push_back(std::move(stage));
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw stmixer::IoError("cannot open '" + out + "' for writing");
  f << j.dump() << "\n";
  note("wrote " + std::to_string(trace.size()) + " stage exports to " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STMixer desk-scale action detector"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset manifest");
  uint64_t seed = 1;
  int64_t count = 16;
  std::string out_path, cfg_path;
  int64_t video_len = 0;
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--count", count, "number of videos")->required();
  gen->add_option("--out", out_path, "manifest output path")->required();
  gen->add_option("--cfg", cfg_path, "config file supplying data.* keys");
  gen->add_option("--video-len", video_len, "clips per video (>=2 enables the cross-clip class)");

  auto* train_cmd = app.add_subcommand("train", "train a short-term model");
  std::string train_config, train_out;
  train_cmd->add_option("--config", train_config, "flat key=value config file")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  auto* train_long_cmd = app.add_subcommand("train-long", "train a long-term model from a bank");
  std::string tl_config, tl_out, tl_bank;
  train_long_cmd->add_option("--config", tl_config, "flat key=value config file")->required();
  train_long_cmd->add_option("--out", tl_out, "output directory")->required();
  train_long_cmd->add_option("--bank", tl_bank, "query bank file");

  auto* bank_cmd = app.add_subcommand("build-bank", "build a long-term query bank");
  std::string bk_ckpt, bk_data, bk_out;
  int64_t bk_k = 0;
  bank_cmd->add_option("--checkpoint", bk_ckpt, "short-term model checkpoint")->required();
  bank_cmd->add_option("--data", bk_data, "dataset manifest")->required();
  bank_cmd->add_option("--out", bk_out, "bank output path")->required();
  bank_cmd->add_option("--k", bk_k, "stored queries per clip (default: model config)");

  auto* eval_cmd = app.add_subcommand("eval", "frame-mAP evaluation");
  std::string ev_ckpt, ev_data, ev_bank, ev_out;
  double ev_iou = 0.5;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", ev_data, "dataset manifest")->required();
  eval_cmd->add_option("--iou", ev_iou, "IoU threshold (default 0.5)");
  eval_cmd->add_option("--bank", ev_bank, "query bank (long-phase models)");
  eval_cmd->add_option("--out", ev_out, "report output path");

  auto* vis_cmd = app.add_subcommand("visualize", "export per-stage sampling points and boxes");
  std::string vs_ckpt, vs_data, vs_out, vs_bank;
  int64_t vs_clip = 0;
  vis_cmd->add_option("--checkpoint", vs_ckpt, "model checkpoint")->required();
  vis_cmd->add_option("--data", vs_data, "dataset manifest")->required();
  vis_cmd->add_option("--clip", vs_clip, "flat clip index")->required();
  vis_cmd->add_option("--out", vs_out, "export output path")->required();
  vis_cmd->add_option("--bank", vs_bank, "query bank (long-phase models)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(seed, count, out_path, cfg_path, video_len);
    if (train_cmd->parsed()) return cmd_train(train_config, train_out, "");
    if (train_long_cmd->parsed()) return cmd_train(tl_config, tl_out, tl_bank);
    if (bank_cmd->parsed()) return cmd_build_bank(bk_ckpt, bk_data, bk_out, bk_k);
    if (eval_cmd->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_iou, ev_bank, ev_out);
    if (vis_cmd->parsed()) return cmd_visualize(vs_ckpt, vs_data, vs_clip, vs_out, vs_bank);
  } catch (const stmixer::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const stmixer::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 3;
  } catch (const stmixer::GenerationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 3;
  } catch (const stmixer::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const stmixer::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
