#pragma once

#include <string>
#include <vector>

#include "arti/config.hpp"
#include "arti/metrics.hpp"
#include "arti/rig.hpp"

namespace arti {

inline constexpr const char* kBuildVersion = "0.1.0";

// Missing or malformed inputs on disk (exit code 3 at the CLI).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Rig rig_from_config(const RunConfig& cfg);

// Pose sidecar: {theta_g, theta_b, theta_h, theta_f, psi} as flat arrays,
// theta_g packing root axis-angle then root translation.
void write_pose_json(const std::string& path, const Pose& pose);
Pose read_pose_json(const std::string& path, const Rig& rig);

// Writes rig.toml, config.toml, frame_XXXX.{ply,json} train scans,
// test_XXXX.json unseen poses with gt_XXXX.ply labeled ground-truth meshes,
// manifest.json with the train/test split, and metadata.json.
void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);

// Trains on the generated dataset; writes ckpt_*.ckpt files, ckpt_last.ckpt,
// train_log.csv, config.toml and metadata.json under out_dir.
void cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
               const std::string& resume = {});

// One posed, colored mesh per pose file: anim_XXXX.ply under out_dir.
void cmd_animate(const RunConfig& cfg, const std::string& checkpoint,
                 const std::vector<std::string>& pose_files, const std::string& out_dir,
                 const std::string& rig_file = {});

struct EvalSummary {
  double cd_mm = 0.0, cd_max_mm = 0.0, normal_consistency = 0.0, iou = 0.0;
  double hands_cd_mm = 0.0;
  int frames = 0;
  std::vector<FrameMetrics> per_frame;
};

// Pairs pred_dir/anim_*.ply with gt_dir/gt_*.ply in sorted order; writes
// report.json and frames.csv under out_dir. Aggregates are per-frame means.
EvalSummary cmd_eval(const RunConfig& cfg, const std::string& pred_dir, const std::string& gt_dir,
                     const std::string& out_dir);

}  // namespace arti
