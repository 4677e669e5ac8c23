#include "arti/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "arti/fields.hpp"
#include "arti/meshing.hpp"
#include "arti/ply.hpp"
#include "arti/rng.hpp"
#include "arti/sampling.hpp"
#include "arti/toml.hpp"
#include "arti/trainer.hpp"

namespace arti {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string frame_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, i);
  return buf;
}

std::vector<double> to_flat(const VecX& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

VecX from_flat(const json& arr, int want, const std::string& what) {
  if (!arr.is_array() || static_cast<int>(arr.size()) != want)
    throw DataError("pose field " + what + " must hold " + std::to_string(want) + " numbers");
  VecX v(want);
  for (int i = 0; i < want; ++i) v[i] = arr[i].get<double>();
  return v;
}

void write_metadata(const fs::path& dir, const RunConfig& cfg, const std::string& command,
                    json extra) {
  json j = std::move(extra);
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  j["version"] = kBuildVersion;
  write_text(dir / "metadata.json", j.dump(2) + "\n");
}

std::vector<fs::path> list_sorted(const fs::path& dir, const std::string& prefix,
                                  const std::string& ext) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && name.size() > ext.size() &&
        name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Rig rig_from_file(const std::string& path) {
  try {
    return build_rig(toml::parse_file(path));
  } catch (const toml::ParseError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const RigError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

AvatarNets nets_for(const Rig& rig, const RunConfig& cfg) {
  return make_avatar_nets(rig.bone_count(), rig.theta_b_dim(), rig.psi_dim, cfg.nets,
                          cfg.net_seed);
}

// Posed capsule-union ground truth with per-vertex labels and texture colors.
void write_gt_mesh(const fs::path& path, const Rig& rig, const Pose& pose, int resolution) {
  Mesh canonical = mesh_rig_canonical(rig, resolution);
  const std::vector<PartId> labels = label_vertices_by_rig(canonical.vertices, rig);
  Mesh posed = canonical;
  posed.colors.resize(posed.vertices.size());
  for (std::size_t i = 0; i < posed.vertices.size(); ++i)
    posed.colors[i] = ground_truth_color(canonical.vertices[i], labels[i]);
  const ReferenceWeightField wf(rig);
  const BoneTransforms bt = forward_kinematics(rig, pose);
  deform_mesh(wf, bt, canonical.vertices, &posed);
  compute_vertex_normals(&posed);
  write_labeled_ply(path.string(), posed, labels);
}

}  // namespace

Rig rig_from_config(const RunConfig& cfg) {
  if (!cfg.rig.file.empty()) return rig_from_file(cfg.rig.file);
  return rig_preset(cfg.rig.preset);
}

void write_pose_json(const std::string& path, const Pose& pose) {
  json j;
  std::vector<double> theta_g(6);
  for (int i = 0; i < 3; ++i) theta_g[i] = pose.root_rot[i];
  for (int i = 0; i < 3; ++i) theta_g[3 + i] = pose.root_trans[i];
  j["theta_g"] = theta_g;
  j["theta_b"] = to_flat(pose.theta_b);
  j["theta_h"] = to_flat(pose.theta_h);
  j["theta_f"] = to_flat(pose.theta_f);
  j["psi"] = to_flat(pose.psi);
  write_text(path, j.dump(2) + "\n");
}

Pose read_pose_json(const std::string& path, const Rig& rig) {
  const json j = load_json(path);
  for (const char* key : {"theta_g", "theta_b", "theta_h", "theta_f", "psi"})
    if (!j.contains(key)) throw DataError(path + ": missing pose field " + key);
  Pose pose;
  const VecX g = from_flat(j["theta_g"], 6, "theta_g");
  pose.root_rot = g.head<3>();
  pose.root_trans = g.tail<3>();
  pose.theta_b = from_flat(j["theta_b"], rig.theta_b_dim(), "theta_b");
  pose.theta_h = from_flat(j["theta_h"], rig.theta_h_dim(), "theta_h");
  pose.theta_f = from_flat(j["theta_f"], rig.theta_f_dim(), "theta_f");
  pose.psi = from_flat(j["psi"], rig.psi_dim, "psi");
  return pose;
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  const fs::path out(out_dir);
  fs::create_directories(out);
  const Rig rig = rig_from_config(cfg);
  write_text(out / "rig.toml", rig_descriptor_toml(rig));
  write_text(out / "config.toml", config_echo(cfg));

  json manifest;
  manifest["train"] = json::array();
  manifest["test"] = json::array();
  for (int f = 0; f < cfg.data.frames; ++f) {
    const std::string id = frame_name("frame", f);
    const Pose pose = sample_random_pose(rig, cfg.data.amp, cfg.data.seed, f);
    const std::uint64_t frame_seed = splitmix64(cfg.data.seed ^ (0x5CA0ull + f));
    const Scan scan = sample_synthetic_scan(rig, pose, cfg.data.points, frame_seed);
    write_scan_ply((out / (id + ".ply")).string(), scan);
    write_pose_json((out / (id + ".json")).string(), pose);
    manifest["train"].push_back(id);
  }
  for (int f = 0; f < cfg.data.test_frames; ++f) {
    const std::string id = frame_name("test", f);
    const Pose pose = sample_random_pose(rig, cfg.data.amp, cfg.data.seed, cfg.data.frames + f);
    write_pose_json((out / (id + ".json")).string(), pose);
    write_gt_mesh(out / (frame_name("gt", f) + ".ply"), rig, pose, cfg.data.gt_resolution);
    manifest["test"].push_back(id);
  }
  manifest["frames"] = cfg.data.frames;
  manifest["test_frames"] = cfg.data.test_frames;
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_metadata(out, cfg, "gen-data", json{{"seed", cfg.data.seed}});
}

void cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
               const std::string& resume) {
  const fs::path data(data_dir);
  const Rig rig = rig_from_file((data / "rig.toml").string());
  const json manifest = load_json(data / "manifest.json");
  if (!manifest.contains("train") || manifest["train"].empty())
    throw DataError(data_dir + ": manifest lists no training frames");

  std::vector<Scan> scans;
  for (const auto& idj : manifest["train"]) {
    const std::string id = idj.get<std::string>();
    Scan scan;
    try {
      scan = read_scan_ply((data / (id + ".ply")).string());
    } catch (const PlyError& e) {
      throw DataError(e.what());
    }
    scan.pose = read_pose_json((data / (id + ".json")).string(), rig);
    scans.push_back(std::move(scan));
  }

  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text(out / "config.toml", config_echo(cfg));

  Trainer trainer(rig, nets_for(rig, cfg), cfg.train);
  trainer.set_data(std::move(scans));
  if (!resume.empty()) trainer.load_checkpoint(resume);

  std::ofstream log(out / "train_log.csv", std::ios::binary);
  log << "step,total,bce,normal,rgb,bone,joint,surf,on_valid,on_total,off_valid,off_total,"
         "singular,solver_runs,solver_iters,ms\n";

  if (!trainer.stats().pretrain_done && trainer.config().pretrain_steps > 0) {
    const auto t0 = std::chrono::steady_clock::now();
    trainer.pretrain();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "pretrain: " << trainer.config().pretrain_steps << " steps, "
              << static_cast<long long>(ms) << " ms\n";
  }

  RootFindCounters prev = trainer.counters();
  while (trainer.global_step() < cfg.train.steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const LossReport rep = trainer.train_step();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const RootFindCounters cur = trainer.counters();
    const int step = trainer.global_step();
    log << step << "," << rep.total << "," << rep.bce << "," << rep.normal << "," << rep.rgb
        << "," << rep.bone << "," << rep.joint << "," << rep.surf << "," << rep.on_valid << ","
        << rep.on_total << "," << rep.off_valid << "," << rep.off_total << "," << rep.singular
        << "," << (cur.solver_runs - prev.solver_runs) << ","
        << (cur.iterations - prev.iterations) << "," << ms << "\n";
    prev = cur;
    if (step % cfg.train.log_every == 0 || step == cfg.train.steps)
      std::cout << "step " << step << "  total " << rep.total << "  bce " << rep.bce
                << "  normal " << rep.normal << "  rgb " << rep.rgb << "\n";
    if (step % cfg.checkpoint_every == 0)
      trainer.save_checkpoint((out / (frame_name("ckpt", step) + ".ckpt")).string());
  }
  trainer.save_checkpoint((out / "ckpt_last.ckpt").string());
  if (!log) throw DataError("cannot write " + (out / "train_log.csv").string());

  const char* init = cfg.train.init_mode == InitMode::Part   ? "part"
                     : cfg.train.init_mode == InitMode::Body ? "body"
                                                             : "all";
  write_metadata(out, cfg, "train",
                 json{{"seed", cfg.train.seed},
                      {"steps", trainer.global_step()},
                      {"init", init},
                      {"part_sampling", cfg.train.part_sampling},
                      {"skipped_occ", trainer.stats().skipped_occ},
                      {"skipped_skin", trainer.stats().skipped_skin},
                      {"skipped_rgb", trainer.stats().skipped_rgb}});
}

void cmd_animate(const RunConfig& cfg, const std::string& checkpoint,
                 const std::vector<std::string>& pose_files, const std::string& out_dir,
                 const std::string& rig_file) {
  const Rig rig = rig_file.empty() ? rig_from_config(cfg) : rig_from_file(rig_file);
  Trainer trainer(rig, nets_for(rig, cfg), cfg.train);
  try {
    trainer.load_checkpoint(checkpoint);
  } catch (const CheckpointError& e) {
    throw DataError(e.what());
  }

  const fs::path out(out_dir);
  fs::create_directories(out);
  for (std::size_t k = 0; k < pose_files.size(); ++k) {
    const Pose pose = read_pose_json(pose_files[k], rig);
    const AvatarMeshes meshes = mesh_avatar(trainer.nets(), rig, pose, cfg.meshing.resolution,
                                            cfg.meshing.level, cfg.meshing.pad);
    write_ply((out / (frame_name("anim", static_cast<int>(k)) + ".ply")).string(), meshes.posed);
  }
  write_metadata(out, cfg, "animate",
                 json{{"checkpoint", checkpoint}, {"poses", pose_files.size()}});
}

EvalSummary cmd_eval(const RunConfig& cfg, const std::string& pred_dir, const std::string& gt_dir,
                     const std::string& out_dir) {
  const std::vector<fs::path> preds = list_sorted(pred_dir, "anim_", ".ply");
  const std::vector<fs::path> gts = list_sorted(gt_dir, "gt_", ".ply");
  if (preds.empty()) throw DataError("no anim_*.ply files under " + pred_dir);
  if (preds.size() != gts.size())
    throw DataError("frame count mismatch: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(gts.size()) + " ground-truth meshes");

  const fs::path out(out_dir);
  fs::create_directories(out);
  std::ofstream csv(out / "frames.csv", std::ios::binary);
  csv << "frame,cd_mm,cd_max_mm,nc,iou,cd_hands_mm,watertight,pred_vertices,pred_faces\n";

  EvalSummary sum;
  const ChamferOptions opt{cfg.eval.samples, cfg.eval.seed};
  json rows = json::array();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    Mesh pred, gt;
    std::vector<PartId> gt_labels;
    try {
      pred = read_ply(preds[i].string());
      read_labeled_ply(gts[i].string(), &gt, &gt_labels);
    } catch (const PlyError& e) {
      throw DataError(e.what());
    }
    const FrameMetrics fm = evaluate_frame(pred, gt, gt_labels, opt, cfg.eval.iou_resolution);
    sum.per_frame.push_back(fm);
    sum.cd_mm += fm.cd_mm;
    sum.cd_max_mm += fm.cd_max_mm;
    sum.normal_consistency += fm.normal_consistency;
    sum.iou += fm.iou;
    sum.hands_cd_mm += fm.cd_hands_mm;
    csv << preds[i].filename().string() << "," << fm.cd_mm << "," << fm.cd_max_mm << ","
        << fm.normal_consistency << "," << fm.iou << "," << fm.cd_hands_mm << ","
        << (fm.watertight ? 1 : 0) << "," << fm.pred_vertices << "," << fm.pred_faces << "\n";
    rows.push_back(json{{"frame", preds[i].filename().string()},
                        {"cd", fm.cd_mm},
                        {"cd_max", fm.cd_max_mm},
                        {"nc", fm.normal_consistency},
                        {"iou", fm.iou},
                        {"hands_cd", fm.cd_hands_mm},
                        {"watertight", fm.watertight}});
  }
  const double n = static_cast<double>(preds.size());
  sum.cd_mm /= n;
  sum.cd_max_mm /= n;
  sum.normal_consistency /= n;
  sum.iou /= n;
  sum.hands_cd_mm /= n;
  sum.frames = static_cast<int>(preds.size());

  json report;
  report["all"] = {{"cd", sum.cd_mm},
                   {"cd_max", sum.cd_max_mm},
                   {"nc", sum.normal_consistency},
                   {"iou", sum.iou}};
  report["hands"] = {{"cd", sum.hands_cd_mm}};
  report["frames"] = rows;
  report["count"] = sum.frames;
  write_text(out / "report.json", report.dump(2) + "\n");
  if (!csv) throw DataError("cannot write " + (out / "frames.csv").string());
  write_metadata(out, cfg, "eval", json{{"pred", pred_dir}, {"gt", gt_dir}});
  return sum;
}

}  // namespace arti
