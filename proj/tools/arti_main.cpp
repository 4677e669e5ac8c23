#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "arti/checkpoint.hpp"
#include "arti/parallel.hpp"
#include "arti/pipeline.hpp"
#include "arti/ply.hpp"
#include "arti/toml.hpp"

namespace {

std::string key_footer() {
  arti::RunConfig defaults;
  std::string out = "Config keys (with defaults):\n";
  for (const auto& [key, value] : arti::config_keys(defaults))
    out += "  " + key + " = " + value + "\n";
  return out;
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  int threads = -1;
};

void add_common(CLI::App* sub, CommonArgs* args) {
  sub->add_option("--config", args->config_path, "TOML config file");
  sub->add_option("--set", args->sets, "override key=value (repeatable)");
  sub->add_option("--threads", args->threads, "worker threads (0 = all cores)");
}

arti::RunConfig build_config(const CommonArgs& args) {
  arti::RunConfig cfg;
  if (!args.config_path.empty()) arti::apply_config_file(&cfg, args.config_path);
  for (const std::string& s : args.sets) arti::apply_override(&cfg, s);
  if (args.threads >= 0) cfg.threads = args.threads;
  return cfg;
}

void apply_threads(const arti::RunConfig& cfg) {
  if (cfg.threads > 0) arti::set_thread_count(cfg.threads);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulated implicit avatar toolkit: synthetic data, training, "
               "animation, and evaluation."};
  app.require_subcommand(1);
  app.footer(key_footer());

  CommonArgs common;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic capsule-rig dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  add_common(gen, &common);

  auto* train = app.add_subcommand("train", "Train the avatar nets on a dataset");
  std::string train_data, train_out, train_resume, train_init, train_sampling;
  bool no_lbs_reg = false;
  train->add_option("--data", train_data, "dataset directory from gen-data")->required();
  train->add_option("--out", train_out, "run output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train->add_option("--init", train_init, "correspondence init bones: part, body or all")
      ->check(CLI::IsMember({"part", "body", "all"}));
  train->add_option("--sampling", train_sampling, "on-surface sampling: part or uniform")
      ->check(CLI::IsMember({"part", "uniform"}));
  train->add_flag("--no-lbs-reg", no_lbs_reg,
                  "drop the surface skinning prior and its warm start");
  add_common(train, &common);

  auto* animate = app.add_subcommand("animate", "Mesh a checkpoint under given poses");
  std::string anim_ckpt, anim_out, anim_rig;
  std::vector<std::string> anim_poses;
  animate->add_option("--checkpoint", anim_ckpt, "trained checkpoint file")->required();
  animate->add_option("--pose", anim_poses, "pose JSON file (repeatable)")
      ->required()
      ->expected(-1);
  animate->add_option("--out", anim_out, "output mesh directory")->required();
  animate->add_option("--rig", anim_rig, "rig descriptor TOML (defaults to the config rig)");
  add_common(animate, &common);

  auto* eval = app.add_subcommand("eval", "Compare animated meshes against ground truth");
  std::string eval_pred, eval_gt, eval_out;
  eval->add_option("--pred", eval_pred, "directory of anim_*.ply predictions")->required();
  eval->add_option("--gt", eval_gt, "directory of gt_*.ply labeled meshes")->required();
  eval->add_option("--out", eval_out, "report output directory")->required();
  add_common(eval, &common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    arti::RunConfig cfg = build_config(common);
    if (train->parsed()) {
      if (train_init == "part") cfg.train.init_mode = arti::InitMode::Part;
      else if (train_init == "body") cfg.train.init_mode = arti::InitMode::Body;
      else if (train_init == "all") cfg.train.init_mode = arti::InitMode::All;
      if (train_sampling == "part") cfg.train.part_sampling = true;
      else if (train_sampling == "uniform") cfg.train.part_sampling = false;
      if (no_lbs_reg) {
        cfg.train.weights.surf = 0.0;
        cfg.train.pretrain_steps = 0;
      }
    }
    arti::validate_config(cfg);
    apply_threads(cfg);

    if (gen->parsed()) {
      arti::cmd_gen_data(cfg, gen_out);
    } else if (train->parsed()) {
      arti::cmd_train(cfg, train_data, train_out, train_resume);
    } else if (animate->parsed()) {
      arti::cmd_animate(cfg, anim_ckpt, anim_poses, anim_out, anim_rig);
    } else if (eval->parsed()) {
      const arti::EvalSummary sum = arti::cmd_eval(cfg, eval_pred, eval_gt, eval_out);
      std::cout << "frames " << sum.frames << "  cd " << sum.cd_mm << " mm  cd_max "
                << sum.cd_max_mm << " mm  nc " << sum.normal_consistency << "  iou " << sum.iou
                << "  hands_cd " << sum.hands_cd_mm << " mm\n";
    }
  } catch (const arti::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const arti::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
