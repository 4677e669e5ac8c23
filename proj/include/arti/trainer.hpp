#pragma once

#include <iosfwd>
#include <stdexcept>

#include "arti/checkpoint.hpp"
#include "arti/losses.hpp"
#include "arti/scan.hpp"

namespace arti {

// Raised when the training loss or an update goes non-finite beyond recovery.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments live in float32 next to the float32 parameters; the update math
// runs in double and rounds once on store.
struct AdamState {
  std::vector<Eigen::MatrixXf> mW, vW;
  std::vector<Eigen::VectorXf> mb, vb;
  long long steps = 0;  // applied updates, drives bias correction
  void init_like(const Mlp& net);
};

// One update on one net. A non-finite gradient skips the whole update and
// returns false, leaving parameters, moments and the step count untouched.
bool adam_step(Mlp* net, AdamState* st, const MlpGrads& g, const AdamConfig& cfg);

struct TrainConfig {
  int steps = 300;
  int pretrain_steps = 50;
  int pretrain_batch = 512;
  double pretrain_jitter = 0.02;  // normal-direction offset range, meters
  AdamConfig adam;
  AdamConfig pretrain_adam{1e-3};
  LossWeights weights;
  SampleBudgets budgets;
  ShellWidths shells;
  RegCounts reg;
  InitMode init_mode = InitMode::Part;
  bool part_sampling = true;
  RootFindSettings solver;
  std::uint64_t seed = 1;
  int log_every = 10;
};

struct TrainStats {
  long long skipped_occ = 0, skipped_skin = 0, skipped_rgb = 0;
  bool pretrain_done = false;
};

class Trainer {
 public:
  Trainer(Rig rig, AvatarNets nets, TrainConfig cfg);

  void set_data(std::vector<Scan> scans);  // scans carry their poses

  // Fits the skinning net to the reference weights on jittered canonical
  // surface samples; runs once before the main loop.
  void pretrain();
  LossReport train_step();  // one optimization step, advances the counter
  void run(std::ostream* log = nullptr);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  const AvatarNets& nets() const { return nets_; }
  AvatarNets& nets() { return nets_; }
  const Rig& rig() const { return rig_; }
  int global_step() const { return step_; }
  const TrainStats& stats() const { return stats_; }
  const TrainConfig& config() const { return cfg_; }
  const RootFindCounters& counters() const { return counters_; }

 private:
  Rig rig_;
  AvatarNets nets_;
  TrainConfig cfg_;
  std::vector<Scan> scans_;
  AdamState occ_st_, skin_st_, rgb_st_;
  AvatarGrads grads_;
  int step_ = 0;
  TrainStats stats_;
  RootFindCounters counters_;
};

}  // namespace arti
