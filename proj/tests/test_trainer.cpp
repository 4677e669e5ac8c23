#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "arti/trainer.hpp"
#include "testutil.hpp"

using namespace arti;

namespace {

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

std::vector<double> all_params(const Mlp& m) {
  std::vector<double> out(m.param_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.param(i);
  return out;
}

bool same_params(const Mlp& a, const Mlp& b) {
  if (a.param_count() != b.param_count()) return false;
  for (std::size_t i = 0; i < a.param_count(); ++i)
    if (a.param(i) != b.param(i)) return false;
  return true;
}

Trainer make_toy_trainer(TrainConfig cfg, std::uint64_t net_seed = 42) {
  const Rig rig = tu::toy_rig();
  AvatarNets nets =
      make_avatar_nets(rig.bone_count(), rig.theta_b_dim(), rig.psi_dim, tu::tiny_net_cfg(),
                       net_seed);
  Trainer t(rig, std::move(nets), cfg);
  std::vector<Scan> scans;
  for (std::uint64_t f = 0; f < 2; ++f) {
    const Pose pose = sample_random_pose(rig, PoseAmplitudes{}, 5, f);
    scans.push_back(sample_synthetic_scan(rig, pose, 400, 50 + f));
  }
  t.set_data(std::move(scans));
  return t;
}

TrainConfig small_cfg() {
  TrainConfig cfg;
  cfg.steps = 6;
  cfg.pretrain_steps = 4;
  cfg.pretrain_batch = 64;
  cfg.budgets = SampleBudgets{24, 12, 0, 0};
  cfg.reg = RegCounts{16, 16};
  cfg.adam.lr = 1e-3;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters alone on a zero gradient mean update") {
  Mlp net({4, 8, 2}, 7);
  AdamState st;
  st.init_like(net);
  MlpGrads g;
  g.init_like(net);
  g.zero();
  const auto before = all_params(net);
  CHECK(adam_step(&net, &st, g, AdamConfig{}));
  CHECK(all_params(net) == before);
  CHECK(st.steps == 1);
}

TEST_CASE("the first adam update moves by the learning rate against the sign") {
  Mlp net({3, 6, 2}, 9);
  AdamState st;
  st.init_like(net);
  MlpGrads g;
  g.init_like(net);
  g.zero();
  for (auto& W : g.dW) W.setConstant(0.5);
  for (auto& b : g.db) b.setConstant(-0.25);
  const auto before = all_params(net);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  CHECK(adam_step(&net, &st, g, cfg));
  const auto after = all_params(net);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double delta = after[i] - before[i];
    const double sign = g.flat(i) > 0 ? 1.0 : -1.0;
    CHECK(delta == doctest::Approx(-cfg.lr * sign).epsilon(1e-4));
  }
}

TEST_CASE("adam drives a convex quadratic down by two orders") {
  Mlp net({1, 4, 1}, 11);
  AdamState st;
  st.init_like(net);
  AdamConfig cfg;
  cfg.lr = 0.05;
  // loss = 0.5 sum (p - t)^2 with targets one away from the start
  std::vector<double> target = all_params(net);
  for (double& t : target) t -= 1.0;
  const auto loss = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < net.param_count(); ++i) {
      const double d = net.param(i) - target[i];
      s += 0.5 * d * d;
    }
    return s;
  };
  const double l0 = loss();
  MlpGrads g;
  g.init_like(net);
  for (int it = 0; it < 200; ++it) {
    g.zero();
    std::size_t k = 0;
    for (std::size_t layer = 0; layer < g.dW.size(); ++layer) {
      for (Eigen::Index r = 0; r < g.dW[layer].rows(); ++r)
        for (Eigen::Index c = 0; c < g.dW[layer].cols(); ++c)
          g.dW[layer](r, c) = net.param(k) - target[k], ++k;
      for (Eigen::Index r = 0; r < g.db[layer].size(); ++r)
        g.db[layer](r) = net.param(k) - target[k], ++k;
    }
    REQUIRE(adam_step(&net, &st, g, cfg));
  }
  CHECK(loss() <= l0 / 100.0);
}

TEST_CASE("a non finite gradient skips the whole update") {
  Mlp net({3, 6, 2}, 13);
  AdamState st;
  st.init_like(net);
  MlpGrads g;
  g.init_like(net);
  g.zero();
  g.dW[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = all_params(net);
  CHECK(!adam_step(&net, &st, g, AdamConfig{}));
  CHECK(all_params(net) == before);
  CHECK(st.steps == 0);
}

TEST_CASE("pretraining aligns the skinning net with the reference field") {
  TrainConfig cfg = small_cfg();
  cfg.pretrain_steps = 400;
  cfg.pretrain_batch = 256;
  Trainer t = make_toy_trainer(cfg);
  CHECK(!t.stats().pretrain_done);
  t.pretrain();
  CHECK(t.stats().pretrain_done);
  CHECK(t.global_step() == 0);  // pretraining does not consume main steps

  // held out canonical surface points: argmax should match the reference
  const Rig rig = tu::toy_rig();
  std::mt19937_64 g(99);
  std::vector<Vec3> pts;
  std::vector<int> all{0, 1, 2};
  sample_union_surface(rig, all, 400, g, &pts, nullptr, nullptr);
  int agree = 0;
  for (const Vec3& x : pts) {
    const VecX w = t.nets().skin.forward(x);
    const VecX ref = reference_weights(rig, x);
    int wi, ri;
    w.maxCoeff(&wi);
    ref.maxCoeff(&ri);
    if (wi == ri) ++agree;
  }
  CHECK(double(agree) / double(pts.size()) >= 0.95);
}

TEST_CASE("zero pretraining steps change nothing") {
  TrainConfig cfg = small_cfg();
  cfg.pretrain_steps = 0;
  Trainer t = make_toy_trainer(cfg);
  const auto before = all_params(t.nets().skin.mlp);
  t.pretrain();
  CHECK(t.stats().pretrain_done);
  CHECK(all_params(t.nets().skin.mlp) == before);
}

TEST_CASE("training steps advance the counter and report activity") {
  Trainer t = make_toy_trainer(small_cfg());
  t.pretrain();
  const LossReport r1 = t.train_step();
  CHECK(t.global_step() == 1);
  CHECK(r1.on_total > 0);
  CHECK(r1.off_total == 2 * r1.on_total);
  CHECK(r1.on_valid > 0);
  CHECK(std::isfinite(r1.total));
  const LossReport r2 = t.train_step();
  CHECK(t.global_step() == 2);
  CHECK(std::isfinite(r2.total));
  CHECK(t.counters().solver_runs > 0);
}

TEST_CASE("identical seeds replay the identical trajectory") {
  Trainer a = make_toy_trainer(small_cfg());
  Trainer b = make_toy_trainer(small_cfg());
  a.pretrain();
  b.pretrain();
  for (int i = 0; i < 3; ++i) {
    const LossReport ra = a.train_step();
    const LossReport rb = b.train_step();
    CHECK(ra.total == rb.total);
    CHECK(ra.bce == rb.bce);
  }
  CHECK(same_params(a.nets().occ.mlp, b.nets().occ.mlp));
  CHECK(same_params(a.nets().skin.mlp, b.nets().skin.mlp));
  CHECK(same_params(a.nets().rgb.mlp, b.nets().rgb.mlp));

  Trainer c = make_toy_trainer([] {
    TrainConfig cfg = small_cfg();
    cfg.seed = 4;
    return cfg;
  }());
  c.pretrain();
  const LossReport rc = c.train_step();
  const LossReport ra4 = a.train_step();
  CHECK(rc.total != ra4.total);
}

TEST_CASE("checkpoints round trip bit exactly and resume in lockstep") {
  const std::string path = temp_path("arti_trainer_ckpt_test.ckpt");
  Trainer a = make_toy_trainer(small_cfg());
  a.pretrain();
  for (int i = 0; i < 3; ++i) a.train_step();
  a.save_checkpoint(path);

  Trainer b = make_toy_trainer(small_cfg());
  b.load_checkpoint(path);
  CHECK(b.global_step() == 3);
  CHECK(b.stats().pretrain_done);
  CHECK(same_params(a.nets().occ.mlp, b.nets().occ.mlp));
  CHECK(same_params(a.nets().skin.mlp, b.nets().skin.mlp));
  CHECK(same_params(a.nets().rgb.mlp, b.nets().rgb.mlp));

  // both continue and stay bit identical, so the moments came back too
  for (int i = 0; i < 3; ++i) {
    const LossReport ra = a.train_step();
    const LossReport rb = b.train_step();
    CHECK(ra.total == rb.total);
  }
  CHECK(same_params(a.nets().occ.mlp, b.nets().occ.mlp));
  CHECK(same_params(a.nets().skin.mlp, b.nets().skin.mlp));
  CHECK(same_params(a.nets().rgb.mlp, b.nets().rgb.mlp));
  std::remove(path.c_str());
}

TEST_CASE("loading a checkpoint rejects a mismatched architecture") {
  const std::string path = temp_path("arti_trainer_ckpt_mismatch.ckpt");
  Trainer a = make_toy_trainer(small_cfg());
  a.save_checkpoint(path);

  const Rig rig = tu::toy_rig();
  NetConfig other = tu::tiny_net_cfg();
  other.hidden = 24;
  AvatarNets nets =
      make_avatar_nets(rig.bone_count(), rig.theta_b_dim(), rig.psi_dim, other, 42);
  Trainer b(rig, std::move(nets), small_cfg());
  CHECK_THROWS_AS(b.load_checkpoint(path), CheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("a short run leaves the loss finite and the log populated") {
  TrainConfig cfg = small_cfg();
  cfg.steps = 5;
  cfg.log_every = 2;
  Trainer t = make_toy_trainer(cfg);
  std::ostringstream log;
  t.run(&log);
  CHECK(t.global_step() == 5);
  CHECK(t.stats().pretrain_done);
  CHECK(log.str().find("step") != std::string::npos);
}
