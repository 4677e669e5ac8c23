#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "arti/fields.hpp"
#include "arti/losses.hpp"
#include "arti/scan.hpp"
#include "testutil.hpp"

using namespace arti;

namespace {

void zero_final_layer(Mlp* m) {
  const int k = m->layer_count() - 1;
  m->W32(k).setZero();
  m->b32(k).setZero();
  m->sync();
}

AvatarNets toy_nets(const Rig& rig, std::uint64_t seed) {
  return make_avatar_nets(rig.bone_count(), rig.theta_b_dim(), rig.psi_dim, tu::tiny_net_cfg(),
                          seed);
}

double grad_inf(const MlpGrads& g) {
  double m = 0.0;
  for (std::size_t i = 0; i < g.count(); ++i) m = std::max(m, std::abs(g.flat(i)));
  return m;
}

}  // namespace

TEST_CASE("constant half occupancy yields log two cross entropy") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 11);
  zero_final_layer(&nets.occ.mlp);
  const Pose pose = zero_pose(rig);
  const BoneTransforms bt = forward_kinematics(rig, pose);

  TrainBatch batch;
  for (int i = 0; i < 8; ++i) {
    batch.off_points.push_back(Vec3(0.02 * i - 0.06, 0.05 * i, 0.03));
    batch.off_occ.push_back(i % 2 ? 1.0 : 0.0);
    batch.off_labels.push_back(PartId::Body);
  }
  const LossReport rep = loss_occ(nets, rig, bt, pose, batch, InitMode::Part, RootFindSettings{});
  CHECK(rep.off_total == 8);
  CHECK(rep.off_valid == 8);
  CHECK(rep.bce == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("saturated correct occupancy reaches the clamp floor") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 11);
  zero_final_layer(&nets.occ.mlp);
  nets.occ.mlp.b32(nets.occ.mlp.layer_count() - 1)(0) = 20.0f;
  nets.occ.mlp.sync();
  const Pose pose = zero_pose(rig);
  const BoneTransforms bt = forward_kinematics(rig, pose);

  TrainBatch batch;
  for (int i = 0; i < 4; ++i) {
    batch.off_points.push_back(Vec3(0.0, 0.1 * i, 0.01));
    batch.off_occ.push_back(1.0);
    batch.off_labels.push_back(PartId::Body);
  }
  const LossReport rep = loss_occ(nets, rig, bt, pose, batch, InitMode::Part, RootFindSettings{});
  CHECK(rep.bce >= 0.0);
  CHECK(rep.bce <= 1e-6);
}

TEST_CASE("color offset shifts the l1 loss by the offset") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 21);
  zero_final_layer(&nets.rgb.mlp);
  const Pose pose = zero_pose(rig);
  const BoneTransforms bt = forward_kinematics(rig, pose);
  const Scan scan = sample_synthetic_scan(rig, pose, 64, 3);

  TrainBatch batch;
  for (int i = 0; i < 8; ++i) {
    batch.on_points.push_back(scan.points[i]);
    batch.on_normals.push_back(scan.normals[i]);
    batch.on_colors.push_back(Vec3(0.5, 0.5, 0.5));
    batch.on_labels.push_back(scan.labels[i]);
  }
  LossReport rep = loss_rgb(nets, rig, bt, pose, batch, InitMode::Part, RootFindSettings{});
  CHECK(rep.on_valid == 8);
  CHECK(rep.rgb == doctest::Approx(0.0).epsilon(1e-9));

  const double b = std::log(0.6 / 0.4);
  Mlp& m = nets.rgb.mlp;
  m.b32(m.layer_count() - 1)(0) = static_cast<float>(b);
  m.sync();
  const double red = 1.0 / (1.0 + std::exp(-double(m.b32(m.layer_count() - 1)(0))));
  rep = loss_rgb(nets, rig, bt, pose, batch, InitMode::Part, RootFindSettings{});
  CHECK(rep.rgb == doctest::Approx(red - 0.5).epsilon(1e-9));
  CHECK(rep.rgb == doctest::Approx(0.1).epsilon(1e-4));
}

TEST_CASE("predicted normals as targets zero the normal term") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 31);
  const Pose pose = zero_pose(rig);
  const BoneTransforms bt = forward_kinematics(rig, pose);
  const Scan scan = sample_synthetic_scan(rig, pose, 64, 4);
  const PoseCond cond = nets.occ.condition(pose.theta_b, pose.psi);

  TrainBatch batch;
  for (int i = 0; i < 8; ++i) {
    const Vec3 x = scan.points[i];  // identity pose: canonical root is x itself
    std::vector<Vec3> gx;
    nets.occ.grad_x_batch(std::span<const Vec3>(&x, 1), cond, &gx);
    MatX W;
    std::vector<MatX3> jw;
    nets.skin.forward_batch_jacobian(std::span<const Vec3>(&x, 1), &W, &jw);
    const Mat3 J = lbs_jacobian(W.col(0), jw[0], x, bt);
    const Vec3 n_d = (J.inverse().transpose() * gx[0]).normalized();
    batch.on_points.push_back(x);
    batch.on_normals.push_back(n_d);
    batch.on_colors.push_back(Vec3(0.5, 0.5, 0.5));
    batch.on_labels.push_back(scan.labels[i]);
  }
  const LossReport rep = loss_occ(nets, rig, bt, pose, batch, InitMode::Part, RootFindSettings{});
  CHECK(rep.on_valid == 8);
  CHECK(rep.normal == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("uniform skinning scores the joint midpoint penalty exactly") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 41);
  zero_final_layer(&nets.skin.mlp);  // softmax of zeros: every weight 1/3
  const Pose pose = zero_pose(rig);

  TrainBatch batch;
  canonical_reg_samples(rig, RegCounts{16, 16}, 7, 0, &batch);
  REQUIRE(batch.joint_points.size() == 2);
  const LossReport rep = loss_reg(nets, rig, pose, batch);
  const double third = 1.0 / 3.0;
  const double expect = 2.0 * (third - 0.5) * (third - 0.5);
  CHECK(rep.joint == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("raising interior occupancy shrinks the bone term") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 41);
  zero_final_layer(&nets.occ.mlp);
  const Pose pose = zero_pose(rig);
  TrainBatch batch;
  canonical_reg_samples(rig, RegCounts{32, 0}, 7, 0, &batch);

  Mlp& m = nets.occ.mlp;
  m.b32(m.layer_count() - 1)(0) = 5.0f;
  m.sync();
  const double lo = loss_reg(nets, rig, pose, batch).bone;
  m.b32(m.layer_count() - 1)(0) = -5.0f;
  m.sync();
  const double hi = loss_reg(nets, rig, pose, batch).bone;
  CHECK(lo < 0.01);
  CHECK(hi > 1.0);
  CHECK(lo < hi);
}

TEST_CASE("disabled weights produce zero total and untouched gradients") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 51);
  Pose pose = tu::bent_pose(rig, 0.3, 0.2);
  const BoneTransforms bt = forward_kinematics(rig, pose);
  const Scan scan = sample_synthetic_scan(rig, pose, 200, 5);
  const TrainBatch batch = make_train_batch(rig, scan, SampleBudgets{8, 4, 0, 0}, ShellWidths{},
                                            RegCounts{8, 8}, true, 17, 0);
  AvatarGrads grads;
  grads.init_like(nets);
  grads.zero();
  const LossWeights off{0, 0, 0, 0, 0, 0};
  const LossReport rep =
      loss_total(nets, rig, bt, pose, batch, off, InitMode::Part, RootFindSettings{}, &grads);
  CHECK(rep.total == 0.0);
  CHECK(grad_inf(grads.occ) == 0.0);
  CHECK(grad_inf(grads.skin) == 0.0);
  CHECK(grad_inf(grads.rgb) == 0.0);
  CHECK(rep.bce > 0.0);  // terms still reported unweighted
}

TEST_CASE("the total is the weighted sum of the reported terms") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 51);
  Pose pose = tu::bent_pose(rig, 0.3, 0.2);
  const BoneTransforms bt = forward_kinematics(rig, pose);
  const Scan scan = sample_synthetic_scan(rig, pose, 200, 5);
  const TrainBatch batch = make_train_batch(rig, scan, SampleBudgets{8, 4, 0, 0}, ShellWidths{},
                                            RegCounts{8, 8}, true, 17, 0);
  const LossWeights w{0.7, 1.3, 0.2, 2.0, 0.4, 5.0};
  const LossReport rep =
      loss_total(nets, rig, bt, pose, batch, w, InitMode::Part, RootFindSettings{});
  const double manual = w.bce * rep.bce + w.normal * rep.normal + w.rgb * rep.rgb +
                        w.bone * rep.bone + w.joint * rep.joint + w.surf * rep.surf;
  CHECK(rep.total == doctest::Approx(manual).epsilon(1e-12));
  CHECK(rep.total > 0.0);
}

TEST_CASE("regularizers touch only their own nets") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 61);
  const Pose pose = zero_pose(rig);
  const BoneTransforms bt = forward_kinematics(rig, pose);
  TrainBatch reg_batch;
  canonical_reg_samples(rig, RegCounts{16, 16}, 9, 0, &reg_batch);

  SUBCASE("surface weight term reaches only the skinning net") {
    AvatarGrads grads;
    grads.init_like(nets);
    grads.zero();
    LossWeights w{0, 0, 0, 0, 0, 1.0};
    loss_total(nets, rig, bt, pose, reg_batch, w, InitMode::Part, RootFindSettings{}, &grads);
    CHECK(grad_inf(grads.skin) > 0.0);
    CHECK(grad_inf(grads.occ) == 0.0);
    CHECK(grad_inf(grads.rgb) == 0.0);
  }
  SUBCASE("joint term reaches only the skinning net") {
    AvatarGrads grads;
    grads.init_like(nets);
    grads.zero();
    LossWeights w{0, 0, 0, 0, 1.0, 0};
    loss_total(nets, rig, bt, pose, reg_batch, w, InitMode::Part, RootFindSettings{}, &grads);
    CHECK(grad_inf(grads.skin) > 0.0);
    CHECK(grad_inf(grads.occ) == 0.0);
    CHECK(grad_inf(grads.rgb) == 0.0);
  }
  SUBCASE("bone interior term reaches only the occupancy net") {
    AvatarGrads grads;
    grads.init_like(nets);
    grads.zero();
    LossWeights w{0, 0, 0, 1.0, 0, 0};
    loss_total(nets, rig, bt, pose, reg_batch, w, InitMode::Part, RootFindSettings{}, &grads);
    CHECK(grad_inf(grads.occ) > 0.0);
    CHECK(grad_inf(grads.skin) == 0.0);
    CHECK(grad_inf(grads.rgb) == 0.0);
  }
}

TEST_CASE("parameter gradients match central differences") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets = toy_nets(rig, 71);
  Pose pose = tu::bent_pose(rig, 0.35, 0.25);
  pose.root_rot = Vec3(0.15, -0.1, 0.08);
  pose.root_trans = Vec3(0.03, -0.02, 0.04);
  pose.psi << 0.4, -0.3;
  const BoneTransforms bt = forward_kinematics(rig, pose);
  const Scan scan = sample_synthetic_scan(rig, pose, 300, 5);
  const TrainBatch batch = make_train_batch(rig, scan, SampleBudgets{12, 6, 0, 0}, ShellWidths{},
                                            RegCounts{8, 8}, true, 17, 0);
  const LossWeights w{1.0, 0.8, 1.2, 0.9, 1.1, 3.0};
  // Tight root tolerance keeps solver truncation out of the difference quotients.
  RootFindSettings solver;
  solver.max_iters = 60;
  solver.step_tol = 1e-9;

  AvatarGrads grads;
  grads.init_like(nets);
  grads.zero();
  loss_total(nets, rig, bt, pose, batch, w, InitMode::Part, solver, &grads);

  const auto total = [&]() {
    return loss_total(nets, rig, bt, pose, batch, w, InitMode::Part, solver).total;
  };
  const double h = 1e-3;

  const auto check_net = [&](Mlp* net, const MlpGrads& g, int stride, const char* name) {
    std::vector<double> ana, ref;
    for (std::size_t i = 0; i < net->param_count(); i += std::size_t(stride)) {
      ana.push_back(g.flat(i));
      ref.push_back(tu::fd_param(net, i, h, total));
    }
    VecX a = Eigen::Map<VecX>(ana.data(), Eigen::Index(ana.size()));
    VecX r = Eigen::Map<VecX>(ref.data(), Eigen::Index(ref.size()));
    const double floor_abs = 1e-6 * std::max(1.0, r.cwiseAbs().maxCoeff());
    const double frac = tu::agree_fraction(a, r, 1e-2, floor_abs);
    CAPTURE(name);
    CAPTURE(frac);
    CHECK(frac >= 0.90);
  };
  check_net(&nets.occ.mlp, grads.occ, 3, "occ");
  check_net(&nets.skin.mlp, grads.skin, 2, "skin");
  check_net(&nets.rgb.mlp, grads.rgb, 4, "rgb");
}
