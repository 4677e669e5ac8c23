#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "arti/fields.hpp"
#include "arti/meshing.hpp"
#include "arti/metrics.hpp"
#include "testutil.hpp"

using namespace arti;

namespace {

FieldFn sphere_inside(double r, double sharp) {
  return [r, sharp](std::span<const Vec3> xs, VecX* out) {
    out->resize(Eigen::Index(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double s = -(xs[i].norm() - r);  // positive inside
      (*out)[Eigen::Index(i)] = sharp > 0 ? 1.0 / (1.0 + std::exp(-sharp * s)) : s;
    }
  };
}

// Occupancy that depends on the first coordinate only, strictly decreasing.
void make_planar_occ(OccNet* occ) {
  Mlp& m = occ->mlp;
  for (int k = 0; k < m.layer_count(); ++k) {
    m.W32(k).setZero();
    m.b32(k).setZero();
  }
  m.W32(0)(0, 0) = 4.0f;  // first input entry is the raw x coordinate
  m.W32(1)(0, 0) = 1.0f;
  m.W32(m.layer_count() - 1)(0, 0) = -2.0f;
  m.b32(m.layer_count() - 1)(0) = 0.5f;
  m.sync();
}

void zero_all(Mlp* m) {
  for (int k = 0; k < m->layer_count(); ++k) {
    m->W32(k).setZero();
    m->b32(k).setZero();
  }
  m->sync();
}

}  // namespace

TEST_CASE("sphere vertices land on the sphere") {
  const GridSpec grid = grid_for_bounds(Vec3(-1, -1, -1), Vec3(1, 1, 1), 64, 0.0);
  const Mesh mesh = marching_cubes(sphere_inside(0.5, 0.0), grid, 0.0);
  REQUIRE(mesh.vertex_count() > 100);
  for (const Vec3& v : mesh.vertices)
    CHECK(std::abs(v.norm() - 0.5) <= 1.5 * grid.spacing);
  std::string why;
  CHECK(is_watertight(mesh, &why));
}

TEST_CASE("a constant field extracts nothing") {
  const GridSpec grid = grid_for_bounds(Vec3(-1, -1, -1), Vec3(1, 1, 1), 16, 0.0);
  const FieldFn flat = [](std::span<const Vec3> xs, VecX* out) {
    *out = VecX::Constant(Eigen::Index(xs.size()), 0.2);
  };
  const Mesh mesh = marching_cubes(flat, grid, 0.5);
  CHECK(mesh.vertex_count() == 0);
  CHECK(mesh.face_count() == 0);
}

TEST_CASE("extracted vertices evaluate near the level") {
  const GridSpec grid = grid_for_bounds(Vec3(-1, -1, -1), Vec3(1, 1, 1), 48, 0.0);
  const FieldFn f = sphere_inside(0.55, 8.0);
  const Mesh mesh = marching_cubes(f, grid, 0.5);
  REQUIRE(mesh.vertex_count() > 100);
  VecX vals;
  f(mesh.vertices, &vals);
  for (Eigen::Index i = 0; i < vals.size(); ++i) CHECK(std::abs(vals[i] - 0.5) <= 0.05);
}

TEST_CASE("the grid covers the padded bounds") {
  const Vec3 bmin(0.0, -0.5, 1.0), bmax(1.0, 2.0, 1.5);
  const double pad = 0.1;
  const GridSpec g = grid_for_bounds(bmin, bmax, 50, pad);
  CHECK((g.origin - (bmin - Vec3(pad, pad, pad))).norm() < 1e-12);
  const Vec3 last = g.point(g.nx - 1, g.ny - 1, g.nz - 1);
  for (int j = 0; j < 3; ++j) CHECK(last[j] >= bmax[j] + pad - 1e-9);
  // the longest padded extent sets the cell size
  CHECK(g.spacing == doctest::Approx((2.0 + 0.5 + 2 * pad) / 50.0).epsilon(1e-12));
}

TEST_CASE("the canonical capsule mesh is watertight and hugs the surface") {
  const Rig rig = rig_preset("biped-mini");
  const Mesh mesh = mesh_rig_canonical(rig, 96);
  REQUIRE(mesh.vertex_count() > 1000);
  std::string why;
  CHECK_MESSAGE(is_watertight(mesh, &why), why);

  // recover the lattice pitch the mesher used
  Vec3 bmin, bmax;
  rig_bounds(rig, &bmin, &bmax);
  const GridSpec grid = grid_for_bounds(bmin, bmax, 96, 0.05);
  int near = 0;
  for (const Vec3& v : mesh.vertices)
    if (std::abs(rig_sdf(rig, v)) <= grid.spacing) ++near;
  CHECK(double(near) / mesh.vertex_count() >= 0.999);
}

TEST_CASE("skinning a mesh with the identity copies it") {
  const Rig rig = tu::toy_rig();
  const Mesh canonical = mesh_rig_canonical(rig, 40);
  REQUIRE(canonical.vertex_count() > 0);
  const ReferenceWeightField wf(rig);
  const BoneTransforms bt = forward_kinematics(rig, zero_pose(rig));

  Mesh posed = canonical;
  deform_mesh(wf, bt, canonical.vertices, &posed);
  REQUIRE(posed.vertex_count() == canonical.vertex_count());
  CHECK(posed.faces == canonical.faces);
  for (int i = 0; i < posed.vertex_count(); ++i)
    CHECK((posed.vertices[std::size_t(i)] - canonical.vertices[std::size_t(i)]).norm() < 1e-15);
}

TEST_CASE("a rigid whole body motion maps every vertex rigidly") {
  const Rig rig = tu::toy_rig();
  const Mesh canonical = mesh_rig_canonical(rig, 40);
  const ReferenceWeightField wf(rig);
  BoneTransforms bt = forward_kinematics(rig, zero_pose(rig));
  const Mat3 R = Eigen::AngleAxisd(0.6, Vec3(0.2, 1.0, -0.3).normalized()).toRotationMatrix();
  const Vec3 t(0.3, -0.1, 0.2);
  for (int i = 0; i < bt.size(); ++i) {
    bt.R[std::size_t(i)] = R * bt.R[std::size_t(i)];
    bt.t[std::size_t(i)] = R * bt.t[std::size_t(i)] + t;
  }
  Mesh posed = canonical;
  deform_mesh(wf, bt, canonical.vertices, &posed);
  CHECK(posed.faces == canonical.faces);
  for (int i = 0; i < posed.vertex_count(); ++i) {
    const Vec3 want = R * canonical.vertices[std::size_t(i)] + t;
    CHECK((posed.vertices[std::size_t(i)] - want).norm() < 1e-9);
  }
}

TEST_CASE("the avatar extraction pipeline honors a planar occupancy") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets =
      make_avatar_nets(rig.bone_count(), rig.theta_b_dim(), rig.psi_dim, tu::tiny_net_cfg(), 5);
  make_planar_occ(&nets.occ);
  zero_all(&nets.skin.mlp);  // uniform weights
  zero_all(&nets.rgb.mlp);   // mid gray everywhere
  const Pose pose = zero_pose(rig);
  const PoseCond cond = nets.occ.condition(pose.theta_b, pose.psi);

  // the occupancy is a strictly decreasing function of x alone; find the
  // crossing by bisection and expect the whole level set on that plane
  double lo = -0.2, hi = 0.2;
  REQUIRE(nets.occ.forward(Vec3(lo, 0.0, 0.0), cond) > 0.5);
  REQUIRE(nets.occ.forward(Vec3(hi, 0.0, 0.0), cond) < 0.5);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (nets.occ.forward(Vec3(mid, 0.0, 0.0), cond) > 0.5 ? lo : hi) = mid;
  }
  const double cross = 0.5 * (lo + hi);

  const AvatarMeshes out = mesh_avatar(nets, rig, pose, 48, 0.5, 0.1);
  REQUIRE(out.canonical.vertex_count() > 10);
  Vec3 bmin, bmax;
  rig_bounds(rig, &bmin, &bmax);
  const GridSpec grid = grid_for_bounds(bmin, bmax, 48, 0.1);
  for (const Vec3& v : out.canonical.vertices)
    CHECK(std::abs(v.x() - cross) <= 1.5 * grid.spacing);

  // identity pose: the skinned copy coincides with the canonical mesh
  REQUIRE(out.posed.vertex_count() == out.canonical.vertex_count());
  CHECK(out.posed.faces == out.canonical.faces);
  for (int i = 0; i < out.posed.vertex_count(); ++i)
    CHECK((out.posed.vertices[std::size_t(i)] - out.canonical.vertices[std::size_t(i)]).norm() <
          1e-12);

  REQUIRE(out.posed.colors.size() == out.posed.vertices.size());
  REQUIRE(out.posed.normals.size() == out.posed.vertices.size());
  for (int i = 0; i < out.posed.vertex_count(); ++i) {
    const Vec3& c = out.posed.colors[std::size_t(i)];
    for (int j = 0; j < 3; ++j) {
      CHECK(c[j] >= 0.0);
      CHECK(c[j] <= 1.0);
    }
    CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-9));  // zeroed color net
    CHECK(out.posed.normals[std::size_t(i)].norm() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("root motion carries the extracted avatar rigidly") {
  const Rig rig = tu::toy_rig();
  AvatarNets nets =
      make_avatar_nets(rig.bone_count(), rig.theta_b_dim(), rig.psi_dim, tu::tiny_net_cfg(), 5);
  make_planar_occ(&nets.occ);
  zero_all(&nets.skin.mlp);
  zero_all(&nets.rgb.mlp);

  const AvatarMeshes at_rest = mesh_avatar(nets, rig, zero_pose(rig), 40, 0.5, 0.1);
  Pose pose = zero_pose(rig);
  pose.root_rot = Vec3(0.0, 0.0, 0.5);
  pose.root_trans = Vec3(0.2, 0.1, -0.05);
  const AvatarMeshes moved = mesh_avatar(nets, rig, pose, 40, 0.5, 0.1);

  // canonical extraction ignores the root motion entirely
  REQUIRE(moved.canonical.vertex_count() == at_rest.canonical.vertex_count());
  CHECK(moved.canonical.faces == at_rest.canonical.faces);

  const Mat3 R = Eigen::AngleAxisd(0.5, Vec3(0, 0, 1)).toRotationMatrix();
  for (int i = 0; i < moved.posed.vertex_count(); ++i) {
    const Vec3 want = R * at_rest.canonical.vertices[std::size_t(i)] + pose.root_trans;
    CHECK((moved.posed.vertices[std::size_t(i)] - want).norm() < 1e-9);
  }
}
