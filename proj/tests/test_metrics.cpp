#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "arti/meshing.hpp"
#include "arti/metrics.hpp"
#include "arti/scan.hpp"
#include "testutil.hpp"

using namespace arti;

namespace {

// Axis-aligned box as a closed, outward-oriented triangle shell.
Mesh make_box(const Vec3& lo, const Vec3& hi) {
  Mesh m;
  for (int c = 0; c < 8; ++c) {
    m.vertices.emplace_back(c & 1 ? hi[0] : lo[0], c & 2 ? hi[1] : lo[1], c & 4 ? hi[2] : lo[2]);
  }
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

Mesh mc_sphere(double r, int res) {
  const FieldFn f = [r](std::span<const Vec3> xs, VecX* out) {
    out->resize(Eigen::Index(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i)
      (*out)[Eigen::Index(i)] = r - xs[i].norm();
  };
  const Vec3 b = (r + 0.1) * Vec3::Ones();
  return marching_cubes(f, grid_for_bounds(-b, b, res, 0.0), 0.0);
}

Mesh translated(Mesh m, const Vec3& t) {
  for (Vec3& v : m.vertices) v += t;
  return m;
}

Mesh scaled(Mesh m, double s) {
  for (Vec3& v : m.vertices) v *= s;
  return m;
}

double mesh_area(const Mesh& m) {
  double a = 0.0;
  for (const auto& f : m.faces) {
    const Vec3 e1 = m.vertices[f[1]] - m.vertices[f[0]];
    const Vec3 e2 = m.vertices[f[2]] - m.vertices[f[0]];
    a += 0.5 * e1.cross(e2).norm();
  }
  return a;
}

// Closest point on a triangle by barycentric region tests.
Vec3 closest_on_tri(const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, aq = q - a;
  const double d1 = ab.dot(aq), d2 = ac.dot(aq);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bq = q - b;
  const double d3 = ab.dot(bq), d4 = ac.dot(bq);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cq = q - c;
  const double d5 = ab.dot(cq), d6 = ac.dot(cq);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double inv = 1.0 / (va + vb + vc);
  return a + ab * (vb * inv) + ac * (vc * inv);
}

double brute_closest_dist2(const Mesh& m, const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : m.faces) {
    const Vec3 p = closest_on_tri(q, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
    best = std::min(best, (q - p).squaredNorm());
  }
  return best;
}

}  // namespace

TEST_CASE("chamfer of a mesh against itself vanishes with aligned normals") {
  const Mesh s = mc_sphere(0.5, 32);
  REQUIRE(s.face_count() > 100);
  const ChamferResult r = chamfer_distance(s, s, {4000, 5});
  CHECK(r.mean_mm <= 1e-9);
  CHECK(r.max_mm <= 1e-9);
  CHECK(r.normal_consistency == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("a one millimeter slide shows up as exactly one millimeter") {
  const Mesh a = make_box(Vec3::Zero(), Vec3::Ones());
  const Mesh b = translated(a, Vec3(1e-3, 0.0, 0.0));
  const ChamferResult r = chamfer_distance(a, b, {20000, 7});
  // two of six faces sit a full millimeter away, the rest nearly touch
  CHECK(r.mean_mm > 0.25);
  CHECK(r.mean_mm < 0.45);
  CHECK(r.max_mm == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.normal_consistency > 0.99);
}

TEST_CASE("closest queries match a brute force scan over every triangle") {
  const Mesh s = mc_sphere(0.4, 20);
  const TriBvh bvh(s);
  std::mt19937_64 g(404);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int i = 0; i < 300; ++i) {
    const Vec3 q(u(g), u(g), u(g));
    const TriBvh::Hit h = bvh.closest(q);
    REQUIRE(h.face >= 0);
    REQUIRE(h.face < s.face_count());
    CHECK((q - h.point).squaredNorm() == doctest::Approx(h.dist2).epsilon(1e-10));
    CHECK(h.dist2 == doctest::Approx(brute_closest_dist2(s, q)).epsilon(1e-10));
  }
}

TEST_CASE("x rays count entry and exit crossings of a box") {
  const Mesh box = make_box(Vec3::Zero(), Vec3::Ones());
  const TriBvh bvh(box);
  std::vector<double> ts;

  bvh.ray_x_hits(Vec3(-1.0, 0.3, 0.4), &ts);
  std::sort(ts.begin(), ts.end());
  REQUIRE(ts.size() == 2);
  CHECK(ts[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ts[1] == doctest::Approx(2.0).epsilon(1e-12));

  bvh.ray_x_hits(Vec3(0.2, 0.3, 0.4), &ts);
  REQUIRE(ts.size() == 1);
  CHECK(ts[0] == doctest::Approx(0.8).epsilon(1e-12));

  bvh.ray_x_hits(Vec3(-1.0, 1.2, 0.4), &ts);
  CHECK(ts.empty());
}

TEST_CASE("flipping the winding negates normal consistency") {
  const Mesh s = mc_sphere(0.5, 24);
  Mesh f = s;
  for (auto& face : f.faces) std::swap(face[1], face[2]);
  const ChamferResult r = chamfer_distance(s, f, {4000, 5});
  CHECK(r.mean_mm <= 1e-9);
  CHECK(r.normal_consistency == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("volume overlap is one on itself and zero when disjoint") {
  const Mesh a = make_box(Vec3::Zero(), Vec3::Ones());
  CHECK(volumetric_iou(a, a, 64) == 1.0);
  const Mesh far = make_box(Vec3(3.0, 0.0, 0.0), Vec3(4.0, 1.0, 1.0));
  CHECK(volumetric_iou(a, far, 64) == 0.0);
  CHECK(volumetric_iou(Mesh{}, a, 32) == 0.0);
}

TEST_CASE("nested spheres overlap by one eighth") {
  const Mesh inner = mc_sphere(0.25, 64);
  const Mesh outer = mc_sphere(0.5, 64);
  const double v = volumetric_iou(inner, outer, 96);
  CHECK(std::abs(v - 0.125) <= 0.01);
}

TEST_CASE("chamfer is symmetric in its arguments") {
  const Mesh a = mc_sphere(0.5, 24);
  const Mesh b = translated(make_box(-0.3 * Vec3::Ones(), 0.3 * Vec3::Ones()), Vec3(0.1, 0.0, 0.0));
  const ChamferOptions opt{6000, 13};
  const ChamferResult r1 = chamfer_distance(a, b, opt);
  const ChamferResult r2 = chamfer_distance(b, a, opt);
  CHECK(r1.mean_mm == r2.mean_mm);
  CHECK(r1.max_mm == r2.max_mm);
  CHECK(r1.normal_consistency == r2.normal_consistency);
}

TEST_CASE("uniform scaling doubles distances and leaves ratios alone") {
  const Mesh a = mc_sphere(0.5, 24);
  const Mesh b = translated(make_box(-0.3 * Vec3::Ones(), 0.3 * Vec3::Ones()), Vec3(0.1, 0.0, 0.0));
  const ChamferOptions opt{6000, 13};
  const ChamferResult r1 = chamfer_distance(a, b, opt);
  const ChamferResult r2 = chamfer_distance(scaled(a, 2.0), scaled(b, 2.0), opt);
  CHECK(r2.mean_mm == doctest::Approx(2.0 * r1.mean_mm).epsilon(1e-12));
  CHECK(r2.max_mm == doctest::Approx(2.0 * r1.max_mm).epsilon(1e-12));
  CHECK(r2.normal_consistency == doctest::Approx(r1.normal_consistency).epsilon(1e-12));
  const double v1 = volumetric_iou(a, b, 48);
  const double v2 = volumetric_iou(scaled(a, 2.0), scaled(b, 2.0), 48);
  CHECK(v1 > 0.01);
  CHECK(v2 == doctest::Approx(v1).epsilon(1e-12));
}

TEST_CASE("an empty side reads as the other mesh's diagonal") {
  const Mesh c = make_box(Vec3::Zero(), Vec3::Ones());
  const Mesh none;
  const double diag_mm = std::sqrt(3.0) * 1000.0;
  const ChamferResult r1 = chamfer_distance(none, c, {1000, 3});
  CHECK(r1.mean_mm == doctest::Approx(diag_mm).epsilon(1e-9));
  CHECK(r1.max_mm == doctest::Approx(diag_mm).epsilon(1e-9));
  const ChamferResult r2 = chamfer_distance(c, none, {1000, 3});
  CHECK(r2.mean_mm == doctest::Approx(diag_mm).epsilon(1e-9));
  const ChamferResult r3 = chamfer_distance(none, none, {1000, 3});
  CHECK(r3.mean_mm == 0.0);
  CHECK(r3.max_mm == 0.0);
}

TEST_CASE("watertight checks catch holes and degenerate faces") {
  const Mesh box = make_box(Vec3::Zero(), Vec3::Ones());
  std::string why;
  CHECK(is_watertight(box, &why));

  Mesh open = box;
  open.faces.pop_back();
  CHECK_FALSE(is_watertight(open, &why));
  CHECK(!why.empty());

  Mesh degen = box;
  degen.faces.push_back({0, 0, 1});
  CHECK_FALSE(is_watertight(degen, &why));
  CHECK(!why.empty());

  CHECK_FALSE(is_watertight(Mesh{}, &why));
}

TEST_CASE("hand submeshes cover the expected share of the surface") {
  const Rig rig = rig_preset("biped-mini");
  const Mesh m = mesh_rig_canonical(rig, 192);
  REQUIRE(m.face_count() > 0);
  const std::vector<PartId> labels = label_vertices_by_rig(m.vertices, rig);
  REQUIRE(labels.size() == m.vertices.size());
  const Mesh hands = submesh_by_part(m, labels, {PartId::LeftHand, PartId::RightHand});
  REQUIRE(hands.face_count() > 0);
  const double mesh_frac = mesh_area(hands) / mesh_area(m);
  CHECK(mesh_frac > 0.02);
  CHECK(mesh_frac < 0.25);

  // independent estimate: visible-surface sampling labeled by nearest capsule
  std::vector<int> all_bones(static_cast<std::size_t>(rig.bone_count()));
  for (int i = 0; i < rig.bone_count(); ++i) all_bones[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 g(99);
  std::vector<Vec3> pts;
  std::vector<int> bone_ids;
  sample_union_surface(rig, all_bones, 40000, g, &pts, nullptr, &bone_ids);
  REQUIRE(pts.size() == 40000);
  int hand_hits = 0;
  for (int b : bone_ids) {
    const PartId p = rig.bones[static_cast<std::size_t>(b)].group;
    hand_hits += (p == PartId::LeftHand || p == PartId::RightHand);
  }
  const double sample_frac = static_cast<double>(hand_hits) / static_cast<double>(pts.size());
  CHECK(mesh_frac == doctest::Approx(sample_frac).epsilon(0.15));
}

TEST_CASE("masked chamfer equals the chamfer of the part submeshes") {
  const Rig rig = rig_preset("biped-mini");
  const Mesh ma = mesh_rig_canonical(rig, 96);
  const Mesh mb = mesh_rig_canonical(rig, 72);
  const std::vector<PartId> la = label_vertices_by_rig(ma.vertices, rig);
  const std::vector<PartId> lb = label_vertices_by_rig(mb.vertices, rig);
  const ChamferOptions opt{4000, 17};
  const ChamferResult masked =
      chamfer_distance_masked(ma, la, mb, lb, {PartId::LeftHand, PartId::RightHand}, opt);
  const Mesh sa = submesh_by_part(ma, la, {PartId::LeftHand, PartId::RightHand});
  const Mesh sb = submesh_by_part(mb, lb, {PartId::LeftHand, PartId::RightHand});
  const ChamferResult direct = chamfer_distance(sa, sb, opt);
  CHECK(masked.mean_mm == direct.mean_mm);
  CHECK(masked.max_mm == direct.max_mm);
  CHECK(masked.normal_consistency == direct.normal_consistency);
  CHECK(masked.mean_mm > 0.0);
  CHECK(masked.mean_mm < 10.0);
}

TEST_CASE("nearest neighbor labels survive a copy and light noise") {
  const Rig rig = rig_preset("biped-mini");
  std::vector<int> all_bones(static_cast<std::size_t>(rig.bone_count()));
  for (int i = 0; i < rig.bone_count(); ++i) all_bones[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 g(7);
  std::vector<Vec3> ref;
  sample_union_surface(rig, all_bones, 2000, g, &ref, nullptr, nullptr);
  const std::vector<PartId> ref_labels = label_vertices_by_rig(ref, rig);

  const std::vector<PartId> copied = transfer_labels_nn(ref, ref, ref_labels);
  REQUIRE(copied.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(copied[i] == ref_labels[i]);

  std::vector<Vec3> noisy = ref;
  std::uniform_real_distribution<double> u(-1e-5, 1e-5);
  for (Vec3& p : noisy) p += Vec3(u(g), u(g), u(g));
  const std::vector<PartId> moved = transfer_labels_nn(noisy, ref, ref_labels);
  int same = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) same += (moved[i] == ref_labels[i]);
  CHECK(static_cast<double>(same) / static_cast<double>(ref.size()) >= 0.999);
}

TEST_CASE("a frame evaluated against itself is perfect") {
  const Rig rig = rig_preset("biped-mini");
  const Mesh m = mesh_rig_canonical(rig, 96);
  const std::vector<PartId> labels = label_vertices_by_rig(m.vertices, rig);
  const FrameMetrics fm = evaluate_frame(m, m, labels, {4000, 11}, 64);
  CHECK(fm.cd_mm <= 1e-9);
  CHECK(fm.cd_max_mm <= 1e-9);
  CHECK(fm.normal_consistency == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fm.iou == 1.0);
  CHECK(fm.cd_hands_mm <= 1e-9);
  CHECK(fm.watertight);
  CHECK(fm.pred_vertices == m.vertex_count());
  CHECK(fm.pred_faces == m.face_count());
}
