#include "arti/scan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "arti/deformer.hpp"
#include "arti/rng.hpp"

namespace arti {

namespace {
constexpr double kPi = 3.14159265358979323846;

Vec3 uniform_sphere(std::mt19937_64& g) {
  const double z = uniform(g, -1.0, 1.0);
  const double a = uniform(g, 0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return Vec3(r * std::cos(a), r * std::sin(a), z);
}

Vec3 axis_angle_sample(std::mt19937_64& g, double max_deg) {
  const double angle = uniform(g, 0.0, max_deg * kPi / 180.0);
  return angle * uniform_sphere(g);
}
}  // namespace

Pose sample_random_pose(const Rig& rig, const PoseAmplitudes& amp, std::uint64_t seed,
                        std::uint64_t index) {
  auto g = rng_stream(seed, RngUse::PoseGen, index);
  Pose p = zero_pose(rig);
  p.root_rot = axis_angle_sample(g, amp.root_rot_deg);
  for (int k = 0; k < 3; ++k) p.root_trans[k] = uniform(g, -amp.root_trans, amp.root_trans);
  for (int i = 0; i < rig.theta_b_dim() / 3; ++i)
    p.theta_b.segment<3>(3 * i) = axis_angle_sample(g, amp.body_deg);
  for (int i = 0; i < rig.theta_h_dim() / 3; ++i)
    p.theta_h.segment<3>(3 * i) = axis_angle_sample(g, amp.hand_deg);
  for (int i = 0; i < rig.theta_f_dim() / 3; ++i)
    p.theta_f.segment<3>(3 * i) = axis_angle_sample(g, amp.face_deg);
  for (int k = 0; k < rig.psi_dim; ++k) p.psi[k] = uniform(g, -amp.psi_amp, amp.psi_amp);
  return p;
}

Vec3 ground_truth_color(const Vec3& x, PartId part) {
  static const Vec3 base[kPartCount] = {
      {0.55, 0.45, 0.40}, {0.75, 0.30, 0.25}, {0.25, 0.35, 0.75}, {0.80, 0.65, 0.30}};
  Vec3 c = base[static_cast<int>(part)];
  c[0] += 0.18 * std::sin(4.0 * x.x() + 2.6 * x.y());
  c[1] += 0.18 * std::sin(3.1 * x.y() + 1.7 * x.z());
  c[2] += 0.18 * std::cos(2.3 * x.z() + 3.7 * x.x());
  for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k], 0.0, 1.0);
  return c;
}

std::vector<int> scan_part_counts(const Rig& rig, int total_points) {
  // hands and face sampled several times denser than the body
  const double mult[kPartCount] = {1.0, 5.0, 5.0, 5.0};
  std::array<double, kPartCount> area{};
  for (int p = 0; p < kPartCount; ++p)
    for (int b : rig.groups[p]) area[p] += capsule_area(rig, b);
  double total_eff = 0.0;
  for (int p = 0; p < kPartCount; ++p) total_eff += mult[p] * area[p];
  std::vector<int> counts(kPartCount, 0);
  std::array<double, kPartCount> frac{};
  int assigned = 0;
  for (int p = 0; p < kPartCount; ++p) {
    const double exact = total_points * mult[p] * area[p] / total_eff;
    counts[p] = static_cast<int>(exact);
    frac[p] = exact - counts[p];
    assigned += counts[p];
  }
  while (assigned < total_points) {  // largest remainder
    int best = 0;
    for (int p = 1; p < kPartCount; ++p)
      if (frac[p] > frac[best]) best = p;
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (int p = 0; p < kPartCount; ++p)
    if (!rig.groups[p].empty() && counts[p] == 0) ++counts[p];
  return counts;
}

namespace {

// One uniform sample on a capsule surface; caller rejects buried points.
void capsule_surface_sample(const Rig& rig, int bone, std::mt19937_64& g, Vec3* p, Vec3* n) {
  const Bone& b = rig.bones[bone];
  const Vec3 axis = b.tail - b.head;
  const double len = axis.norm();
  const Vec3 u = axis / len;
  const double area_cyl = 2.0 * kPi * b.radius * len;
  const double area_caps = 4.0 * kPi * b.radius * b.radius;
  if (uniform01(g) * (area_cyl + area_caps) < area_cyl) {
    Vec3 e1 = u.unitOrthogonal();
    Vec3 e2 = u.cross(e1);
    const double t = uniform01(g);
    const double a = uniform(g, 0.0, 2.0 * kPi);
    *n = std::cos(a) * e1 + std::sin(a) * e2;
    *p = b.head + t * axis + b.radius * (*n);
  } else {
    const Vec3 d = uniform_sphere(g);
    *n = d;
    *p = (d.dot(u) >= 0.0 ? b.tail : b.head) + b.radius * d;
  }
}

bool buried(const Rig& rig, int bone, const Vec3& p) {
  for (int j = 0; j < rig.bone_count(); ++j)
    if (j != bone && capsule_sdf(rig, j, p) < -1e-9) return true;
  return false;
}

}  // namespace

void sample_union_surface(const Rig& rig, std::span<const int> bones, int count,
                          std::mt19937_64& g, std::vector<Vec3>* points,
                          std::vector<Vec3>* normals, std::vector<int>* bone_ids) {
  std::vector<double> cum(bones.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < bones.size(); ++k) {
    acc += capsule_area(rig, bones[k]);
    cum[k] = acc;
  }
  for (int s = 0; s < count; ++s) {
    Vec3 xc, nc;
    int bone = bones[0];
    bool ok = false;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const double r = uniform(g, 0.0, acc);
      std::size_t k = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
      if (k >= bones.size()) k = bones.size() - 1;
      bone = bones[k];
      capsule_surface_sample(rig, bone, g, &xc, &nc);
      if (!buried(rig, bone, xc)) {
        ok = true;
        break;
      }
    }
    if (!ok) throw RigError("capsule surface unreachable");
    points->push_back(xc);
    if (normals) normals->push_back(nc);
    if (bone_ids) bone_ids->push_back(bone);
  }
}

Scan sample_synthetic_scan(const Rig& rig, const Pose& pose, int total_points,
                           std::uint64_t seed) {
  auto g = rng_stream(seed, RngUse::ScanGen);
  const std::vector<int> counts = scan_part_counts(rig, total_points);
  const BoneTransforms bt = forward_kinematics(rig, pose);

  Scan scan;
  scan.pose = pose;
  for (int p = 0; p < kPartCount; ++p) {
    const auto& bones = rig.groups[p];
    if (bones.empty()) continue;
    std::vector<Vec3> pts, nrm;
    sample_union_surface(rig, bones, counts[p], g, &pts, &nrm, nullptr);
    for (int s = 0; s < counts[p]; ++s) {
      const Vec3& xc = pts[static_cast<std::size_t>(s)];
      const Vec3& nc = nrm[static_cast<std::size_t>(s)];
      MatX3 jw;
      const VecX w = reference_weight_jacobian(rig, xc, &jw);
      const Vec3 xd = lbs_deform(w, xc, bt);
      const Mat3 J = lbs_jacobian(w, jw, xc, bt);
      Vec3 nd = J.transpose().partialPivLu().solve(nc);
      const double nn = nd.norm();
      nd = nn > 1e-12 ? Vec3(nd / nn) : nc;
      Vec3 col = ground_truth_color(xc, static_cast<PartId>(p));
      for (int k = 0; k < 3; ++k) col[k] = std::round(col[k] * 255.0) / 255.0;
      scan.points.push_back(xd);
      scan.normals.push_back(nd);
      scan.colors.push_back(col);
      scan.labels.push_back(static_cast<PartId>(p));
    }
  }
  return scan;
}

}  // namespace arti
