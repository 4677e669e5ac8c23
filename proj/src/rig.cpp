#include "arti/rig.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace arti {

int Rig::theta_b_dim() const {
  int n = static_cast<int>(group(PartId::Body).size());
  return 3 * std::max(0, n - 1);  // root excluded
}
int Rig::theta_h_dim() const {
  return 3 * static_cast<int>(group(PartId::LeftHand).size() + group(PartId::RightHand).size());
}
int Rig::theta_f_dim() const { return 3 * static_cast<int>(group(PartId::Face).size()); }

Pose zero_pose(const Rig& rig) {
  Pose p;
  p.theta_b = VecX::Zero(rig.theta_b_dim());
  p.theta_h = VecX::Zero(rig.theta_h_dim());
  p.theta_f = VecX::Zero(rig.theta_f_dim());
  p.psi = VecX::Zero(rig.psi_dim);
  return p;
}

namespace {

PartId parse_part(const std::string& s, int line) {
  for (int i = 0; i < kPartCount; ++i)
    if (s == kPartNames[i]) return static_cast<PartId>(i);
  throw toml::ParseError(line, "unknown group '" + s + "'");
}

Vec3 parse_vec3(const toml::Value& v) {
  const auto& a = v.as_array();
  if (a.size() != 3) throw toml::ParseError(v.line, "expected 3 numbers");
  return Vec3(a[0].as_number(), a[1].as_number(), a[2].as_number());
}

void finalize(Rig& rig) {
  const int n = rig.bone_count();
  if (n == 0) throw RigError("rig has no bones");
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const Bone& b = rig.bones[i];
    if (b.parent < 0) {
      ++roots;
      if (i != 0) throw RigError("root bone must come first");
    } else if (b.parent >= i) {
      throw RigError("bone '" + b.name + "': parent must precede it");
    }
    if ((b.tail - b.head).norm() < 1e-9)
      throw RigError("bone '" + b.name + "': zero length");
    if (!(b.radius > 0.0)) throw RigError("bone '" + b.name + "': radius must be positive");
    for (int j = 0; j < i; ++j)
      if (rig.bones[j].name == b.name) throw RigError("duplicate bone name '" + b.name + "'");
  }
  if (roots != 1) throw RigError("rig must have exactly one root bone");
  if (rig.bones[0].group != PartId::Body) throw RigError("root bone must belong to the body group");

  for (auto& g : rig.groups) g.clear();
  for (int i = 0; i < n; ++i) rig.groups[static_cast<int>(rig.bones[i].group)].push_back(i);
  if (!rig.allow_empty_groups)
    for (int p = 0; p < kPartCount; ++p)
      if (rig.groups[p].empty())
        throw RigError(std::string("group '") + kPartNames[p] + "' is empty");

  // Pose layout: root -> root channel; remaining body bones -> theta_b in bone
  // order; left then right hand bones -> theta_h; face bones -> theta_f.
  rig.channel.assign(n, PoseChannel::Body);
  rig.channel_offset.assign(n, 0);
  rig.channel[0] = PoseChannel::Root;
  int ob = 0, oh = 0, of = 0;
  for (int i = 1; i < n; ++i) {
    switch (rig.bones[i].group) {
      case PartId::Body:
        rig.channel[i] = PoseChannel::Body;
        rig.channel_offset[i] = ob;
        ob += 3;
        break;
      case PartId::LeftHand:
      case PartId::RightHand:
        rig.channel[i] = PoseChannel::Hand;
        break;
      case PartId::Face:
        rig.channel[i] = PoseChannel::Face;
        rig.channel_offset[i] = of;
        of += 3;
        break;
    }
  }
  // hands: all left-hand bones first, then right, each in bone order
  for (PartId p : {PartId::LeftHand, PartId::RightHand})
    for (int i : rig.group(p)) {
      rig.channel_offset[i] = oh;
      oh += 3;
    }
  if (rig.psi_dim < 0) throw RigError("psi_dim must be >= 0");
}

}  // namespace

Rig build_rig(const toml::Document& doc) {
  Rig rig;
  const toml::Table& root = doc.sections.front().table;
  if (const auto* v = root.find("name")) rig.name = v->as_string();
  if (const auto* v = root.find("psi_dim")) rig.psi_dim = static_cast<int>(v->as_integer());
  if (const auto* v = root.find("allow_empty_groups")) rig.allow_empty_groups = v->as_boolean();
  if (const auto* v = root.find("softmin_tau")) rig.softmin_tau = v->as_number();

  auto bone_tables = doc.find_array("bone");
  if (bone_tables.empty()) throw RigError("rig descriptor has no [[bone]] entries");
  for (const toml::Table* t : bone_tables) {
    Bone b;
    const auto* name = t->find("name");
    if (!name) throw RigError("bone missing 'name'");
    b.name = name->as_string();
    if (const auto* v = t->find("parent")) {
      if (v->kind == toml::Value::Kind::String) {
        const std::string& pn = v->as_string();
        if (pn.empty()) {
          b.parent = -1;
        } else {
          b.parent = -2;
          for (int j = 0; j < rig.bone_count(); ++j)
            if (rig.bones[j].name == pn) b.parent = j;
          if (b.parent == -2) throw RigError("bone '" + b.name + "': unknown parent '" + pn + "'");
        }
      } else {
        b.parent = static_cast<int>(v->as_integer());
      }
    }
    const auto* head = t->find("head");
    const auto* tail = t->find("tail");
    const auto* radius = t->find("radius");
    if (!head || !tail || !radius) throw RigError("bone '" + b.name + "': need head, tail, radius");
    b.head = parse_vec3(*head);
    b.tail = parse_vec3(*tail);
    b.radius = radius->as_number();
    if (const auto* v = t->find("group")) b.group = parse_part(v->as_string(), v->line);
    rig.bones.push_back(std::move(b));
  }
  finalize(rig);
  return rig;
}

std::string rig_descriptor_toml(const Rig& rig) {
  std::ostringstream out;
  out.precision(17);
  out << "name = \"" << rig.name << "\"\n";
  out << "psi_dim = " << rig.psi_dim << "\n";
  out << "allow_empty_groups = " << (rig.allow_empty_groups ? "true" : "false") << "\n";
  out << "softmin_tau = " << rig.softmin_tau << "\n";
  for (const Bone& b : rig.bones) {
    out << "\n[[bone]]\n";
    out << "name = \"" << b.name << "\"\n";
    out << "parent = " << b.parent << "\n";
    out << "head = [" << b.head.x() << ", " << b.head.y() << ", " << b.head.z() << "]\n";
    out << "tail = [" << b.tail.x() << ", " << b.tail.y() << ", " << b.tail.z() << "]\n";
    out << "radius = " << b.radius << "\n";
    out << "group = \"" << kPartNames[static_cast<int>(b.group)] << "\"\n";
  }
  return out.str();
}

namespace {

struct RigBuilder {
  Rig rig;
  int add(const std::string& name, int parent, Vec3 head, Vec3 tail, double r, PartId g) {
    Bone b;
    b.name = name;
    b.parent = parent;
    b.head = head;
    b.tail = tail;
    b.radius = r;
    b.group = g;
    rig.bones.push_back(b);
    return rig.bone_count() - 1;
  }
};

Rig make_biped_mini() {
  RigBuilder rb;
  rb.rig.name = "biped-mini";
  rb.rig.psi_dim = 4;
  const auto B = PartId::Body, LH = PartId::LeftHand, RH = PartId::RightHand, F = PartId::Face;
  const int pelvis = rb.add("pelvis", -1, {0, 1.00, 0}, {0, 1.08, 0}, 0.11, B);
  const int spine = rb.add("spine", pelvis, {0, 1.08, 0}, {0, 1.25, 0}, 0.10, B);
  const int chest = rb.add("chest", spine, {0, 1.25, 0}, {0, 1.45, 0}, 0.12, B);
  const int neck = rb.add("neck", chest, {0, 1.45, 0}, {0, 1.55, 0}, 0.045, B);
  const int head = rb.add("head", neck, {0, 1.55, 0}, {0, 1.72, 0}, 0.085, B);
  const int uarm_l = rb.add("upperarm_l", chest, {0.18, 1.42, 0}, {0.46, 1.42, 0}, 0.045, B);
  const int farm_l = rb.add("forearm_l", uarm_l, {0.46, 1.42, 0}, {0.70, 1.42, 0}, 0.035, B);
  const int uarm_r = rb.add("upperarm_r", chest, {-0.18, 1.42, 0}, {-0.46, 1.42, 0}, 0.045, B);
  const int farm_r = rb.add("forearm_r", uarm_r, {-0.46, 1.42, 0}, {-0.70, 1.42, 0}, 0.035, B);
  const int thigh_l = rb.add("thigh_l", pelvis, {0.09, 0.98, 0}, {0.10, 0.52, 0}, 0.07, B);
  rb.add("shin_l", thigh_l, {0.10, 0.52, 0}, {0.10, 0.08, 0}, 0.05, B);
  const int thigh_r = rb.add("thigh_r", pelvis, {-0.09, 0.98, 0}, {-0.10, 0.52, 0}, 0.07, B);
  rb.add("shin_r", thigh_r, {-0.10, 0.52, 0}, {-0.10, 0.08, 0}, 0.05, B);

  // left hand: palm along +x, four splayed fingers, thumb angled out in +z
  const int palm_l = rb.add("palm_l", farm_l, {0.70, 1.42, 0}, {0.79, 1.42, 0}, 0.032, LH);
  rb.add("thumb_l", palm_l, {0.72, 1.42, 0.032}, {0.78, 1.42, 0.075}, 0.014, LH);
  rb.add("index_l", palm_l, {0.79, 1.42, 0.042}, {0.868, 1.42, 0.042}, 0.012, LH);
  rb.add("middle_l", palm_l, {0.79, 1.42, 0.014}, {0.875, 1.42, 0.014}, 0.012, LH);
  rb.add("ring_l", palm_l, {0.79, 1.42, -0.014}, {0.868, 1.42, -0.014}, 0.012, LH);
  rb.add("pinky_l", palm_l, {0.79, 1.42, -0.042}, {0.852, 1.42, -0.042}, 0.012, LH);

  const int palm_r = rb.add("palm_r", farm_r, {-0.70, 1.42, 0}, {-0.79, 1.42, 0}, 0.032, RH);
  rb.add("thumb_r", palm_r, {-0.72, 1.42, 0.032}, {-0.78, 1.42, 0.075}, 0.014, RH);
  rb.add("index_r", palm_r, {-0.79, 1.42, 0.042}, {-0.868, 1.42, 0.042}, 0.012, RH);
  rb.add("middle_r", palm_r, {-0.79, 1.42, 0.014}, {-0.875, 1.42, 0.014}, 0.012, RH);
  rb.add("ring_r", palm_r, {-0.79, 1.42, -0.014}, {-0.868, 1.42, -0.014}, 0.012, RH);
  rb.add("pinky_r", palm_r, {-0.79, 1.42, -0.042}, {-0.852, 1.42, -0.042}, 0.012, RH);

  rb.add("jaw", head, {0, 1.585, 0.055}, {0, 1.545, 0.115}, 0.02, F);
  finalize(rb.rig);
  return rb.rig;
}

// Full humanoid joint layout: 22 body, 15 per hand, jaw plus two eyes.
Rig make_smplx_dims() {
  RigBuilder rb;
  rb.rig.name = "smplx-dims";
  rb.rig.psi_dim = 10;
  const auto B = PartId::Body, F = PartId::Face;
  const int pelvis = rb.add("pelvis", -1, {0, 0.95, 0}, {0, 1.02, 0}, 0.11, B);
  const int lhip = rb.add("l_hip", pelvis, {0.09, 0.92, 0}, {0.10, 0.55, 0}, 0.07, B);
  const int rhip = rb.add("r_hip", pelvis, {-0.09, 0.92, 0}, {-0.10, 0.55, 0}, 0.07, B);
  const int spine1 = rb.add("spine1", pelvis, {0, 1.02, 0}, {0, 1.12, 0}, 0.10, B);
  const int lknee = rb.add("l_knee", lhip, {0.10, 0.55, 0}, {0.10, 0.12, 0}, 0.05, B);
  const int rknee = rb.add("r_knee", rhip, {-0.10, 0.55, 0}, {-0.10, 0.12, 0}, 0.05, B);
  const int spine2 = rb.add("spine2", spine1, {0, 1.12, 0}, {0, 1.24, 0}, 0.105, B);
  const int lankle = rb.add("l_ankle", lknee, {0.10, 0.12, 0}, {0.10, 0.05, 0.05}, 0.035, B);
  const int rankle = rb.add("r_ankle", rknee, {-0.10, 0.12, 0}, {-0.10, 0.05, 0.05}, 0.035, B);
  const int spine3 = rb.add("spine3", spine2, {0, 1.24, 0}, {0, 1.40, 0}, 0.115, B);
  rb.add("l_foot", lankle, {0.10, 0.05, 0.05}, {0.10, 0.04, 0.15}, 0.03, B);
  rb.add("r_foot", rankle, {-0.10, 0.05, 0.05}, {-0.10, 0.04, 0.15}, 0.03, B);
  const int neck = rb.add("neck", spine3, {0, 1.40, 0}, {0, 1.50, 0}, 0.045, B);
  const int lcol = rb.add("l_collar", spine3, {0.03, 1.38, 0}, {0.14, 1.40, 0}, 0.04, B);
  const int rcol = rb.add("r_collar", spine3, {-0.03, 1.38, 0}, {-0.14, 1.40, 0}, 0.04, B);
  const int head = rb.add("head", neck, {0, 1.50, 0}, {0, 1.66, 0}, 0.085, B);
  const int lsho = rb.add("l_shoulder", lcol, {0.14, 1.40, 0}, {0.42, 1.40, 0}, 0.045, B);
  const int rsho = rb.add("r_shoulder", rcol, {-0.14, 1.40, 0}, {-0.42, 1.40, 0}, 0.045, B);
  const int lelb = rb.add("l_elbow", lsho, {0.42, 1.40, 0}, {0.66, 1.40, 0}, 0.035, B);
  const int relb = rb.add("r_elbow", rsho, {-0.42, 1.40, 0}, {-0.66, 1.40, 0}, 0.035, B);
  const int lwri = rb.add("l_wrist", lelb, {0.66, 1.40, 0}, {0.74, 1.40, 0}, 0.030, B);
  const int rwri = rb.add("r_wrist", relb, {-0.66, 1.40, 0}, {-0.74, 1.40, 0}, 0.030, B);

  const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  const double fz[5] = {0.035, 0.024, 0.008, -0.008, -0.024};
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    const PartId g = side == 0 ? PartId::LeftHand : PartId::RightHand;
    const int wrist = side == 0 ? lwri : rwri;
    const char* sfx = side == 0 ? "_l" : "_r";
    for (int f = 0; f < 5; ++f) {
      int parent = wrist;
      double x0 = 0.74;
      for (int seg = 1; seg <= 3; ++seg) {
        const double x1 = x0 + 0.028;
        parent = rb.add(std::string(fingers[f]) + std::to_string(seg) + sfx, parent,
                        {sx * x0, 1.40, fz[f]}, {sx * x1, 1.40, fz[f]}, 0.009, g);
        x0 = x1;
      }
    }
  }
  rb.add("jaw", head, {0, 1.53, 0.05}, {0, 1.49, 0.10}, 0.02, F);
  rb.add("l_eye", head, {0.03, 1.60, 0.06}, {0.03, 1.60, 0.085}, 0.012, F);
  rb.add("r_eye", head, {-0.03, 1.60, 0.06}, {-0.03, 1.60, 0.085}, 0.012, F);
  finalize(rb.rig);
  return rb.rig;
}

}  // namespace

Rig rig_preset(const std::string& name) {
  if (name == "biped-mini") return make_biped_mini();
  if (name == "smplx-dims") return make_smplx_dims();
  throw RigError("unknown rig preset '" + name + "'");
}

BoneTransforms forward_kinematics(const Rig& rig, const Pose& pose) {
  const int n = rig.bone_count();
  if (pose.theta_b.size() != rig.theta_b_dim() || pose.theta_h.size() != rig.theta_h_dim() ||
      pose.theta_f.size() != rig.theta_f_dim())
    throw RigError("pose vector sizes do not match rig");
  BoneTransforms bt;
  bt.R.resize(n);
  bt.t.resize(n);
  // world transforms of the joint frames, composed parent to child
  std::vector<Mat3> Rw(n);
  std::vector<Vec3> tw(n);
  for (int i = 0; i < n; ++i) {
    Vec3 aa;
    switch (rig.channel[i]) {
      case PoseChannel::Root: aa = pose.root_rot; break;
      case PoseChannel::Body: aa = pose.theta_b.segment<3>(rig.channel_offset[i]); break;
      case PoseChannel::Hand: aa = pose.theta_h.segment<3>(rig.channel_offset[i]); break;
      case PoseChannel::Face: aa = pose.theta_f.segment<3>(rig.channel_offset[i]); break;
    }
    const Mat3 Rl = axis_angle_to_matrix(aa);
    if (rig.bones[i].parent < 0) {
      Rw[i] = Rl;
      tw[i] = rig.bones[i].head + pose.root_trans;
    } else {
      const int p = rig.bones[i].parent;
      const Vec3 off = rig.bones[i].head - rig.bones[p].head;
      Rw[i] = Rw[p] * Rl;
      tw[i] = tw[p] + Rw[p] * off;
    }
    // bone transform maps canonical points: subtract the rest head first
    bt.R[i] = Rw[i];
    bt.t[i] = tw[i] - Rw[i] * rig.bones[i].head;
  }
  return bt;
}

double capsule_sdf(const Rig& rig, int bone, const Vec3& x) {
  const Bone& b = rig.bones[bone];
  return point_segment_distance(x, b.head, b.tail) - b.radius;
}

Vec3 capsule_sdf_gradient(const Rig& rig, int bone, const Vec3& x) {
  const Bone& b = rig.bones[bone];
  Vec3 c;
  point_segment_distance(x, b.head, b.tail, &c);
  const Vec3 d = x - c;
  const double n = d.norm();
  if (n < 1e-12) return Vec3::Zero();  // on the axis: direction undefined
  return d / n;
}

double rig_sdf(const Rig& rig, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < rig.bone_count(); ++i) best = std::min(best, capsule_sdf(rig, i, x));
  return best;
}

Vec3 rig_sdf_gradient(const Rig& rig, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int i = 0; i < rig.bone_count(); ++i) {
    const double d = capsule_sdf(rig, i, x);
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  return capsule_sdf_gradient(rig, arg, x);
}

double analytic_occupancy(const Rig& rig, const Vec3& x) {
  return rig_sdf(rig, x) <= 0.0 ? 1.0 : 0.0;
}

double capsule_area(const Rig& rig, int bone) {
  const Bone& b = rig.bones[bone];
  const double len = (b.tail - b.head).norm();
  const double pi = 3.14159265358979323846;
  return 2.0 * pi * b.radius * len + 4.0 * pi * b.radius * b.radius;
}

void rig_bounds(const Rig& rig, Vec3* bmin, Vec3* bmax) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Bone& b : rig.bones) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min({lo[k], b.head[k] - b.radius, b.tail[k] - b.radius});
      hi[k] = std::max({hi[k], b.head[k] + b.radius, b.tail[k] + b.radius});
    }
  }
  *bmin = lo;
  *bmax = hi;
}

VecX reference_weights(const Rig& rig, const Vec3& x) {
  const int n = rig.bone_count();
  VecX w(n);
  double dmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    w[i] = capsule_sdf(rig, i, x);
    dmin = std::min(dmin, w[i]);
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[i] = std::exp(-(w[i] - dmin) / rig.softmin_tau);
    sum += w[i];
  }
  return w / sum;
}

VecX reference_weight_jacobian(const Rig& rig, const Vec3& x, MatX3* jac) {
  const int n = rig.bone_count();
  const VecX w = reference_weights(rig, x);
  if (jac) {
    MatX3 gd(n, 3);
    for (int i = 0; i < n; ++i) gd.row(i) = capsule_sdf_gradient(rig, i, x).transpose();
    const Vec3 mean = gd.transpose() * w;  // sum_j w_j grad d_j
    jac->resize(n, 3);
    for (int i = 0; i < n; ++i)
      jac->row(i) = (w[i] / rig.softmin_tau) * (mean.transpose() - gd.row(i));
  }
  return w;
}

}  // namespace arti
