#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "arti/geom.hpp"
#include "arti/toml.hpp"

namespace arti {

struct RigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PartId : int { Body = 0, LeftHand = 1, RightHand = 2, Face = 3 };
inline constexpr int kPartCount = 4;
inline constexpr const char* kPartNames[kPartCount] = {"body", "left_hand", "right_hand", "face"};

struct Bone {
  std::string name;
  int parent = -1;  // -1 for the root; parents always precede children
  Vec3 head = Vec3::Zero();
  Vec3 tail = Vec3::Zero();
  double radius = 0.0;
  PartId group = PartId::Body;
};

// Which pose vector drives a bone and at what offset.
enum class PoseChannel : int { Root = 0, Body = 1, Hand = 2, Face = 3 };

struct Rig {
  std::string name;
  std::vector<Bone> bones;
  std::array<std::vector<int>, kPartCount> groups;  // bone indices per part
  int psi_dim = 0;
  bool allow_empty_groups = false;

  std::vector<PoseChannel> channel;  // per bone
  std::vector<int> channel_offset;   // start into the owning pose vector

  int bone_count() const { return static_cast<int>(bones.size()); }
  const std::vector<int>& group(PartId p) const { return groups[static_cast<int>(p)]; }
  int theta_b_dim() const;  // 3 per non-root body bone
  int theta_h_dim() const;
  int theta_f_dim() const;
  double softmin_tau = 0.02;  // meters; sharpness of the reference skinning
};

struct Pose {
  Vec3 root_rot = Vec3::Zero();  // axis-angle
  Vec3 root_trans = Vec3::Zero();
  VecX theta_b, theta_h, theta_f;  // axis-angle triples, rig layout order
  VecX psi;
};

Pose zero_pose(const Rig& rig);

// Per-bone affine maps x_canonical -> x_deformed: x |-> R[i] x + t[i].
struct BoneTransforms {
  std::vector<Mat3> R;
  std::vector<Vec3> t;
  int size() const { return static_cast<int>(R.size()); }
  Vec3 apply(int i, const Vec3& x) const { return R[i] * x + t[i]; }
  Vec3 apply_inverse(int i, const Vec3& x) const { return R[i].transpose() * (x - t[i]); }
};

// Validates the descriptor and derives groups and pose layout.
Rig build_rig(const toml::Document& doc);
Rig rig_preset(const std::string& name);  // "biped-mini" or "smplx-dims"
std::string rig_descriptor_toml(const Rig& rig);

BoneTransforms forward_kinematics(const Rig& rig, const Pose& pose);

// Capsule geometry in canonical space.
double capsule_sdf(const Rig& rig, int bone, const Vec3& x);
Vec3 capsule_sdf_gradient(const Rig& rig, int bone, const Vec3& x);
double rig_sdf(const Rig& rig, const Vec3& x);       // union: min over bones
Vec3 rig_sdf_gradient(const Rig& rig, const Vec3& x);
double analytic_occupancy(const Rig& rig, const Vec3& x);  // 1 iff rig_sdf <= 0

double capsule_area(const Rig& rig, int bone);
// Axis-aligned bounds of the canonical capsule union.
void rig_bounds(const Rig& rig, Vec3* bmin, Vec3* bmax);

// Soft-min skinning weights over all bones, sharpness rig.softmin_tau.
VecX reference_weights(const Rig& rig, const Vec3& x);
// Weights plus their position jacobian (rows = bones).
VecX reference_weight_jacobian(const Rig& rig, const Vec3& x, MatX3* jac);

}  // namespace arti
