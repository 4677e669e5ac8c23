#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "arti/rig.hpp"

namespace arti {

// One observed frame: deformed surface points with normals, colors, labels.
struct Scan {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<Vec3> colors;  // [0,1], already quantized to 8-bit steps
  std::vector<PartId> labels;
  Pose pose;
  std::size_t size() const { return points.size(); }
};

struct PoseAmplitudes {
  double body_deg = 40.0;
  double hand_deg = 55.0;
  double face_deg = 30.0;
  double root_rot_deg = 10.0;
  double root_trans = 0.05;
  double psi_amp = 1.0;
};

Pose sample_random_pose(const Rig& rig, const PoseAmplitudes& amp, std::uint64_t seed,
                        std::uint64_t index);

// Deterministic ground-truth texture, attached to canonical space.
Vec3 ground_truth_color(const Vec3& x_canonical, PartId part);

// Per-part point allocation: area proportional with hands and face oversampled.
std::vector<int> scan_part_counts(const Rig& rig, int total_points);

// Uniform samples on the visible surface of the listed capsules (points buried
// inside any other capsule of the whole rig are rejected).
void sample_union_surface(const Rig& rig, std::span<const int> bones, int count,
                          std::mt19937_64& g, std::vector<Vec3>* points,
                          std::vector<Vec3>* normals, std::vector<int>* bone_ids);

// Samples the canonical capsule-union surface (rejecting points buried inside
// another capsule), then poses everything with reference-weight skinning.
// Colors are ground-truth texture quantized to 8 bits.
Scan sample_synthetic_scan(const Rig& rig, const Pose& pose, int total_points,
                           std::uint64_t seed);

}  // namespace arti
