#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "arti/scan.hpp"

namespace arti {

// Nearest-template-point labels for an unlabeled point set.
std::vector<PartId> label_points(std::span<const Vec3> points, std::span<const Vec3> tmpl_points,
                                 std::span<const PartId> tmpl_labels);

struct SampleBudgets {
  int body = 2048;
  int left_hand = 512;
  int right_hand = 512;
  int face = 512;
  int total() const { return body + left_hand + right_hand + face; }
};

struct ShellWidths {
  double body = 0.010;
  double hand = 0.003;
  double face = 0.003;
  double of(PartId p) const {
    if (p == PartId::Body) return body;
    if (p == PartId::Face) return face;
    return hand;
  }
};

struct RegCounts {
  int bone = 512;
  int surf = 512;
};

// One optimization step's worth of supervision.
struct TrainBatch {
  // observed deformed surface
  std::vector<Vec3> on_points, on_normals, on_colors;
  std::vector<PartId> on_labels;
  // shell points straddling the surface, inside then outside per surface point
  std::vector<Vec3> off_points;
  std::vector<double> off_occ;
  std::vector<PartId> off_labels;
  // canonical-space regularization
  std::vector<Vec3> bone_points;
  std::vector<Vec3> joint_points;
  std::vector<std::array<int, 2>> joint_pairs;  // (parent, child) at each joint
  std::vector<Vec3> surf_points;
  std::vector<VecX> surf_weights;  // reference weights at surf_points
};

// Per-part resampling of scan indices to fixed budgets (with replacement).
// Uniform mode ignores labels and draws the same total uniformly.
std::vector<std::size_t> part_resample(const Scan& scan, const SampleBudgets& budgets,
                                       bool part_aware, std::uint64_t seed, std::uint64_t step);

// Fills off_points/off_occ from the batch's on points: one inside and one
// outside sample per point at depth U(0, sigma].
void shell_sample(TrainBatch* batch, const ShellWidths& widths, std::uint64_t seed,
                  std::uint64_t step);

// Canonical regularization sets: interior bone-segment points, joint points
// with their (parent, child) pairs, and reference-weighted surface points.
void canonical_reg_samples(const Rig& rig, const RegCounts& counts, std::uint64_t seed,
                           std::uint64_t step, TrainBatch* batch);

TrainBatch make_train_batch(const Rig& rig, const Scan& scan, const SampleBudgets& budgets,
                            const ShellWidths& widths, const RegCounts& reg, bool part_aware,
                            std::uint64_t seed, std::uint64_t step);

}  // namespace arti
