#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "arti/rig.hpp"

namespace arti {

// Batched skinning-weight field. Implemented by the learned net and by the
// analytic soft-min reference, so the correspondence machinery runs on either.
class WeightField {
 public:
  virtual ~WeightField() = default;
  virtual int bone_count() const = 0;
  // W: bone_count x N, one column per query point
  virtual void eval(std::span<const Vec3> xs, MatX* W) const = 0;
  // jac[n]: bone_count x 3 position jacobian per point
  virtual void eval_with_jacobian(std::span<const Vec3> xs, MatX* W,
                                  std::vector<MatX3>* jac) const = 0;
};

// Batched occupancy field; conditioning (pose, shape) is bound at construction.
class OccupancyField {
 public:
  virtual ~OccupancyField() = default;
  virtual void eval(std::span<const Vec3> xs, VecX* occ) const = 0;
};

class ReferenceWeightField : public WeightField {
 public:
  explicit ReferenceWeightField(const Rig& rig) : rig_(rig) {}
  int bone_count() const override { return rig_.bone_count(); }
  void eval(std::span<const Vec3> xs, MatX* W) const override;
  void eval_with_jacobian(std::span<const Vec3> xs, MatX* W,
                          std::vector<MatX3>* jac) const override;

 private:
  const Rig& rig_;
};

class CapsuleOccupancyField : public OccupancyField {
 public:
  explicit CapsuleOccupancyField(const Rig& rig) : rig_(rig) {}
  void eval(std::span<const Vec3> xs, VecX* occ) const override;

 private:
  const Rig& rig_;
};

// Forward linear blend skinning of one point.
inline Vec3 lbs_deform(const VecX& w, const Vec3& x, const BoneTransforms& bt) {
  Vec3 out = Vec3::Zero();
  for (int i = 0; i < bt.size(); ++i) out += w[i] * (bt.R[i] * x + bt.t[i]);
  return out;
}

// d(deformed)/d(canonical) when the weights vary with position.
inline Mat3 lbs_jacobian(const VecX& w, const MatX3& jw, const Vec3& x,
                         const BoneTransforms& bt) {
  Mat3 J = Mat3::Zero();
  for (int i = 0; i < bt.size(); ++i) {
    J += w[i] * bt.R[i];
    J.noalias() += (bt.R[i] * x + bt.t[i]) * jw.row(i);
  }
  return J;
}

struct RootFindSettings {
  int max_iters = 30;
  double step_tol = 1e-6;
  double valid_tol = 1e-4;   // residual bound for a usable correspondence
  double dedup_tol = 1e-5;   // candidates closer than this collapse to one
  double damping = 1.0;
};

// Which bones seed the multi-start search for a query of part label l.
enum class InitMode { Part, Body, All };

struct RootFindCounters {
  long long solver_runs = 0;   // one per (query, init bone)
  long long iterations = 0;
  long long singular_inits = 0;
};

struct Candidate {
  Vec3 x = Vec3::Zero();
  int init_bone = -1;
  double residual = 0.0;
  bool converged = false;
  bool valid = false;
};

struct CandidateSet {
  std::vector<Candidate> candidates;
};

// Single root solve with the quasi-Newton rank-one inverse update. K0 is the
// inverse of the residual jacobian estimate at x0.
struct BroydenResult {
  Vec3 x = Vec3::Zero();
  double residual = 0.0;
  bool converged = false;
  int iterations = 0;
};
BroydenResult broyden_root(const std::function<Vec3(const Vec3&)>& residual, const Vec3& x0,
                           const Mat3& K0, const RootFindSettings& settings);

std::vector<int> init_bones(const Rig& rig, PartId label, InitMode mode);

// Multi-start correspondence search for deformed queries. Solves all
// (query, init) roots in lockstep so weight-field evaluations batch.
void find_correspondences(const WeightField& wf, const BoneTransforms& bt,
                          std::span<const Vec3> x_d, std::span<const PartId> labels,
                          const Rig& rig, InitMode mode, const RootFindSettings& settings,
                          std::vector<CandidateSet>* out, RootFindCounters* counters = nullptr);

struct OccupancyQuery {
  double occ = 0.0;
  std::optional<Vec3> x_c;  // argmax candidate, if any is valid
  int candidate = -1;
};

// Occupancy of deformed queries: max over valid candidates, ties to the
// lowest candidate index.
void query_occupancy(const OccupancyField& occ, const WeightField& wf, const BoneTransforms& bt,
                     std::span<const Vec3> x_d, std::span<const PartId> labels, const Rig& rig,
                     InitMode mode, const RootFindSettings& settings,
                     std::vector<OccupancyQuery>* out, RootFindCounters* counters = nullptr,
                     std::vector<CandidateSet>* sets = nullptr);

// Inverse of the skinning jacobian at a canonical point; false if singular.
bool correspondence_jacobian(const WeightField& wf, const BoneTransforms& bt, const Vec3& x_c,
                             Mat3* inv_jac);

// Pushes a canonical occupancy gradient through the deformation:
// n_d = normalize(J^-T n_c).
bool deformed_normal(const WeightField& wf, const BoneTransforms& bt, const Vec3& x_c,
                     const Vec3& grad_occ_c, Vec3* n_d);

}  // namespace arti
