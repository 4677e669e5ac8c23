#pragma once

#include "arti/deformer.hpp"
#include "arti/nets.hpp"
#include "arti/sampling.hpp"

namespace arti {

struct LossWeights {
  double bce = 1.0;
  double normal = 1.0;
  double rgb = 1.0;
  double bone = 1.0;
  double joint = 1.0;
  double surf = 10.0;
};

// Per-term means are reported unweighted; total applies the weights.
struct LossReport {
  double bce = 0.0, normal = 0.0, rgb = 0.0;
  double bone = 0.0, joint = 0.0, surf = 0.0;
  double total = 0.0;
  int off_total = 0, off_valid = 0;
  int on_total = 0, on_valid = 0;
  int singular = 0;  // points dropped for an uninvertible skinning jacobian
};

struct AvatarGrads {
  MlpGrads occ, skin, rgb;
  void init_like(const AvatarNets& nets) {
    occ.init_like(nets.occ.mlp);
    skin.init_like(nets.skin.mlp);
    rgb.init_like(nets.rgb.mlp);
  }
  void zero() {
    occ.zero();
    skin.zero();
    rgb.zero();
  }
  bool finite() const { return occ.finite() && skin.finite() && rgb.finite(); }
};

// Parameter gradients of one resolved occupancy query: the direct occupancy
// term plus the implicit dependence of the canonical root on the skinning
// parameters. Returns false when the skinning jacobian is singular (the
// implicit part is then skipped).
bool occupancy_backward(const AvatarNets& nets, const PoseCond& occ_cond,
                        const BoneTransforms& bt, const Vec3& x_c, double g_occ,
                        MlpGrads* occ_grads, MlpGrads* skin_grads);

// Geometry terms: binary cross entropy on shell points plus the normal error
// on surface points, both routed through the correspondence search.
LossReport loss_occ(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt,
                    const Pose& pose, const TrainBatch& batch, InitMode mode,
                    const RootFindSettings& solver, AvatarGrads* grads = nullptr,
                    RootFindCounters* counters = nullptr);

// L1 color loss on surface points with found correspondences.
LossReport loss_rgb(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt,
                    const Pose& pose, const TrainBatch& batch, InitMode mode,
                    const RootFindSettings& solver, AvatarGrads* grads = nullptr,
                    RootFindCounters* counters = nullptr);

// Canonical-space regularization: bone interiors occupied, joint weights near
// half for the meeting pair, non-body weights near the reference.
LossReport loss_reg(const AvatarNets& nets, const Rig& rig, const Pose& pose,
                    const TrainBatch& batch, AvatarGrads* grads = nullptr);

LossReport loss_total(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt,
                      const Pose& pose, const TrainBatch& batch, const LossWeights& weights,
                      InitMode mode, const RootFindSettings& solver,
                      AvatarGrads* grads = nullptr, RootFindCounters* counters = nullptr);

}  // namespace arti
