#pragma once

#include "arti/losses.hpp"

namespace arti::detail {

// Skinning weights, their position jacobian, and the LBS jacobian at one
// canonical point.
struct SkinLocal {
  SkinNet::Tape tape;
  VecX w;
  MatX3 jw;
  Mat3 J = Mat3::Zero();
  Mat3 Jinv = Mat3::Zero();
  bool ok = false;  // false when J is singular
};
SkinLocal skin_local(const SkinNet& skin, const BoneTransforms& bt, const Vec3& x_c);

// Routes a position gradient v_x at the canonical root into the skinning
// parameters through the root's implicit dependence on them.
void implicit_skin_backward(const SkinNet& skin, const SkinLocal& loc, const BoneTransforms& bt,
                            const Vec3& v_x, MlpGrads* skin_grads);

struct OnPointTerms {
  double normal = 0.0;
  double rgb = 0.0;
  bool ok = false;
};

// One surface point with a resolved canonical root: forward normal and color,
// then the chain back into all three nets. The gradient scales fold the loss
// weight and the batch denominator; zero scales skip the backward work.
OnPointTerms on_point_pass(const AvatarNets& nets, const PoseCond& occ_cond,
                           const PoseCond& rgb_cond, const BoneTransforms& bt, const Vec3& x_c,
                           const Vec3& n_gt, const Vec3& c_gt, bool want_rgb, double s_normal,
                           double s_rgb, AvatarGrads* grads);

}  // namespace arti::detail
