#include "backprop.hpp"

#include <cmath>

namespace arti {
namespace detail {

namespace {
constexpr double kSingularDet = 1e-12;
}

SkinLocal skin_local(const SkinNet& skin, const BoneTransforms& bt, const Vec3& x_c) {
  SkinLocal loc;
  loc.w = skin.forward(x_c, &loc.tape);
  const int k = skin.bone_count();
  loc.jw.resize(k, 3);
  VecX venc(skin.mlp.input_dim());
  for (int j = 0; j < 3; ++j) {
    Vec3 e = Vec3::Zero();
    e[j] = 1.0;
    skin.enc_x.tangent(x_c.data(), e.data(), 3, venc.data());
    const VecX zdot = skin.mlp.jvp(loc.tape.t, venc);
    loc.jw.col(j) = (loc.w.array() * zdot.array()).matrix() - loc.w.dot(zdot) * loc.w;
  }
  loc.J = lbs_jacobian(loc.w, loc.jw, x_c, bt);
  if (std::abs(loc.J.determinant()) < kSingularDet) return loc;
  loc.Jinv = loc.J.inverse();
  loc.ok = true;
  return loc;
}

void implicit_skin_backward(const SkinNet& skin, const SkinLocal& loc, const BoneTransforms& bt,
                            const Vec3& v_x, MlpGrads* skin_grads) {
  const Vec3 u = -(loc.Jinv.transpose() * v_x);
  VecX gw(bt.size());
  for (int i = 0; i < bt.size(); ++i) gw[i] = u.dot(bt.apply(i, loc.tape.x));
  skin.backward(loc.tape, gw, skin_grads, nullptr);
}

OnPointTerms on_point_pass(const AvatarNets& nets, const PoseCond& occ_cond,
                           const PoseCond& rgb_cond, const BoneTransforms& bt, const Vec3& x_c,
                           const Vec3& n_gt, const Vec3& c_gt, bool want_rgb, double s_normal,
                           double s_rgb, AvatarGrads* grads) {
  OnPointTerms out;
  SkinLocal loc = skin_local(nets.skin, bt, x_c);
  if (!loc.ok) return out;

  OccNet::Tape otape;
  VecX feat;
  nets.occ.forward(x_c, occ_cond, &otape, &feat);
  Vec3 n_c;
  nets.occ.backward(otape, 1.0, nullptr, nullptr, &n_c);

  const Vec3 m = loc.Jinv.transpose() * n_c;
  const double mn = m.norm();
  if (mn < 1e-12) return out;
  const Vec3 n_d = m / mn;

  out.normal = (n_d - n_gt).norm();
  RgbNet::Tape rtape;
  Vec3 rgb = Vec3::Zero();
  if (want_rgb) {
    rgb = nets.rgb.forward(x_c, n_d, feat, rgb_cond, &rtape);
    out.rgb = (rgb - c_gt).cwiseAbs().sum();
  }
  out.ok = true;
  if (!grads || (s_normal == 0.0 && s_rgb == 0.0)) return out;

  Vec3 g_nd = Vec3::Zero();
  if (s_normal != 0.0) {
    const Vec3 diff = n_d - n_gt;
    const double dn = diff.norm();
    if (dn > 1e-12) g_nd += (s_normal / dn) * diff;
  }

  Vec3 v_x = Vec3::Zero();
  VecX g_feat;
  if (want_rgb && s_rgb != 0.0) {
    Vec3 g_rgb;
    for (int c = 0; c < 3; ++c)
      g_rgb[c] = s_rgb * (rgb[c] > c_gt[c] ? 1.0 : (rgb[c] < c_gt[c] ? -1.0 : 0.0));
    Vec3 gx, gnd_r;
    nets.rgb.backward(rtape, g_rgb, &grads->rgb, &gx, &gnd_r, &g_feat);
    v_x += gx;
    g_nd += gnd_r;
  }

  // n_d = m / |m| with m = J^-T grad_x occ
  const Vec3 g_m = (g_nd - n_d * n_d.dot(g_nd)) / mn;
  const Vec3 a = loc.Jinv * g_m;

  // occupancy net: the shape feature path, then the derivative of the moving
  // canonical gradient, d/dtheta (a . grad_x occ), with its position curvature
  {
    if (g_feat.size() > 0) {
      Vec3 gx;
      nets.occ.backward(otape, 0.0, &g_feat, &grads->occ, &gx);
      v_x += gx;
    }
    Vec3 gx_dot;
    nets.occ.backward_fwd(otape, 1.0, nullptr, a, 0.0, nullptr, nullptr, nullptr, &grads->occ,
                          &gx_dot);
    v_x += gx_dot;
  }

  // skinning net through J: the term is -m^T dJ a with J = sum w_i R_i +
  // sum (R_i x + t_i) grad w_i^T, split into weight and weight-gradient parts
  {
    const int k = bt.size();
    VecX gw(k), gw_dot(k);
    for (int i = 0; i < k; ++i) {
      gw[i] = -m.dot(bt.apply(i, x_c));
      gw_dot[i] = -m.dot(bt.R[i] * a);
    }
    Vec3 gx_dot;
    nets.skin.backward_fwd(loc.tape, gw, a, gw_dot, nullptr, nullptr, &grads->skin, &gx_dot);
    v_x += gx_dot;
    const VecX wdot = loc.jw * a;
    for (int i = 0; i < k; ++i) v_x -= wdot[i] * (bt.R[i].transpose() * m);
  }

  implicit_skin_backward(nets.skin, loc, bt, v_x, &grads->skin);
  return out;
}

}  // namespace detail

bool occupancy_backward(const AvatarNets& nets, const PoseCond& occ_cond,
                        const BoneTransforms& bt, const Vec3& x_c, double g_occ,
                        MlpGrads* occ_grads, MlpGrads* skin_grads) {
  OccNet::Tape otape;
  nets.occ.forward(x_c, occ_cond, &otape);
  Vec3 gx;
  nets.occ.backward(otape, g_occ, nullptr, occ_grads, &gx);
  if (!skin_grads) return true;
  detail::SkinLocal loc = detail::skin_local(nets.skin, bt, x_c);
  if (!loc.ok) return false;
  detail::implicit_skin_backward(nets.skin, loc, bt, gx, skin_grads);
  return true;
}

}  // namespace arti
