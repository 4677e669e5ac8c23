#include "arti/losses.hpp"

#include <algorithm>
#include <cmath>

#include "arti/fields.hpp"
#include "backprop.hpp"

namespace arti {

namespace {

constexpr double kOccClamp = 1e-7;

double clamp_occ(double o) { return std::clamp(o, kOccClamp, 1.0 - kOccClamp); }
bool in_band(double o) { return o > kOccClamp && o < 1.0 - kOccClamp; }

struct GeoWants {
  bool bce = false;
  bool normal = false;
  bool rgb = false;
};

// Shared correspondence pass for the shell and surface terms. Term means land
// in rep unweighted; the weights only scale the gradients.
void geo_pass(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt, const Pose& pose,
              const TrainBatch& batch, InitMode mode, const RootFindSettings& solver,
              const GeoWants& wants, const LossWeights& lw, LossReport* rep, AvatarGrads* grads,
              RootFindCounters* counters) {
  const PoseCond occ_cond = nets.occ.condition(pose.theta_b, pose.psi);
  PoseCond rgb_cond;
  if (wants.rgb) rgb_cond = nets.rgb.condition(pose.theta_b, pose.psi);

  const std::size_t n_off = wants.bce ? batch.off_points.size() : 0;
  const std::size_t n_on = (wants.normal || wants.rgb) ? batch.on_points.size() : 0;

  std::vector<Vec3> queries;
  std::vector<PartId> labels;
  queries.reserve(n_off + n_on);
  labels.reserve(n_off + n_on);
  for (std::size_t i = 0; i < n_off; ++i) {
    queries.push_back(batch.off_points[i]);
    labels.push_back(batch.off_labels[i]);
  }
  for (std::size_t i = 0; i < n_on; ++i) {
    queries.push_back(batch.on_points[i]);
    labels.push_back(batch.on_labels[i]);
  }
  if (queries.empty()) return;

  NetWeightField wf(nets.skin);
  NetOccupancyField of(nets.occ, occ_cond);
  std::vector<OccupancyQuery> qs;
  query_occupancy(of, wf, bt, queries, labels, rig, mode, solver, &qs, counters);

  rep->off_total = static_cast<int>(n_off);
  rep->on_total = static_cast<int>(n_on);

  double bce_sum = 0.0;
  for (std::size_t i = 0; i < n_off; ++i) {
    const OccupancyQuery& q = qs[i];
    const double o = q.x_c ? q.occ : 0.0;
    if (q.x_c) ++rep->off_valid;
    const double y = batch.off_occ[i];
    const double oc = clamp_occ(o);
    bce_sum += -(y * std::log(oc) + (1.0 - y) * std::log(1.0 - oc));
    if (grads && lw.bce != 0.0 && q.x_c && in_band(o)) {
      const double g_o = (o - y) / (o * (1.0 - o)) * (lw.bce / static_cast<double>(n_off));
      if (!occupancy_backward(nets, occ_cond, bt, *q.x_c, g_o, &grads->occ, &grads->skin))
        ++rep->singular;
    }
  }
  if (n_off > 0) rep->bce = bce_sum / static_cast<double>(n_off);

  int n_valid = 0;
  for (std::size_t j = 0; j < n_on; ++j)
    if (qs[n_off + j].x_c) ++n_valid;
  rep->on_valid = n_valid;
  if (n_on == 0 || n_valid == 0) return;

  const double s_n =
      (grads && wants.normal) ? lw.normal / static_cast<double>(n_valid) : 0.0;
  const double s_rgb = (grads && wants.rgb) ? lw.rgb / static_cast<double>(n_valid) : 0.0;
  double n_sum = 0.0, rgb_sum = 0.0;
  for (std::size_t j = 0; j < n_on; ++j) {
    const OccupancyQuery& q = qs[n_off + j];
    if (!q.x_c) continue;
    const detail::OnPointTerms t =
        detail::on_point_pass(nets, occ_cond, rgb_cond, bt, *q.x_c, batch.on_normals[j],
                              batch.on_colors[j], wants.rgb, s_n, s_rgb, grads);
    if (!t.ok) {
      ++rep->singular;
      continue;
    }
    n_sum += t.normal;
    rgb_sum += t.rgb;
  }
  rep->normal = n_sum / n_valid;
  rep->rgb = rgb_sum / n_valid;
}

// Canonical-space terms; no correspondence search involved.
void reg_pass(const AvatarNets& nets, const Rig& rig, const Pose& pose, const TrainBatch& batch,
              const LossWeights& lw, LossReport* rep, AvatarGrads* grads) {
  const PoseCond cond = nets.occ.condition(pose.theta_b, pose.psi);

  const std::size_t n_bone = batch.bone_points.size();
  if (n_bone > 0) {
    double sum = 0.0;
    for (const Vec3& p : batch.bone_points) {
      OccNet::Tape tape;
      const double o = nets.occ.forward(p, cond, &tape);
      const double oc = clamp_occ(o);
      sum += -std::log(oc);
      if (grads && lw.bone != 0.0 && in_band(o)) {
        const double g_o = -1.0 / o * (lw.bone / static_cast<double>(n_bone));
        nets.occ.backward(tape, g_o, nullptr, &grads->occ, nullptr);
      }
    }
    rep->bone = sum / static_cast<double>(n_bone);
  }

  const std::size_t n_joint = batch.joint_points.size();
  if (n_joint > 0) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_joint; ++j) {
      SkinNet::Tape tape;
      const VecX w = nets.skin.forward(batch.joint_points[j], &tape);
      const auto [pa, ch] = batch.joint_pairs[j];
      sum += (w[pa] - 0.5) * (w[pa] - 0.5) + (w[ch] - 0.5) * (w[ch] - 0.5);
      if (grads && lw.joint != 0.0) {
        VecX gw = VecX::Zero(w.size());
        const double s = lw.joint / static_cast<double>(n_joint);
        gw[pa] = 2.0 * (w[pa] - 0.5) * s;
        gw[ch] = 2.0 * (w[ch] - 0.5) * s;
        nets.skin.backward(tape, gw, &grads->skin, nullptr);
      }
    }
    rep->joint = sum / static_cast<double>(n_joint);
  }

  const std::size_t n_surf = batch.surf_points.size();
  if (n_surf > 0) {
    std::vector<int> nonbody;
    for (int p = 1; p < kPartCount; ++p)
      for (int b : rig.group(static_cast<PartId>(p))) nonbody.push_back(b);
    double sum = 0.0;
    for (std::size_t j = 0; j < n_surf; ++j) {
      SkinNet::Tape tape;
      const VecX w = nets.skin.forward(batch.surf_points[j], &tape);
      const VecX& ref = batch.surf_weights[j];
      VecX gw;
      const bool want = grads && lw.surf != 0.0 && !nonbody.empty();
      if (want) gw = VecX::Zero(w.size());
      for (int b : nonbody) {
        const double d = w[b] - ref[b];
        sum += d * d;
        if (want) gw[b] = 2.0 * d * (lw.surf / static_cast<double>(n_surf));
      }
      if (want) nets.skin.backward(tape, gw, &grads->skin, nullptr);
    }
    rep->surf = sum / static_cast<double>(n_surf);
  }
}

}  // namespace

LossReport loss_occ(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt,
                    const Pose& pose, const TrainBatch& batch, InitMode mode,
                    const RootFindSettings& solver, AvatarGrads* grads,
                    RootFindCounters* counters) {
  LossReport rep;
  LossWeights lw;
  lw.bce = 1.0;
  lw.normal = 1.0;
  geo_pass(nets, rig, bt, pose, batch, mode, solver, GeoWants{true, true, false}, lw, &rep, grads,
           counters);
  rep.total = rep.bce + rep.normal;
  return rep;
}

LossReport loss_rgb(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt,
                    const Pose& pose, const TrainBatch& batch, InitMode mode,
                    const RootFindSettings& solver, AvatarGrads* grads,
                    RootFindCounters* counters) {
  LossReport rep;
  LossWeights lw;
  lw.rgb = 1.0;
  geo_pass(nets, rig, bt, pose, batch, mode, solver, GeoWants{false, false, true}, lw, &rep, grads,
           counters);
  rep.total = rep.rgb;
  return rep;
}

LossReport loss_reg(const AvatarNets& nets, const Rig& rig, const Pose& pose,
                    const TrainBatch& batch, AvatarGrads* grads) {
  LossReport rep;
  LossWeights lw;
  lw.bone = 1.0;
  lw.joint = 1.0;
  lw.surf = 1.0;
  reg_pass(nets, rig, pose, batch, lw, &rep, grads);
  rep.total = rep.bone + rep.joint + rep.surf;
  return rep;
}

LossReport loss_total(const AvatarNets& nets, const Rig& rig, const BoneTransforms& bt,
                      const Pose& pose, const TrainBatch& batch, const LossWeights& weights,
                      InitMode mode, const RootFindSettings& solver, AvatarGrads* grads,
                      RootFindCounters* counters) {
  LossReport rep;
  geo_pass(nets, rig, bt, pose, batch, mode, solver, GeoWants{true, true, true}, weights, &rep,
           grads, counters);
  reg_pass(nets, rig, pose, batch, weights, &rep, grads);
  rep.total = weights.bce * rep.bce + weights.normal * rep.normal + weights.rgb * rep.rgb +
              weights.bone * rep.bone + weights.joint * rep.joint + weights.surf * rep.surf;
  return rep;
}

}  // namespace arti
