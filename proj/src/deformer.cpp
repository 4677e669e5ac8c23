#include "arti/deformer.hpp"

#include <cmath>
#include <numeric>

namespace arti {

void ReferenceWeightField::eval(std::span<const Vec3> xs, MatX* W) const {
  W->resize(rig_.bone_count(), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    W->col(static_cast<Eigen::Index>(i)) = reference_weights(rig_, xs[i]);
}

void ReferenceWeightField::eval_with_jacobian(std::span<const Vec3> xs, MatX* W,
                                              std::vector<MatX3>* jac) const {
  W->resize(rig_.bone_count(), static_cast<Eigen::Index>(xs.size()));
  jac->resize(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    W->col(static_cast<Eigen::Index>(i)) =
        reference_weight_jacobian(rig_, xs[i], &(*jac)[i]);
}

void CapsuleOccupancyField::eval(std::span<const Vec3> xs, VecX* occ) const {
  occ->resize(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    (*occ)[static_cast<Eigen::Index>(i)] = analytic_occupancy(rig_, xs[i]);
}

BroydenResult broyden_root(const std::function<Vec3(const Vec3&)>& residual, const Vec3& x0,
                           const Mat3& K0, const RootFindSettings& settings) {
  BroydenResult out;
  Vec3 x = x0;
  Mat3 K = K0;
  Vec3 r = residual(x);
  for (int it = 0; it < settings.max_iters; ++it) {
    const Vec3 p = -settings.damping * (K * r);
    x += p;
    ++out.iterations;
    if (!x.allFinite()) break;
    if (p.norm() < settings.step_tol) {
      out.converged = true;
      break;
    }
    const Vec3 r_new = residual(x);
    const Vec3 y = r_new - r;
    const Vec3 Ky = K * y;
    const double denom = p.dot(Ky);
    if (std::abs(denom) > 1e-300) K += (p - Ky) * (p.transpose() * K) / denom;
    r = r_new;
  }
  out.x = x;
  out.residual = x.allFinite() ? residual(x).norm() : std::numeric_limits<double>::infinity();
  return out;
}

std::vector<int> init_bones(const Rig& rig, PartId label, InitMode mode) {
  switch (mode) {
    case InitMode::Part:
      return rig.group(label);
    case InitMode::Body:
      return rig.group(PartId::Body);
    case InitMode::All: {
      std::vector<int> all(static_cast<std::size_t>(rig.bone_count()));
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
  }
  return {};
}

namespace {

struct SolveState {
  int query = 0;
  int init_bone = -1;
  Vec3 x = Vec3::Zero();
  Mat3 K = Mat3::Zero();
  Vec3 r = Vec3::Zero();
  bool active = false;
  bool converged = false;
  double residual = std::numeric_limits<double>::infinity();
};

Vec3 lbs_residual(const VecX& w, const Vec3& x, const BoneTransforms& bt, const Vec3& x_d) {
  return lbs_deform(w, x, bt) - x_d;
}

}  // namespace

void find_correspondences(const WeightField& wf, const BoneTransforms& bt,
                          std::span<const Vec3> x_d, std::span<const PartId> labels,
                          const Rig& rig, InitMode mode, const RootFindSettings& settings,
                          std::vector<CandidateSet>* out, RootFindCounters* counters) {
  const std::size_t nq = x_d.size();
  out->assign(nq, CandidateSet{});
  std::array<std::vector<int>, kPartCount> inits;
  for (int p = 0; p < kPartCount; ++p) inits[p] = init_bones(rig, static_cast<PartId>(p), mode);

  std::vector<SolveState> states;
  for (std::size_t q = 0; q < nq; ++q)
    for (int bone : inits[static_cast<int>(labels[q])]) {
      SolveState s;
      s.query = static_cast<int>(q);
      s.init_bone = bone;
      s.x = bt.apply_inverse(bone, x_d[q]);
      states.push_back(s);
    }
  if (counters) counters->solver_runs += static_cast<long long>(states.size());

  // jacobian-based inverse estimates at the rigid initializations
  {
    std::vector<Vec3> xs(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) xs[i] = states[i].x;
    MatX W;
    std::vector<MatX3> jac;
    wf.eval_with_jacobian(xs, &W, &jac);
    for (std::size_t i = 0; i < states.size(); ++i) {
      SolveState& s = states[i];
      const Mat3 J = lbs_jacobian(W.col(static_cast<Eigen::Index>(i)), jac[i], s.x, bt);
      const double det = J.determinant();
      if (!std::isfinite(det) || std::abs(det) < 1e-12) {
        if (counters) ++counters->singular_inits;
        s.active = false;  // dropped: no candidate recorded
        s.init_bone = -1;
        continue;
      }
      s.K = J.inverse();
      s.r = lbs_residual(W.col(static_cast<Eigen::Index>(i)), s.x, bt, x_d[s.query]);
      s.active = true;
    }
  }

  std::vector<std::size_t> need_final;
  for (int it = 0; it < settings.max_iters; ++it) {
    std::vector<std::size_t> moved;
    std::vector<Vec3> xs;
    std::vector<Vec3> steps;
    for (std::size_t i = 0; i < states.size(); ++i) {
      SolveState& s = states[i];
      if (!s.active) continue;
      const Vec3 p = -settings.damping * (s.K * s.r);
      s.x += p;
      if (counters) ++counters->iterations;
      if (!s.x.allFinite()) {
        s.active = false;
        s.residual = std::numeric_limits<double>::infinity();
        continue;
      }
      if (p.norm() < settings.step_tol) {
        s.active = false;
        s.converged = true;
        need_final.push_back(i);
        continue;
      }
      moved.push_back(i);
      xs.push_back(s.x);
      steps.push_back(p);
    }
    if (moved.empty()) break;
    MatX W;
    wf.eval(xs, &W);
    for (std::size_t k = 0; k < moved.size(); ++k) {
      SolveState& s = states[moved[k]];
      const Vec3 r_new =
          lbs_residual(W.col(static_cast<Eigen::Index>(k)), s.x, bt, x_d[s.query]);
      const Vec3 y = r_new - s.r;
      const Vec3 Ky = s.K * y;
      const double denom = steps[k].dot(Ky);
      if (std::abs(denom) > 1e-300)
        s.K += (steps[k] - Ky) * (steps[k].transpose() * s.K) / denom;
      s.r = r_new;
      if (it == settings.max_iters - 1) {
        s.active = false;
        s.residual = s.r.norm();
      }
    }
  }
  for (SolveState& s : states)
    if (s.active) {  // ran out of iterations before ever moving? keep residual
      s.active = false;
      s.residual = s.r.norm();
    }

  if (!need_final.empty()) {
    std::vector<Vec3> xs(need_final.size());
    for (std::size_t k = 0; k < need_final.size(); ++k) xs[k] = states[need_final[k]].x;
    MatX W;
    wf.eval(xs, &W);
    for (std::size_t k = 0; k < need_final.size(); ++k) {
      SolveState& s = states[need_final[k]];
      s.residual =
          lbs_residual(W.col(static_cast<Eigen::Index>(k)), s.x, bt, x_d[s.query]).norm();
    }
  }

  for (const SolveState& s : states) {
    if (s.init_bone < 0) continue;
    Candidate c;
    c.x = s.x;
    c.init_bone = s.init_bone;
    c.residual = s.residual;
    c.converged = s.converged;
    c.valid = s.converged && s.residual <= settings.valid_tol;
    (*out)[static_cast<std::size_t>(s.query)].candidates.push_back(c);
  }

  // collapse duplicate roots, keeping the earliest
  for (CandidateSet& set : *out) {
    auto& cs = set.candidates;
    std::vector<Candidate> kept;
    for (const Candidate& c : cs) {
      bool dup = false;
      if (c.valid)
        for (const Candidate& k : kept)
          if (k.valid && (k.x - c.x).norm() < settings.dedup_tol) {
            dup = true;
            break;
          }
      if (!dup) kept.push_back(c);
    }
    cs = std::move(kept);
  }
}

void query_occupancy(const OccupancyField& occ, const WeightField& wf, const BoneTransforms& bt,
                     std::span<const Vec3> x_d, std::span<const PartId> labels, const Rig& rig,
                     InitMode mode, const RootFindSettings& settings,
                     std::vector<OccupancyQuery>* out, RootFindCounters* counters,
                     std::vector<CandidateSet>* sets_out) {
  std::vector<CandidateSet> local;
  std::vector<CandidateSet>& sets = sets_out ? *sets_out : local;
  find_correspondences(wf, bt, x_d, labels, rig, mode, settings, &sets, counters);

  std::vector<Vec3> xs;
  std::vector<std::pair<std::size_t, int>> owners;  // (query, candidate index)
  for (std::size_t q = 0; q < sets.size(); ++q)
    for (std::size_t c = 0; c < sets[q].candidates.size(); ++c)
      if (sets[q].candidates[c].valid) {
        xs.push_back(sets[q].candidates[c].x);
        owners.emplace_back(q, static_cast<int>(c));
      }
  VecX vals;
  if (!xs.empty()) occ.eval(xs, &vals);

  out->assign(x_d.size(), OccupancyQuery{});
  for (std::size_t k = 0; k < owners.size(); ++k) {
    const auto [q, c] = owners[k];
    OccupancyQuery& res = (*out)[q];
    const double v = vals[static_cast<Eigen::Index>(k)];
    if (!res.x_c.has_value() || v > res.occ) {  // ties keep the earliest candidate
      res.occ = v;
      res.x_c = sets[q].candidates[static_cast<std::size_t>(c)].x;
      res.candidate = c;
    }
  }
}

bool correspondence_jacobian(const WeightField& wf, const BoneTransforms& bt, const Vec3& x_c,
                             Mat3* inv_jac) {
  MatX W;
  std::vector<MatX3> jac;
  wf.eval_with_jacobian(std::span<const Vec3>(&x_c, 1), &W, &jac);
  const Mat3 J = lbs_jacobian(W.col(0), jac[0], x_c, bt);
  const double det = J.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) return false;
  *inv_jac = J.inverse();
  return true;
}

bool deformed_normal(const WeightField& wf, const BoneTransforms& bt, const Vec3& x_c,
                     const Vec3& grad_occ_c, Vec3* n_d) {
  MatX W;
  std::vector<MatX3> jac;
  wf.eval_with_jacobian(std::span<const Vec3>(&x_c, 1), &W, &jac);
  const Mat3 J = lbs_jacobian(W.col(0), jac[0], x_c, bt);
  const double det = J.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) return false;
  const Vec3 m = J.transpose().partialPivLu().solve(grad_occ_c);
  const double n = m.norm();
  if (!(n > 1e-15)) return false;
  *n_d = m / n;
  return true;
}

}  // namespace arti
