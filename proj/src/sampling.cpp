#include "arti/sampling.hpp"

#include "arti/kdtree.hpp"
#include "arti/rng.hpp"

namespace arti {

std::vector<PartId> label_points(std::span<const Vec3> points, std::span<const Vec3> tmpl_points,
                                 std::span<const PartId> tmpl_labels) {
  KdTree3 tree(std::vector<Vec3>(tmpl_points.begin(), tmpl_points.end()));
  std::vector<PartId> out(points.size(), PartId::Body);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int j = tree.nearest(points[i]);
    out[i] = tmpl_labels[static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<std::size_t> part_resample(const Scan& scan, const SampleBudgets& budgets,
                                       bool part_aware, std::uint64_t seed, std::uint64_t step) {
  auto g = rng_stream(seed, RngUse::Resample, step);
  std::vector<std::size_t> out;
  if (!part_aware) {
    const int total = budgets.total();
    out.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i)
      out.push_back(uniform_index(g, scan.size()));
    return out;
  }
  std::array<std::vector<std::size_t>, kPartCount> by_part;
  for (std::size_t i = 0; i < scan.size(); ++i)
    by_part[static_cast<int>(scan.labels[i])].push_back(i);
  const int want[kPartCount] = {budgets.body, budgets.left_hand, budgets.right_hand,
                                budgets.face};
  for (int p = 0; p < kPartCount; ++p) {
    if (by_part[p].empty()) continue;
    for (int i = 0; i < want[p]; ++i)
      out.push_back(by_part[p][uniform_index(g, by_part[p].size())]);
  }
  return out;
}

void shell_sample(TrainBatch* batch, const ShellWidths& widths, std::uint64_t seed,
                  std::uint64_t step) {
  auto g = rng_stream(seed, RngUse::Shell, step);
  const std::size_t n = batch->on_points.size();
  batch->off_points.clear();
  batch->off_occ.clear();
  batch->off_labels.clear();
  batch->off_points.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma = widths.of(batch->on_labels[i]);
    const Vec3& x = batch->on_points[i];
    const Vec3& nrm = batch->on_normals[i];
    const double din = sigma * (1.0 - uniform01(g));   // (0, sigma]
    const double dout = sigma * (1.0 - uniform01(g));
    batch->off_points.push_back(x - din * nrm);
    batch->off_occ.push_back(1.0);
    batch->off_labels.push_back(batch->on_labels[i]);
    batch->off_points.push_back(x + dout * nrm);
    batch->off_occ.push_back(0.0);
    batch->off_labels.push_back(batch->on_labels[i]);
  }
}

void canonical_reg_samples(const Rig& rig, const RegCounts& counts, std::uint64_t seed,
                           std::uint64_t step, TrainBatch* batch) {
  auto g = rng_stream(seed, RngUse::CanonicalReg, step);
  batch->bone_points.clear();
  batch->joint_points.clear();
  batch->joint_pairs.clear();
  batch->surf_points.clear();
  batch->surf_weights.clear();

  // interior segment points, length weighted, 10% end margin
  std::vector<double> cum(static_cast<std::size_t>(rig.bone_count()));
  double acc = 0.0;
  for (int i = 0; i < rig.bone_count(); ++i) {
    acc += (rig.bones[static_cast<std::size_t>(i)].tail -
            rig.bones[static_cast<std::size_t>(i)].head)
               .norm();
    cum[static_cast<std::size_t>(i)] = acc;
  }
  for (int s = 0; s < counts.bone; ++s) {
    const double r = uniform(g, 0.0, acc);
    std::size_t k = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    if (k >= cum.size()) k = cum.size() - 1;
    const Bone& b = rig.bones[k];
    const double t = uniform(g, 0.1, 0.9);
    batch->bone_points.push_back(b.head + t * (b.tail - b.head));
  }

  for (int i = 0; i < rig.bone_count(); ++i) {
    const int p = rig.bones[static_cast<std::size_t>(i)].parent;
    if (p < 0) continue;
    batch->joint_points.push_back(rig.bones[static_cast<std::size_t>(i)].head);
    batch->joint_pairs.push_back({p, i});
  }

  std::vector<int> all_bones(static_cast<std::size_t>(rig.bone_count()));
  for (int i = 0; i < rig.bone_count(); ++i) all_bones[static_cast<std::size_t>(i)] = i;
  sample_union_surface(rig, all_bones, counts.surf, g, &batch->surf_points, nullptr, nullptr);
  batch->surf_weights.reserve(batch->surf_points.size());
  for (const Vec3& x : batch->surf_points)
    batch->surf_weights.push_back(reference_weights(rig, x));
}

TrainBatch make_train_batch(const Rig& rig, const Scan& scan, const SampleBudgets& budgets,
                            const ShellWidths& widths, const RegCounts& reg, bool part_aware,
                            std::uint64_t seed, std::uint64_t step) {
  TrainBatch batch;
  const auto idx = part_resample(scan, budgets, part_aware, seed, step);
  batch.on_points.reserve(idx.size());
  for (const std::size_t i : idx) {
    batch.on_points.push_back(scan.points[i]);
    batch.on_normals.push_back(scan.normals[i]);
    batch.on_colors.push_back(scan.colors[i]);
    batch.on_labels.push_back(scan.labels[i]);
  }
  shell_sample(&batch, widths, seed, step);
  canonical_reg_samples(rig, reg, seed, step, &batch);
  return batch;
}

}  // namespace arti
