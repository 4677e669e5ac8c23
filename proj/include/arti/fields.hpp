#pragma once

#include "arti/deformer.hpp"
#include "arti/nets.hpp"

namespace arti {

class NetWeightField : public WeightField {
 public:
  explicit NetWeightField(const SkinNet& net) : net_(net) {}
  int bone_count() const override { return net_.bone_count(); }
  void eval(std::span<const Vec3> xs, MatX* W) const override { net_.forward_batch(xs, W); }
  void eval_with_jacobian(std::span<const Vec3> xs, MatX* W,
                          std::vector<MatX3>* jac) const override {
    net_.forward_batch_jacobian(xs, W, jac);
  }

 private:
  const SkinNet& net_;
};

class NetOccupancyField : public OccupancyField {
 public:
  NetOccupancyField(const OccNet& net, PoseCond cond) : net_(net), cond_(std::move(cond)) {}
  void eval(std::span<const Vec3> xs, VecX* occ) const override {
    net_.forward_batch(xs, cond_, occ, nullptr);
  }

 private:
  const OccNet& net_;
  PoseCond cond_;
};

}  // namespace arti
