#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "arti/geom.hpp"

namespace arti {

// Exact nearest neighbor over a fixed point set.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Vec3> points) { build(std::move(points)); }

  void build(std::vector<Vec3> points) {
    pts_ = std::move(points);
    order_.resize(pts_.size());
    for (std::size_t i = 0; i < pts_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.clear();
    nodes_.reserve(pts_.size());
    if (!pts_.empty()) root_ = build_node(0, static_cast<int>(pts_.size()));
  }

  bool empty() const { return pts_.empty(); }
  std::size_t size() const { return pts_.size(); }
  const Vec3& point(int i) const { return pts_[static_cast<std::size_t>(i)]; }

  // Index of the closest point; ties resolve to the lowest index.
  int nearest(const Vec3& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, &best, &best_d2);
    return best;
  }

 private:
  struct Node {
    int index = -1;  // point at this node
    int axis = 0;
    int left = -1, right = -1;
  };

  int build_node(int begin, int end) {
    if (begin >= end) return -1;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = begin; i < end; ++i) {
      const Vec3& p = pts_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int axis = 0;
    const Vec3 ext = hi - lo;
    if (ext.y() > ext.x()) axis = 1;
    if (ext.z() > ext[axis]) axis = 2;
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double va = pts_[static_cast<std::size_t>(a)][axis];
                       const double vb = pts_[static_cast<std::size_t>(b)][axis];
                       return va < vb || (va == vb && a < b);
                     });
    Node n;
    n.index = order_[static_cast<std::size_t>(mid)];
    n.axis = axis;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    const int l = build_node(begin, mid);
    const int r = build_node(mid + 1, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void search(int node, const Vec3& q, int* best, double* best_d2) const {
    if (node < 0) return;
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    const Vec3& p = pts_[static_cast<std::size_t>(n.index)];
    const double d2 = (q - p).squaredNorm();
    if (d2 < *best_d2 || (d2 == *best_d2 && n.index < *best)) {
      *best_d2 = d2;
      *best = n.index;
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (diff * diff <= *best_d2) search(far, q, best, best_d2);
  }

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace arti
