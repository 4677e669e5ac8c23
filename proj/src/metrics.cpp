#include "arti/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "arti/kdtree.hpp"
#include "arti/rng.hpp"

namespace arti {

namespace {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double aabb_dist2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = std::max({lo[k] - q[k], 0.0, q[k] - hi[k]});
    d2 += d * d;
  }
  return d2;
}

Vec3 face_normal(const Mesh& m, int f) {
  const auto& fc = m.faces[static_cast<std::size_t>(f)];
  const Vec3 n = (m.vertices[static_cast<std::size_t>(fc[1])] -
                  m.vertices[static_cast<std::size_t>(fc[0])])
                     .cross(m.vertices[static_cast<std::size_t>(fc[2])] -
                            m.vertices[static_cast<std::size_t>(fc[0])]);
  const double len = n.norm();
  return len > 1e-20 ? Vec3(n / len) : Vec3::Zero();
}

double bbox_diagonal(const Mesh& m) {
  if (m.vertices.empty()) return 0.0;
  Vec3 lo = m.vertices[0], hi = m.vertices[0];
  for (const Vec3& v : m.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return (hi - lo).norm();
}

}  // namespace

TriBvh::TriBvh(const Mesh& mesh) {
  tris_.reserve(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& fc = mesh.faces[f];
    tris_.push_back({mesh.vertices[static_cast<std::size_t>(fc[0])],
                     mesh.vertices[static_cast<std::size_t>(fc[1])],
                     mesh.vertices[static_cast<std::size_t>(fc[2])], static_cast<int>(f)});
  }
  if (!tris_.empty()) root_ = build(0, static_cast<int>(tris_.size()));
}

int TriBvh::build(int begin, int end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.bmin = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.bmax = -node.bmin;
  for (int i = begin; i < end; ++i) {
    const Tri& t = tris_[static_cast<std::size_t>(i)];
    node.bmin = node.bmin.cwiseMin(t.a).cwiseMin(t.b).cwiseMin(t.c);
    node.bmax = node.bmax.cwiseMax(t.a).cwiseMax(t.b).cwiseMax(t.c);
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin > 8) {
    int axis = 0;
    const Vec3 ext = node.bmax - node.bmin;
    if (ext[1] > ext[axis]) axis = 1;
    if (ext[2] > ext[axis]) axis = 2;
    const int mid = (begin + end) / 2;
    std::nth_element(tris_.begin() + begin, tris_.begin() + mid, tris_.begin() + end,
                     [axis](const Tri& x, const Tri& y) {
                       return x.a[axis] + x.b[axis] + x.c[axis] <
                              y.a[axis] + y.b[axis] + y.c[axis];
                     });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
  }
  return id;
}

TriBvh::Hit TriBvh::closest(const Vec3& q) const {
  Hit best;
  best.dist2 = std::numeric_limits<double>::infinity();
  if (root_ < 0) return best;
  int stack[64];
  int top = 0;
  stack[top++] = root_;
  while (top > 0) {
    const Node& n = nodes_[static_cast<std::size_t>(stack[--top])];
    if (aabb_dist2(q, n.bmin, n.bmax) >= best.dist2) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const Tri& t = tris_[static_cast<std::size_t>(i)];
        const Vec3 p = closest_point_on_triangle(q, t.a, t.b, t.c);
        const double d2 = (p - q).squaredNorm();
        if (d2 < best.dist2) {
          best.dist2 = d2;
          best.point = p;
          best.face = t.face;
        }
      }
    } else {
      // nearer child first
      const double dl = aabb_dist2(q, nodes_[static_cast<std::size_t>(n.left)].bmin,
                                   nodes_[static_cast<std::size_t>(n.left)].bmax);
      const double dr = aabb_dist2(q, nodes_[static_cast<std::size_t>(n.right)].bmin,
                                   nodes_[static_cast<std::size_t>(n.right)].bmax);
      if (dl < dr) {
        stack[top++] = n.right;
        stack[top++] = n.left;
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
  }
  return best;
}

void TriBvh::ray_x_hits(const Vec3& origin, std::vector<double>* ts) const {
  ts->clear();
  if (root_ < 0) return;
  int stack[64];
  int top = 0;
  stack[top++] = root_;
  while (top > 0) {
    const Node& n = nodes_[static_cast<std::size_t>(stack[--top])];
    if (origin[1] < n.bmin[1] || origin[1] > n.bmax[1] || origin[2] < n.bmin[2] ||
        origin[2] > n.bmax[2] || n.bmax[0] < origin[0])
      continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const Tri& t = tris_[static_cast<std::size_t>(i)];
        // ray direction (1,0,0)
        const Vec3 e1 = t.b - t.a, e2 = t.c - t.a;
        // cross((1,0,0), e2) = (0, -e2.z, e2.y)
        const Vec3 pv(0.0, -e2[2], e2[1]);
        const double det = e1.dot(pv);
        if (std::abs(det) < 1e-14) continue;
        const double inv = 1.0 / det;
        const Vec3 tv = origin - t.a;
        const double u = tv.dot(pv) * inv;
        if (u < 0.0 || u > 1.0) continue;
        const Vec3 qv = tv.cross(e1);
        const double v = qv[0] * inv;  // dot(dir, qv) with dir = x-hat
        if (v < 0.0 || u + v > 1.0) continue;
        const double thit = e2.dot(qv) * inv;
        if (thit >= 0.0) ts->push_back(thit);
      }
    } else {
      stack[top++] = n.left;
      stack[top++] = n.right;
    }
  }
}

SurfaceSamples sample_mesh_surface(const Mesh& mesh, int count, std::uint64_t seed) {
  SurfaceSamples out;
  if (mesh.faces.empty() || count <= 0) return out;
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& fc = mesh.faces[f];
    const Vec3 n = (mesh.vertices[static_cast<std::size_t>(fc[1])] -
                    mesh.vertices[static_cast<std::size_t>(fc[0])])
                       .cross(mesh.vertices[static_cast<std::size_t>(fc[2])] -
                              mesh.vertices[static_cast<std::size_t>(fc[0])]);
    total += 0.5 * n.norm();
    cum[f] = total;
  }
  if (total <= 0.0) return out;
  auto g = rng_stream(seed, RngUse::MeshSample);
  out.points.reserve(static_cast<std::size_t>(count));
  out.faces.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    const double u = uniform01(g) * total;
    const auto it = std::lower_bound(cum.begin(), cum.end(), u);
    const std::size_t f = std::min(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
    const auto& fc = mesh.faces[f];
    double r1 = std::sqrt(uniform01(g));
    double r2 = uniform01(g);
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(fc[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(fc[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(fc[2])];
    out.points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
    out.faces.push_back(static_cast<int>(f));
  }
  return out;
}

ChamferResult chamfer_distance(const Mesh& a, const Mesh& b, const ChamferOptions& opt) {
  ChamferResult res;
  const bool ea = a.faces.empty(), eb = b.faces.empty();
  if (ea && eb) return res;
  if (ea || eb) {
    const double diag = bbox_diagonal(ea ? b : a) * 1000.0;
    res.mean_mm = diag;
    res.max_mm = diag;
    return res;
  }
  const SurfaceSamples sa = sample_mesh_surface(a, opt.samples, opt.seed);
  const SurfaceSamples sb = sample_mesh_surface(b, opt.samples, opt.seed);
  const TriBvh bvh_a(a), bvh_b(b);
  // per-direction partial sums are combined with one commutative addition so
  // swapping the arguments reproduces the result bit for bit
  struct Side {
    double sum = 0.0, worst = 0.0, nc = 0.0;
    std::size_t n = 0;
  };
  auto one_side = [](const SurfaceSamples& src, const Mesh& src_mesh, const TriBvh& dst_bvh,
                     const Mesh& dst_mesh) {
    Side s;
    for (std::size_t i = 0; i < src.points.size(); ++i) {
      const TriBvh::Hit h = dst_bvh.closest(src.points[i]);
      const double d = std::sqrt(h.dist2);
      s.sum += d;
      s.worst = std::max(s.worst, d);
      s.nc += face_normal(src_mesh, src.faces[i]).dot(face_normal(dst_mesh, h.face));
      ++s.n;
    }
    return s;
  };
  const Side ab = one_side(sa, a, bvh_b, b);
  const Side ba = one_side(sb, b, bvh_a, a);
  const std::size_t n = ab.n + ba.n;
  if (n > 0) {
    res.mean_mm = (ab.sum + ba.sum) / static_cast<double>(n) * 1000.0;
    res.max_mm = std::max(ab.worst, ba.worst) * 1000.0;
    res.normal_consistency = (ab.nc + ba.nc) / static_cast<double>(n);
  }
  return res;
}

Mesh submesh_by_part(const Mesh& mesh, std::span<const PartId> labels,
                     std::initializer_list<PartId> parts) {
  Mesh out;
  std::vector<int> remap(mesh.vertices.size(), -1);
  auto in_parts = [&](int v) {
    const PartId p = labels[static_cast<std::size_t>(v)];
    for (PartId q : parts)
      if (p == q) return true;
    return false;
  };
  for (const auto& f : mesh.faces) {
    if (!(in_parts(f[0]) && in_parts(f[1]) && in_parts(f[2]))) continue;
    std::array<int, 3> nf;
    for (int k = 0; k < 3; ++k) {
      int& r = remap[static_cast<std::size_t>(f[k])];
      if (r < 0) {
        r = out.vertex_count();
        out.vertices.push_back(mesh.vertices[static_cast<std::size_t>(f[k])]);
      }
      nf[k] = r;
    }
    out.faces.push_back(nf);
  }
  return out;
}

ChamferResult chamfer_distance_masked(const Mesh& a, std::span<const PartId> labels_a,
                                      const Mesh& b, std::span<const PartId> labels_b,
                                      std::initializer_list<PartId> parts,
                                      const ChamferOptions& opt) {
  return chamfer_distance(submesh_by_part(a, labels_a, parts),
                          submesh_by_part(b, labels_b, parts), opt);
}

double volumetric_iou(const Mesh& a, const Mesh& b, int resolution) {
  if (a.vertices.empty() || b.vertices.empty()) return 0.0;
  Vec3 lo = a.vertices[0], hi = a.vertices[0];
  for (const Vec3& v : a.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  for (const Vec3& v : b.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 pad = 0.05 * (hi - lo).cwiseMax(1e-6);
  lo -= pad;
  hi += pad;
  const Vec3 ext = hi - lo;
  const double spacing = ext.maxCoeff() / static_cast<double>(resolution);
  const int nx = std::max(1, static_cast<int>(std::ceil(ext[0] / spacing)));
  const int ny = std::max(1, static_cast<int>(std::ceil(ext[1] / spacing)));
  const int nz = std::max(1, static_cast<int>(std::ceil(ext[2] / spacing)));

  const TriBvh bvh_a(a), bvh_b(b);
  // fixed sub-cell shift keeps rays off edges and vertices
  const double ey = 0.137e-3 * spacing, ez = 0.219e-3 * spacing;
  long long inter = 0, uni = 0;
  std::vector<double> ta, tb;
  std::vector<char> in_a(static_cast<std::size_t>(nx)), in_b(static_cast<std::size_t>(nx));
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      const Vec3 origin(lo[0] - spacing, lo[1] + (j + 0.5) * spacing + ey,
                        lo[2] + (k + 0.5) * spacing + ez);
      bvh_a.ray_x_hits(origin, &ta);
      bvh_b.ray_x_hits(origin, &tb);
      std::sort(ta.begin(), ta.end());
      std::sort(tb.begin(), tb.end());
      for (int i = 0; i < nx; ++i) {
        const double x = (i + 0.5) * spacing + spacing;  // relative to origin
        const bool ia =
            (std::upper_bound(ta.begin(), ta.end(), x) - ta.begin()) % 2 == 1;
        const bool ib =
            (std::upper_bound(tb.begin(), tb.end(), x) - tb.begin()) % 2 == 1;
        inter += ia && ib;
        uni += ia || ib;
      }
    }
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

bool is_watertight(const Mesh& mesh, std::string* why) {
  if (mesh.faces.empty()) {
    if (why) *why = "no faces";
    return false;
  }
  std::unordered_map<std::uint64_t, int> balance;  // +1 forward, -1 reverse
  const auto nv = static_cast<std::uint64_t>(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      if (why) *why = "degenerate face";
      return false;
    }
    for (int k = 0; k < 3; ++k) {
      const int u = f[k], v = f[(k + 1) % 3];
      const std::uint64_t key = std::min(u, v) * nv + static_cast<std::uint64_t>(std::max(u, v));
      balance[key] += (u < v) ? 1 : -1;
    }
  }
  // each undirected edge must have been seen once in each direction; a
  // balanced count of 0 with total 2 is exactly that, anything else is a hole
  // or a fin
  std::unordered_map<std::uint64_t, int> totals;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int u = f[k], v = f[(k + 1) % 3];
      const std::uint64_t key = std::min(u, v) * nv + static_cast<std::uint64_t>(std::max(u, v));
      ++totals[key];
    }
  for (const auto& [key, count] : totals) {
    if (count != 2 || balance[key] != 0) {
      if (why)
        *why = "edge " + std::to_string(key / nv) + "-" + std::to_string(key % nv) + " used " +
               std::to_string(count) + " time(s), orientation balance " +
               std::to_string(balance[key]);
      return false;
    }
  }
  return true;
}

std::vector<PartId> label_vertices_by_rig(std::span<const Vec3> canonical_vertices,
                                          const Rig& rig) {
  std::vector<PartId> labels(canonical_vertices.size(), PartId::Body);
  for (std::size_t i = 0; i < canonical_vertices.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int b = 0; b < rig.bone_count(); ++b) {
      const double d = capsule_sdf(rig, b, canonical_vertices[i]);
      if (d < best) {
        best = d;
        labels[i] = rig.bones[static_cast<std::size_t>(b)].group;
      }
    }
  }
  return labels;
}

std::vector<PartId> transfer_labels_nn(std::span<const Vec3> vertices,
                                       std::span<const Vec3> ref_vertices,
                                       std::span<const PartId> ref_labels) {
  KdTree3 tree(std::vector<Vec3>(ref_vertices.begin(), ref_vertices.end()));
  std::vector<PartId> labels(vertices.size(), PartId::Body);
  for (std::size_t i = 0; i < vertices.size(); ++i)
    labels[i] = ref_labels[static_cast<std::size_t>(tree.nearest(vertices[i]))];
  return labels;
}

FrameMetrics evaluate_frame(const Mesh& pred, const Mesh& gt, std::span<const PartId> gt_labels,
                            const ChamferOptions& opt, int iou_resolution) {
  FrameMetrics fm;
  fm.pred_vertices = pred.vertex_count();
  fm.pred_faces = pred.face_count();
  const ChamferResult cd = chamfer_distance(pred, gt, opt);
  fm.cd_mm = cd.mean_mm;
  fm.cd_max_mm = cd.max_mm;
  fm.normal_consistency = cd.normal_consistency;
  fm.iou = volumetric_iou(pred, gt, iou_resolution);
  fm.watertight = is_watertight(pred);
  const std::vector<PartId> pred_labels =
      pred.vertices.empty() ? std::vector<PartId>{}
                            : transfer_labels_nn(pred.vertices, gt.vertices, gt_labels);
  const ChamferResult hands = chamfer_distance_masked(
      pred, pred_labels, gt, gt_labels, {PartId::LeftHand, PartId::RightHand}, opt);
  fm.cd_hands_mm = hands.mean_mm;
  return fm;
}

}  // namespace arti
