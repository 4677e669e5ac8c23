#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>

#include "arti/mesh.hpp"
#include "arti/rig.hpp"

namespace arti {

// Exact nearest-point and ray queries over a triangle soup.
class TriBvh {
 public:
  TriBvh() = default;
  explicit TriBvh(const Mesh& mesh);

  bool empty() const { return tris_.empty(); }

  struct Hit {
    double dist2 = 0.0;
    Vec3 point = Vec3::Zero();
    int face = -1;
  };
  Hit closest(const Vec3& q) const;

  // All parameters t >= 0 where origin + t * x-hat crosses the surface.
  void ray_x_hits(const Vec3& origin, std::vector<double>* ts) const;

 private:
  struct Node {
    Vec3 bmin, bmax;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf triangle range when left < 0
  };
  struct Tri {
    Vec3 a, b, c;
    int face;
  };
  int build(int begin, int end);
  std::vector<Tri> tris_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<int> faces;  // source face per sample
};
// Area-weighted surface samples, deterministic in the seed.
SurfaceSamples sample_mesh_surface(const Mesh& mesh, int count, std::uint64_t seed);

struct ChamferOptions {
  int samples = 20000;
  std::uint64_t seed = 7;
};

struct ChamferResult {
  double mean_mm = 0.0;  // pooled bidirectional mean, millimeters
  double max_mm = 0.0;
  double normal_consistency = 0.0;  // mean cosine between matched face normals
};

// When one mesh is empty every distance falls back to the other mesh's
// bounding-box diagonal.
ChamferResult chamfer_distance(const Mesh& a, const Mesh& b, const ChamferOptions& opt);

// Chamfer between the submeshes whose faces lie entirely in the given parts.
ChamferResult chamfer_distance_masked(const Mesh& a, std::span<const PartId> labels_a,
                                      const Mesh& b, std::span<const PartId> labels_b,
                                      std::initializer_list<PartId> parts,
                                      const ChamferOptions& opt);

// Keeps the faces whose three vertices all carry one of the given parts.
Mesh submesh_by_part(const Mesh& mesh, std::span<const PartId> labels,
                     std::initializer_list<PartId> parts);

// Occupancy-parity intersection over union on a voxel grid spanning the
// padded union of both bounding boxes.
double volumetric_iou(const Mesh& a, const Mesh& b, int resolution);

// Every directed edge must appear exactly once and faces must be
// non-degenerate; `why` gets a short description of the first defect.
bool is_watertight(const Mesh& mesh, std::string* why = nullptr);

// Part of the nearest capsule, evaluated in canonical space.
std::vector<PartId> label_vertices_by_rig(std::span<const Vec3> canonical_vertices,
                                          const Rig& rig);
// Nearest-neighbor label transfer from a labeled reference vertex set.
std::vector<PartId> transfer_labels_nn(std::span<const Vec3> vertices,
                                       std::span<const Vec3> ref_vertices,
                                       std::span<const PartId> ref_labels);

struct FrameMetrics {
  double cd_mm = 0.0;
  double cd_max_mm = 0.0;
  double normal_consistency = 0.0;
  double iou = 0.0;
  double cd_hands_mm = 0.0;
  bool watertight = false;
  int pred_vertices = 0, pred_faces = 0;
};

// Full comparison of a predicted posed mesh against the labeled ground truth.
FrameMetrics evaluate_frame(const Mesh& pred, const Mesh& gt, std::span<const PartId> gt_labels,
                            const ChamferOptions& opt, int iou_resolution);

}  // namespace arti
