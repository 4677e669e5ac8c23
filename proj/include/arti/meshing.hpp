#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "arti/deformer.hpp"
#include "arti/mesh.hpp"
#include "arti/nets.hpp"

namespace arti {

// Regular sampling lattice; nx/ny/nz count lattice vertices per axis.
struct GridSpec {
  Vec3 origin = Vec3::Zero();
  double spacing = 0.01;
  int nx = 0, ny = 0, nz = 0;

  Vec3 point(int i, int j, int k) const {
    return origin + spacing * Vec3(static_cast<double>(i), static_cast<double>(j),
                                   static_cast<double>(k));
  }
  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
};

// Lattice covering [bmin, bmax] padded on every side; resolution is the cell
// count along the longest extent.
GridSpec grid_for_bounds(const Vec3& bmin, const Vec3& bmax, int resolution, double pad);

using FieldFn = std::function<void(std::span<const Vec3>, VecX*)>;

// Marching cubes over the lattice, crossing where the field passes level.
// Shared edge vertices are deduplicated; triangles wind so normals point
// toward lower field values (outward when inside means field > level).
// Masked-off lattice vertices (mask 0) read as level - 1.
Mesh marching_cubes(const FieldFn& field, const GridSpec& grid, double level,
                    const std::vector<std::uint8_t>* mask = nullptr);

// Replaces mesh vertices with their skinned positions; canonical positions
// are read from `canonical`.
void deform_mesh(const WeightField& wf, const BoneTransforms& bt,
                 std::span<const Vec3> canonical, Mesh* mesh);

// Smooth canonical surface of the capsule rig (signed distance flipped so the
// interior is positive).
Mesh mesh_rig_canonical(const Rig& rig, int resolution);

struct AvatarMeshes {
  Mesh canonical;  // learned occupancy at the given level
  Mesh posed;      // skinned copy with normals and colors
};

// Full extraction pipeline for one pose: canonical marching cubes, skinning,
// geometric normals, then per-vertex color.
AvatarMeshes mesh_avatar(const AvatarNets& nets, const Rig& rig, const Pose& pose, int resolution,
                         double level = 0.5, double pad = 0.1);

}  // namespace arti
