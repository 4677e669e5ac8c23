#pragma once

#include <array>
#include <vector>

#include "arti/geom.hpp"

namespace arti {

// Indexed triangle mesh; normals and colors are optional per-vertex channels
// (either empty or vertex-count sized).
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec3> normals;
  std::vector<Vec3> colors;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
};

// Area-weighted vertex normals from face geometry.
void compute_vertex_normals(Mesh* mesh);

}  // namespace arti
