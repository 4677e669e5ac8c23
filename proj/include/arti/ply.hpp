#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "arti/mesh.hpp"
#include "arti/scan.hpp"

namespace arti {

struct PlyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Positions as float32, normals when present, colors as 8-bit RGB, triangle
// faces. Binary little endian by default.
void write_ply(const std::string& path, const Mesh& mesh, bool ascii = false);

// Reads ascii or binary little endian files, skips unknown properties and
// fan-triangulates larger polygons.
Mesh read_ply(const std::string& path);

// Mesh plus a per-vertex part label, stored as an 8-bit "part" property.
void write_labeled_ply(const std::string& path, const Mesh& mesh,
                       const std::vector<PartId>& labels, bool ascii = false);
void read_labeled_ply(const std::string& path, Mesh* mesh, std::vector<PartId>* labels);

// Point-cloud scan: positions, normals, 8-bit colors, 8-bit part labels, no
// faces. The pose travels in a sidecar, not here.
void write_scan_ply(const std::string& path, const Scan& scan, bool ascii = false);
Scan read_scan_ply(const std::string& path);

}  // namespace arti
