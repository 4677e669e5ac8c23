#include "arti/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace arti {

static_assert(std::endian::native == std::endian::little, "writer assumes little endian");

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

struct Property {
  std::string name;
  int size = 0;  // bytes for a scalar
  bool is_float = false;
  bool is_list = false;
  int count_size = 0, item_size = 0;
};

int type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw PlyError("unknown property type: " + t);
}

bool type_float(const std::string& t) {
  return t == "float" || t == "float32" || t == "double" || t == "float64";
}

double read_scalar(std::istream& in, int size, bool is_float) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), size);
  if (!in) throw PlyError("unexpected end of file");
  if (is_float) {
    if (size == 4) {
      float f;
      std::memcpy(&f, buf, 4);
      return f;
    }
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  std::uint64_t u = 0;
  for (int i = 0; i < size; ++i) u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<double>(u);
}

struct Content {
  std::vector<Vec3> vertices, normals, colors;
  std::vector<int> labels;
  std::vector<std::array<int, 3>> faces;
};

void write_content(const std::string& path, const Content& c, bool with_faces, bool ascii) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PlyError("cannot open for writing: " + path);
  const bool normals = c.normals.size() == c.vertices.size() && !c.vertices.empty();
  const bool colors = c.colors.size() == c.vertices.size() && !c.vertices.empty();
  const bool labels = c.labels.size() == c.vertices.size() && !c.vertices.empty();
  out << "ply\nformat " << (ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  out << "element vertex " << c.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (labels) out << "property uchar part\n";
  if (with_faces) {
    out << "element face " << c.faces.size() << "\n";
    out << "property list uchar int vertex_indices\n";
  }
  out << "end_header\n";
  if (ascii) {
    for (std::size_t i = 0; i < c.vertices.size(); ++i) {
      out << static_cast<float>(c.vertices[i][0]) << " " << static_cast<float>(c.vertices[i][1])
          << " " << static_cast<float>(c.vertices[i][2]);
      if (normals)
        out << " " << static_cast<float>(c.normals[i][0]) << " "
            << static_cast<float>(c.normals[i][1]) << " " << static_cast<float>(c.normals[i][2]);
      if (colors)
        out << " " << static_cast<int>(to_byte(c.colors[i][0])) << " "
            << static_cast<int>(to_byte(c.colors[i][1])) << " "
            << static_cast<int>(to_byte(c.colors[i][2]));
      if (labels) out << " " << c.labels[i];
      out << "\n";
    }
    if (with_faces)
      for (const auto& f : c.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  } else {
    auto put_f = [&](double v) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    };
    auto put_b = [&](std::uint8_t b) { out.write(reinterpret_cast<const char*>(&b), 1); };
    for (std::size_t i = 0; i < c.vertices.size(); ++i) {
      for (int k = 0; k < 3; ++k) put_f(c.vertices[i][k]);
      if (normals)
        for (int k = 0; k < 3; ++k) put_f(c.normals[i][k]);
      if (colors)
        for (int k = 0; k < 3; ++k) put_b(to_byte(c.colors[i][k]));
      if (labels) put_b(static_cast<std::uint8_t>(c.labels[i]));
    }
    if (with_faces) {
      for (const auto& f : c.faces) {
        put_b(3);
        for (int k = 0; k < 3; ++k) {
          const std::int32_t v = f[k];
          out.write(reinterpret_cast<const char*>(&v), 4);
        }
      }
    }
  }
  if (!out) throw PlyError("write failed: " + path);
}

Content read_content(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlyError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") throw PlyError("not a ply file");

  bool ascii = false;
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
  };
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii")
        ascii = true;
      else if (fmt == "binary_little_endian")
        ascii = false;
      else
        throw PlyError("unsupported format: " + fmt);
    } else if (tok == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(std::move(e));
    } else if (tok == "property") {
      if (elements.empty()) throw PlyError("property before element");
      Property p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_size = type_size(ct);
        p.item_size = type_size(it);
      } else {
        ls >> p.name;
        p.size = type_size(t);
        p.is_float = type_float(t);
      }
      elements.back().props.push_back(std::move(p));
    } else if (tok == "end_header") {
      break;
    } else {
      throw PlyError("unexpected header line: " + line);
    }
  }

  Content c;
  for (const Element& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    if (is_vertex) c.vertices.reserve(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      double x = 0, y = 0, z = 0, nx = 0, ny = 0, nz = 0, r = 0, g = 0, b = 0;
      int part = -1;
      bool has_n = false, has_c = false;
      std::vector<int> face;
      std::istringstream als;
      if (ascii) {
        if (!std::getline(in, line)) throw PlyError("unexpected end of file");
        als.str(line);
      }
      for (const Property& p : e.props) {
        if (p.is_list) {
          std::size_t n;
          if (ascii) {
            als >> n;
            if (!als) throw PlyError("truncated ascii row");
          } else {
            n = static_cast<std::size_t>(read_scalar(in, p.count_size, false));
          }
          std::vector<double> items(n);
          for (std::size_t k = 0; k < n; ++k) {
            if (ascii) {
              als >> items[k];
              if (!als) throw PlyError("truncated ascii row");
            } else {
              items[k] = read_scalar(in, p.item_size, false);
            }
          }
          if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index"))
            for (double v : items) face.push_back(static_cast<int>(v));
        } else {
          double v;
          if (ascii) {
            als >> v;
            if (!als) throw PlyError("truncated ascii row");
          } else {
            v = read_scalar(in, p.size, p.is_float);
          }
          if (!is_vertex) continue;
          if (p.name == "x") x = v;
          else if (p.name == "y") y = v;
          else if (p.name == "z") z = v;
          else if (p.name == "nx") { nx = v; has_n = true; }
          else if (p.name == "ny") { ny = v; has_n = true; }
          else if (p.name == "nz") { nz = v; has_n = true; }
          else if (p.name == "red") { r = v; has_c = true; }
          else if (p.name == "green") { g = v; has_c = true; }
          else if (p.name == "blue") { b = v; has_c = true; }
          else if (p.name == "part" || p.name == "label") part = static_cast<int>(v);
        }
      }
      if (is_vertex) {
        c.vertices.emplace_back(x, y, z);
        if (has_n) c.normals.emplace_back(nx, ny, nz);
        if (has_c) c.colors.emplace_back(r / 255.0, g / 255.0, b / 255.0);
        if (part >= 0) c.labels.push_back(part);
      } else if (is_face) {
        for (std::size_t k = 2; k < face.size(); ++k)
          c.faces.push_back({face[0], face[static_cast<int>(k) - 1], face[static_cast<int>(k)]});
      }
    }
  }
  if (!c.normals.empty() && c.normals.size() != c.vertices.size())
    throw PlyError("normal count mismatch");
  if (!c.colors.empty() && c.colors.size() != c.vertices.size())
    throw PlyError("color count mismatch");
  if (!c.labels.empty() && c.labels.size() != c.vertices.size())
    throw PlyError("label count mismatch");
  const int nv = static_cast<int>(c.vertices.size());
  for (const auto& f : c.faces)
    for (int v : f)
      if (v < 0 || v >= nv) throw PlyError("face index out of range");
  return c;
}

std::vector<PartId> to_parts(const std::vector<int>& labels) {
  std::vector<PartId> out;
  out.reserve(labels.size());
  for (int v : labels) {
    if (v < 0 || v >= kPartCount) throw PlyError("part label out of range");
    out.push_back(static_cast<PartId>(v));
  }
  return out;
}

}  // namespace

void write_ply(const std::string& path, const Mesh& mesh, bool ascii) {
  Content c{mesh.vertices, mesh.normals, mesh.colors, {}, mesh.faces};
  write_content(path, c, true, ascii);
}

Mesh read_ply(const std::string& path) {
  Content c = read_content(path);
  Mesh mesh;
  mesh.vertices = std::move(c.vertices);
  mesh.normals = std::move(c.normals);
  mesh.colors = std::move(c.colors);
  mesh.faces = std::move(c.faces);
  return mesh;
}

void write_labeled_ply(const std::string& path, const Mesh& mesh,
                       const std::vector<PartId>& labels, bool ascii) {
  if (labels.size() != mesh.vertices.size()) throw PlyError("label count mismatch");
  Content c{mesh.vertices, mesh.normals, mesh.colors, {}, mesh.faces};
  c.labels.reserve(labels.size());
  for (PartId p : labels) c.labels.push_back(static_cast<int>(p));
  write_content(path, c, true, ascii);
}

void read_labeled_ply(const std::string& path, Mesh* mesh, std::vector<PartId>* labels) {
  Content c = read_content(path);
  if (c.labels.size() != c.vertices.size()) throw PlyError("file has no part labels: " + path);
  mesh->vertices = std::move(c.vertices);
  mesh->normals = std::move(c.normals);
  mesh->colors = std::move(c.colors);
  mesh->faces = std::move(c.faces);
  *labels = to_parts(c.labels);
}

void write_scan_ply(const std::string& path, const Scan& scan, bool ascii) {
  Content c;
  c.vertices = scan.points;
  c.normals = scan.normals;
  c.colors = scan.colors;
  c.labels.reserve(scan.labels.size());
  for (PartId p : scan.labels) c.labels.push_back(static_cast<int>(p));
  write_content(path, c, false, ascii);
}

Scan read_scan_ply(const std::string& path) {
  Content c = read_content(path);
  if (c.labels.size() != c.vertices.size()) throw PlyError("file has no part labels: " + path);
  Scan scan;
  scan.points = std::move(c.vertices);
  scan.normals = std::move(c.normals);
  scan.colors = std::move(c.colors);
  scan.labels = to_parts(c.labels);
  return scan;
}

}  // namespace arti
