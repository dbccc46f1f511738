#include "pumfa/cloud_io.hpp"

#include "pumfa/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace pumfa {

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::string format_point(const Vec3& p) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << p.x() << ' ' << p.y() << ' ' << p.z();
  return os.str();
}

struct PlyProperty {
  std::string name;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

// Parses an ASCII PLY file, returning vertex positions and (optionally) faces.
void parse_ply(const std::filesystem::path& path, std::vector<Vec3>& vertices,
               std::vector<std::array<std::size_t, 3>>* faces) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw std::runtime_error(path.string() + ": missing ply magic");
  std::vector<PlyElement> elements;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      ascii = kind == "ascii";
    } else if (word == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw std::runtime_error(path.string() + ": property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type;
        p.is_list = true;
      }
      ls >> p.name;
      elements.back().properties.push_back(p);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw std::runtime_error(path.string() + ": only ASCII PLY is supported");

  for (const auto& e : elements) {
    int xi = -1, yi = -1, zi = -1, list_i = -1;
    for (std::size_t k = 0; k < e.properties.size(); ++k) {
      const auto& n = e.properties[k].name;
      if (n == "x") xi = static_cast<int>(k);
      if (n == "y") yi = static_cast<int>(k);
      if (n == "z") zi = static_cast<int>(k);
      if (e.properties[k].is_list && (n == "vertex_indices" || n == "vertex_index")) list_i = static_cast<int>(k);
    }
    for (std::size_t row = 0; row < e.count; ++row) {
      if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": truncated element " + e.name);
      std::istringstream ls(line);
      Vec3 p = Vec3::Zero();
      std::vector<std::size_t> polygon;
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        if (e.properties[k].is_list) {
          std::size_t n = 0;
          ls >> n;
          std::vector<std::size_t> items(n);
          for (auto& v : items) ls >> v;
          if (static_cast<int>(k) == list_i) polygon = std::move(items);
        } else {
          double v = 0.0;
          ls >> v;
          if (static_cast<int>(k) == xi) p.x() = v;
          if (static_cast<int>(k) == yi) p.y() = v;
          if (static_cast<int>(k) == zi) p.z() = v;
        }
      }
      if (!ls) throw std::runtime_error(path.string() + ": malformed row in element " + e.name);
      if (e.name == "vertex") {
        if (xi < 0 || yi < 0 || zi < 0) throw std::runtime_error(path.string() + ": vertex lacks x/y/z");
        vertices.push_back(p);
      } else if (e.name == "face" && faces) {
        for (std::size_t k = 1; k + 1 < polygon.size(); ++k) faces->push_back({polygon[0], polygon[k], polygon[k + 1]});
      }
    }
  }
}

}  // namespace

PointCloud read_xyz(const std::filesystem::path& path) {
  auto in = open_in(path);
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed point");
    }
    cloud.points.push_back(p);
  }
  validate(cloud);
  return cloud;
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::string out;
  for (const auto& p : cloud.points) {
    out += format_point(p);
    out += '\n';
  }
  write_file_atomic(path, out);
}

PointCloud read_ply_cloud(const std::filesystem::path& path) {
  PointCloud cloud;
  parse_ply(path, cloud.points, nullptr);
  validate(cloud);
  return cloud;
}

void write_ply_cloud(const std::filesystem::path& path, const PointCloud& cloud, const std::vector<VertexFlag>& flags) {
  for (const auto& f : flags) {
    if (f.values.size() != cloud.size()) throw std::invalid_argument("write_ply_cloud: flag '" + f.name + "' has wrong length");
  }
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  for (const auto& f : flags) os << "property uchar " << f.name << "\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    os << format_point(cloud[i]);
    for (const auto& f : flags) os << ' ' << static_cast<int>(f.values[i]);
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

TriangleMesh read_off(const std::filesystem::path& path) {
  auto in = open_in(path);
  // Tokenise with comments stripped; "OFF" may share a line with the counts.
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string t;
    while (ls >> t) tokens.push_back(t);
  }
  std::size_t pos = 0;
  auto next = [&]() -> const std::string& {
    if (pos >= tokens.size()) throw std::runtime_error(path.string() + ": truncated OFF file");
    return tokens[pos++];
  };
  if (next() != "OFF") throw std::runtime_error(path.string() + ": missing OFF header");
  const std::size_t nv = std::stoul(next());
  const std::size_t nf = std::stoul(next());
  next();  // edge count
  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const double x = std::stod(next());
    const double y = std::stod(next());
    const double z = std::stod(next());
    mesh.vertices.emplace_back(x, y, z);
  }
  for (std::size_t f = 0; f < nf; ++f) {
    const std::size_t n = std::stoul(next());
    std::vector<std::size_t> poly(n);
    for (auto& v : poly) v = std::stoul(next());
    for (std::size_t k = 1; k + 1 < n; ++k) mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
  }
  sanitize(mesh);
  return mesh;
}

TriangleMesh read_ply_mesh(const std::filesystem::path& path) {
  TriangleMesh mesh;
  parse_ply(path, mesh.vertices, &mesh.faces);
  sanitize(mesh);
  return mesh;
}

TriangleMesh read_mesh(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  TriangleMesh mesh;
  if (ext == ".off") mesh = read_off(path);
  else if (ext == ".ply") mesh = read_ply_mesh(path);
  else throw std::invalid_argument("unsupported mesh format: " + path.string());
  if (mesh.faces.empty()) throw std::runtime_error(path.string() + ": mesh has no valid faces");
  return mesh;
}

PointCloud read_cloud(const std::filesystem::path& path) {
  return lower_ext(path) == ".ply" ? read_ply_cloud(path) : read_xyz(path);
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  if (lower_ext(path) == ".ply") write_ply_cloud(path, cloud);
  else write_xyz(path, cloud);
}

}  // namespace pumfa
