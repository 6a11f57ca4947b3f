#include "mfgrasp/mesh_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mfgrasp/error.hpp"

namespace mfgrasp {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

namespace {

TriMesh finish(std::vector<Vec3> verts, std::vector<Triangle> tris) {
  TriMesh mesh(std::move(verts), std::move(tris));
  if (mesh.watertight()) mesh.orient_outward();
  return mesh;
}

int obj_index(const std::string& token, int num_vertices, int line) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw Error(ErrorKind::Format, "OBJ line " + std::to_string(line) + ": bad face index '" + token + "'");
  }
  const int resolved = idx > 0 ? idx - 1 : num_vertices + idx;
  if (idx == 0 || resolved < 0 || resolved >= num_vertices)
    throw Error(ErrorKind::Format, "OBJ line " + std::to_string(line) + ": face index out of range");
  return resolved;
}

}  // namespace

TriMesh parse_obj(const std::string& text, double scale) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::istringstream ls(raw);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw Error(ErrorKind::Format, "OBJ line " + std::to_string(line) + ": bad vertex");
      verts.emplace_back(x * scale, y * scale, z * scale);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(obj_index(tok, static_cast<int>(verts.size()), line));
      if (idx.size() < 3) throw Error(ErrorKind::Format, "OBJ line " + std::to_string(line) + ": face needs 3 indices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) tris.push_back({idx[0], idx[k], idx[k + 1]});
    }
    // vn, vt, o, g, s, usemtl, mtllib are ignored.
  }
  if (tris.empty()) throw Error(ErrorKind::Format, "OBJ: no faces");
  return finish(std::move(verts), std::move(tris));
}

namespace {

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType ply_type(const std::string& name, std::size_t line) {
  if (name == "char" || name == "int8") return PlyType::I8;
  if (name == "uchar" || name == "uint8") return PlyType::U8;
  if (name == "short" || name == "int16") return PlyType::I16;
  if (name == "ushort" || name == "uint16") return PlyType::U16;
  if (name == "int" || name == "int32") return PlyType::I32;
  if (name == "uint" || name == "uint32") return PlyType::U32;
  if (name == "float" || name == "float32") return PlyType::F32;
  if (name == "double" || name == "float64") return PlyType::F64;
  throw Error(ErrorKind::Format, "PLY header line " + std::to_string(line) + ": unknown type " + name);
}

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::I8: case PlyType::U8: return 1;
    case PlyType::I16: case PlyType::U16: return 2;
    case PlyType::I32: case PlyType::U32: case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool is_list = false;
  PlyType count_type = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

class PlyReader {
 public:
  PlyReader(const std::string& bytes, std::size_t pos, bool binary) : bytes_(bytes), pos_(pos), binary_(binary) {
    if (!binary_) text_.str(bytes.substr(pos));
  }

  double read(PlyType t) {
    if (!binary_) {
      double v;
      if (!(text_ >> v)) throw Error(ErrorKind::Format, "PLY: truncated ascii body");
      return v;
    }
    const std::size_t n = type_size(t);
    if (pos_ + n > bytes_.size())
      throw Error(ErrorKind::Format, "PLY: truncated binary body at byte offset " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    switch (t) {
      case PlyType::I8: { int8_t v; std::memcpy(&v, p, 1); return v; }
      case PlyType::U8: { uint8_t v; std::memcpy(&v, p, 1); return v; }
      case PlyType::I16: { int16_t v; std::memcpy(&v, p, 2); return v; }
      case PlyType::U16: { uint16_t v; std::memcpy(&v, p, 2); return v; }
      case PlyType::I32: { int32_t v; std::memcpy(&v, p, 4); return v; }
      case PlyType::U32: { uint32_t v; std::memcpy(&v, p, 4); return v; }
      case PlyType::F32: { float v; std::memcpy(&v, p, 4); return v; }
      case PlyType::F64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0;
  }
  std::size_t offset() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_;
  bool binary_;
  std::istringstream text_;
};

struct PlyFile {
  std::vector<PlyElement> elements;
  bool binary = true;
  std::size_t body = 0;
};

PlyFile parse_ply_header(const std::string& bytes) {
  PlyFile file;
  std::size_t pos = 0;
  std::size_t line = 0;
  bool saw_format = false;
  auto next_line = [&]() {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw Error(ErrorKind::Format, "PLY: header not terminated");
    std::string l = bytes.substr(pos, end - pos);
    if (!l.empty() && l.back() == '\r') l.pop_back();
    pos = end + 1;
    ++line;
    return l;
  };
  if (next_line() != "ply") throw Error(ErrorKind::Format, "PLY: missing magic on line 1");
  while (true) {
    const std::string l = next_line();
    std::istringstream ls(l);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") file.binary = false;
      else if (fmt != "binary_little_endian")
        throw Error(ErrorKind::Format, "PLY header line " + std::to_string(line) + ": unsupported format " + fmt);
      saw_format = true;
    } else if (key == "element") {
      PlyElement el;
      ls >> el.name >> el.count;
      file.elements.push_back(el);
    } else if (key == "property") {
      if (file.elements.empty())
        throw Error(ErrorKind::Format, "PLY header line " + std::to_string(line) + ": property before element");
      PlyProperty prop;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it >> prop.name;
        prop.is_list = true;
        prop.count_type = ply_type(ct, line);
        prop.type = ply_type(it, line);
      } else {
        prop.type = ply_type(type, line);
        ls >> prop.name;
      }
      file.elements.back().props.push_back(prop);
    }
  }
  if (!saw_format) throw Error(ErrorKind::Format, "PLY: missing format line");
  file.body = pos;
  return file;
}

}  // namespace

TriMesh parse_ply(const std::string& bytes, double scale) {
  const PlyFile file = parse_ply_header(bytes);
  PlyReader reader(bytes, file.body, file.binary);
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  for (const auto& el : file.elements) {
    for (std::size_t i = 0; i < el.count; ++i) {
      Vec3 p = Vec3::Zero();
      std::vector<int> face;
      for (const auto& prop : el.props) {
        if (prop.is_list) {
          const auto n = static_cast<std::size_t>(reader.read(prop.count_type));
          for (std::size_t k = 0; k < n; ++k) face.push_back(static_cast<int>(reader.read(prop.type)));
          continue;
        }
        const double v = reader.read(prop.type);
        if (el.name == "vertex") {
          if (prop.name == "x") p.x() = v;
          else if (prop.name == "y") p.y() = v;
          else if (prop.name == "z") p.z() = v;
        }
      }
      if (el.name == "vertex") {
        verts.push_back(p * scale);
      } else if (el.name == "face") {
        if (face.size() < 3)
          throw Error(ErrorKind::Format, "PLY: face with fewer than 3 indices near byte offset " +
                                             std::to_string(reader.offset()));
        for (int idx : face)
          if (idx < 0 || idx >= static_cast<int>(verts.size()))
            throw Error(ErrorKind::Format, "PLY: face index out of range near byte offset " +
                                               std::to_string(reader.offset()));
        for (std::size_t k = 1; k + 1 < face.size(); ++k) tris.push_back({face[0], face[k], face[k + 1]});
      }
    }
  }
  if (tris.empty()) throw Error(ErrorKind::Format, "PLY: no faces");
  return finish(std::move(verts), std::move(tris));
}

TriMesh load_mesh(const std::filesystem::path& path, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorKind::Precondition, "load_mesh: scale must be positive");
  const std::string ext = path.extension().string();
  const std::string bytes = read_file(path);
  if (ext == ".obj" || ext == ".OBJ") return parse_obj(bytes, scale);
  if (ext == ".ply" || ext == ".PLY") return parse_ply(bytes, scale);
  throw Error(ErrorKind::Format, "unsupported mesh extension '" + ext + "'");
}

void write_mesh_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& v : mesh.vertices()) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles()) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  write_file(path, out.str());
}

void write_points_ply(const std::filesystem::path& path, const std::vector<OrientedPoint>& points) {
  std::string data = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(points.size()) +
                     "\nproperty float x\nproperty float y\nproperty float z\n"
                     "property float nx\nproperty float ny\nproperty float nz\nend_header\n";
  const std::size_t header = data.size();
  data.resize(header + points.size() * 6 * sizeof(float));
  char* out = data.data() + header;
  for (const auto& p : points) {
    const float vals[6] = {static_cast<float>(p.position.x()), static_cast<float>(p.position.y()),
                           static_cast<float>(p.position.z()), static_cast<float>(p.normal.x()),
                           static_cast<float>(p.normal.y()),   static_cast<float>(p.normal.z())};
    std::memcpy(out, vals, sizeof(vals));
    out += sizeof(vals);
  }
  write_file(path, data);
}

std::vector<OrientedPoint> read_points_ply(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const PlyFile file = parse_ply_header(bytes);
  PlyReader reader(bytes, file.body, file.binary);
  std::vector<OrientedPoint> points;
  for (const auto& el : file.elements) {
    for (std::size_t i = 0; i < el.count; ++i) {
      OrientedPoint p{Vec3::Zero(), Vec3::Zero()};
      for (const auto& prop : el.props) {
        if (prop.is_list) {
          const auto n = static_cast<std::size_t>(reader.read(prop.count_type));
          for (std::size_t k = 0; k < n; ++k) reader.read(prop.type);
          continue;
        }
        const double v = reader.read(prop.type);
        if (prop.name == "x") p.position.x() = v;
        else if (prop.name == "y") p.position.y() = v;
        else if (prop.name == "z") p.position.z() = v;
        else if (prop.name == "nx") p.normal.x() = v;
        else if (prop.name == "ny") p.normal.y() = v;
        else if (prop.name == "nz") p.normal.z() = v;
      }
      if (el.name == "vertex") points.push_back(p);
    }
  }
  return points;
}

}  // namespace mfgrasp
