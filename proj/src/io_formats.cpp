#include "posekit/io_formats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace posekit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& source, std::size_t line,
                             const std::string& what) {
  std::ostringstream os;
  os << source << ":" << line << ": " << what;
  throw Error(ErrorKind::ParseError, os.str());
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

double parse_coord(std::string_view tok, const std::string& source,
                   std::size_t line) {
  double v = 0.0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    parse_fail(source, line, "invalid number '" + std::string(tok) + "'");
  }
  if (!std::isfinite(v)) {
    parse_fail(source, line, "non-finite coordinate '" + std::string(tok) + "'");
  }
  return v;
}

int parse_label(std::string_view tok, const std::string& source,
                std::size_t line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    parse_fail(source, line, "invalid label '" + std::string(tok) + "'");
  }
  return v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

bool is_float_type(std::string_view t) {
  return t == "float" || t == "double" || t == "float32" || t == "float64";
}

bool is_int_type(std::string_view t) {
  return t == "char" || t == "uchar" || t == "short" || t == "ushort" ||
         t == "int" || t == "uint" || t == "int8" || t == "uint8" ||
         t == "int16" || t == "uint16" || t == "int32" || t == "uint32";
}

std::string lower_ext(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// -- JSON helpers -----------------------------------------------------------

struct JsonContext {
  const std::string& source;
  std::string where;

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::ParseError, source + ": " + where + ": " + what);
  }

  const json& field(const json& obj, const char* key) const {
    auto it = obj.find(key);
    if (it == obj.end()) fail(std::string("missing key '") + key + "'");
    return *it;
  }

  double number(const json& v, const char* what) const {
    if (!v.is_number()) fail(std::string(what) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(std::string(what) + " must be finite");
    return d;
  }

  template <std::size_t N>
  std::array<double, N> numbers(const json& v, const char* what) const {
    if (!v.is_array() || v.size() != N) {
      fail(std::string(what) + " must be an array of " + std::to_string(N) +
           " numbers");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = number(v[i], what);
    return out;
  }

  Vec3 vec3(const json& v, const char* what) const {
    const auto a = numbers<3>(v, what);
    return Vec3(a[0], a[1], a[2]);
  }

  std::string string(const json& v, const char* what) const {
    if (!v.is_string()) fail(std::string(what) + " must be a string");
    return v.get<std::string>();
  }
};

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json deformation_to_json(const DeformationSpec& spec) {
  json j;
  j["scale"] = vec3_json(spec.scale);
  j["taper_axis"] = spec.taper_axis ? json(std::string(to_string(*spec.taper_axis)))
                                    : json(nullptr);
  j["taper_factor"] = spec.taper_factor;
  return j;
}

DeformationSpec deformation_from_json(const json& j, const JsonContext& ctx) {
  if (!j.is_object()) ctx.fail("deformation must be an object");
  DeformationSpec spec;
  spec.scale = ctx.vec3(ctx.field(j, "scale"), "deformation.scale");
  if (auto it = j.find("taper_axis"); it != j.end() && !it->is_null()) {
    try {
      spec.taper_axis = axis_from_string(ctx.string(*it, "deformation.taper_axis"));
    } catch (const Error& e) {
      ctx.fail(e.what());
    }
  }
  if (auto it = j.find("taper_factor"); it != j.end()) {
    spec.taper_factor = ctx.number(*it, "deformation.taper_factor");
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    ctx.fail(e.what());
  }
  return spec;
}

json parse_json_text(std::string_view text, const std::string& source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)
       << ": malformed JSON";
    throw Error(ErrorKind::ParseError, os.str());
  }
}

Rotation load_rotation(const std::array<double, 9>& raw, const JsonContext& ctx) {
  Mat3 m;
  m << raw[0], raw[1], raw[2], raw[3], raw[4], raw[5], raw[6], raw[7], raw[8];
  if (m.determinant() < 0.0) {
    throw Error(ErrorKind::InvalidRotation,
                ctx.source + ": " + ctx.where + ": rotation has negative determinant");
  }
  if (orthonormality_error(m) > kRotationRepairTolerance ||
      std::abs(m.determinant() - 1.0) > kRotationRepairTolerance) {
    throw Error(ErrorKind::InvalidRotation,
                ctx.source + ": " + ctx.where + ": rotation is not orthonormal");
  }
  // Already orthonormal up to roundoff: keep the bits so files roundtrip.
  if (orthonormality_error(m) <= 1e-12) return Rotation::from_matrix(m);
  return Rotation::nearest(m);
}

// -- synthetic surfaces -----------------------------------------------------

// Box surface over z in [zlo, hz]; includes the bottom face only when
// zlo == -hz.
Vec3 sample_box_surface(const Vec3& h, double zlo, Rng& rng) {
  const double zspan = h.z() - zlo;
  const bool with_bottom = zlo <= -h.z();
  const std::array<double, 6> area = {
      2 * h.y() * zspan, 2 * h.y() * zspan, 2 * h.x() * zspan,
      2 * h.x() * zspan, 4 * h.x() * h.y(), with_bottom ? 4 * h.x() * h.y() : 0.0};
  double total = 0.0;
  for (double a : area) total += a;
  double pick = rng.uniform() * total;
  int face = 0;
  for (; face < 5; ++face) {
    if (pick < area[face]) break;
    pick -= area[face];
  }
  const double u = rng.uniform(-1.0, 1.0);
  const double v = rng.uniform(-1.0, 1.0);
  const double z = rng.uniform(zlo, h.z());
  switch (face) {
    case 0: return {h.x(), u * h.y(), z};
    case 1: return {-h.x(), u * h.y(), z};
    case 2: return {u * h.x(), h.y(), z};
    case 3: return {u * h.x(), -h.y(), z};
    case 4: return {u * h.x(), v * h.y(), h.z()};
    default: return {u * h.x(), v * h.y(), -h.z()};
  }
}

Vec3 sample_cylinder_surface(const Vec3& h, double zlo, Rng& rng) {
  const double rx = h.x();
  const double ry = h.y();
  const double perimeter =
      std::numbers::pi * (3 * (rx + ry) - std::sqrt((3 * rx + ry) * (rx + 3 * ry)));
  const double side = perimeter * (h.z() - zlo);
  const double cap = std::numbers::pi * rx * ry;
  const bool with_bottom = zlo <= -h.z();
  const double total = side + cap + (with_bottom ? cap : 0.0);
  const double pick = rng.uniform() * total;
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (pick < side) {
    return {rx * std::cos(a), ry * std::sin(a), rng.uniform(zlo, h.z())};
  }
  const double r = std::sqrt(rng.uniform());
  const double z = pick < side + cap ? h.z() : -h.z();
  return {rx * r * std::cos(a), ry * r * std::sin(a), z};
}

std::vector<Vec3> sample_surface(ShapeBase base, const Vec3& extents,
                                 std::size_t count, bool visible_only, Rng& rng) {
  if (!is_finite(extents) || (extents.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidParameter, "extents must be positive");
  }
  Vec3 h = extents / 2.0;
  if (base == ShapeBase::TaperedBox) h.x() /= kTaperedBoxFactor;
  const double zlo = visible_only ? 0.0 : -h.z();
  std::vector<Vec3> pts;
  pts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    pts.push_back(base == ShapeBase::Cylinder ? sample_cylinder_surface(h, zlo, rng)
                                              : sample_box_surface(h, zlo, rng));
  }
  if (base == ShapeBase::TaperedBox) {
    // x widens linearly with height z; widest at the top face.
    for (auto& p : pts) {
      p.x() *= 1.0 + (kTaperedBoxFactor - 1.0) * (p.z() + h.z()) / (2.0 * h.z());
    }
  }
  return pts;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

PointCloud parse_ply(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  std::size_t ln = 0;
  auto next = [&]() -> std::string_view {
    if (ln >= lines.size()) parse_fail(source, ln, "unexpected end of file");
    return lines[ln++];
  };
  if (split_ws(next()) != std::vector<std::string_view>{"ply"}) {
    parse_fail(source, 1, "missing 'ply' magic");
  }
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  bool seen_format = false;
  std::vector<std::string> props;
  int ix = -1, iy = -1, iz = -1, il = -1;
  for (;;) {
    const auto tok = split_ws(next());
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() != 3 || tok[1] != "ascii" || tok[2] != "1.0") {
        parse_fail(source, ln, "only 'format ascii 1.0' is supported");
      }
      seen_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) parse_fail(source, ln, "malformed element line");
      in_vertex = tok[1] == "vertex";
      if (in_vertex) {
        if (seen_vertex) parse_fail(source, ln, "duplicate vertex element");
        if (!props.empty() || ix >= 0) parse_fail(source, ln, "unexpected element order");
        seen_vertex = true;
        const auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(),
                                             vertex_count);
        if (ec != std::errc() || p != tok[2].data() + tok[2].size()) {
          parse_fail(source, ln, "invalid vertex count");
        }
      } else if (!seen_vertex) {
        parse_fail(source, ln, "vertex element must come first");
      }
    } else if (tok[0] == "property") {
      if (!in_vertex) continue;
      if (tok.size() != 3) parse_fail(source, ln, "malformed property line");
      const std::string name(tok[2]);
      const int idx = static_cast<int>(props.size());
      if (name == "x" || name == "y" || name == "z") {
        if (!is_float_type(tok[1]) && !is_int_type(tok[1])) {
          parse_fail(source, ln, "unsupported coordinate type");
        }
        (name == "x" ? ix : name == "y" ? iy : iz) = idx;
      } else if (name == "label") {
        if (!is_int_type(tok[1])) parse_fail(source, ln, "label must be an integer type");
        il = idx;
      } else if (!is_float_type(tok[1]) && !is_int_type(tok[1])) {
        parse_fail(source, ln, "unsupported property type");
      }
      props.push_back(name);
    } else {
      parse_fail(source, ln, "unknown header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!seen_format) parse_fail(source, ln, "missing format line");
  if (!seen_vertex) parse_fail(source, ln, "missing vertex element");
  if (ix < 0 || iy < 0 || iz < 0) parse_fail(source, ln, "missing x/y/z properties");

  std::vector<Vec3> pts;
  std::vector<int> labels;
  pts.reserve(vertex_count);
  for (std::size_t v = 0; v < vertex_count; ++v) {
    const auto tok = split_ws(next());
    if (tok.size() != props.size()) {
      parse_fail(source, ln, "expected " + std::to_string(props.size()) + " values");
    }
    pts.emplace_back(parse_coord(tok[ix], source, ln), parse_coord(tok[iy], source, ln),
                     parse_coord(tok[iz], source, ln));
    if (il >= 0) labels.push_back(parse_label(tok[il], source, ln));
  }
  return PointCloud(std::move(pts), std::move(labels));
}

PointCloud parse_xyz(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  std::vector<Vec3> pts;
  std::vector<int> labels;
  std::size_t columns = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    const auto tok = split_ws(lines[i]);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok.size() != 3 && tok.size() != 4) {
      parse_fail(source, ln, "expected 3 or 4 columns");
    }
    if (columns == 0) columns = tok.size();
    if (tok.size() != columns) parse_fail(source, ln, "inconsistent column count");
    pts.emplace_back(parse_coord(tok[0], source, ln), parse_coord(tok[1], source, ln),
                     parse_coord(tok[2], source, ln));
    if (columns == 4) labels.push_back(parse_label(tok[3], source, ln));
  }
  return PointCloud(std::move(pts), std::move(labels));
}

std::string format_ply(const PointCloud& cloud) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_labels()) os << "property uchar label\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    os << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
       << format_double(p.z());
    if (cloud.has_labels()) os << ' ' << cloud.labels()[i];
    os << '\n';
  }
  return os.str();
}

std::string format_xyz(const PointCloud& cloud) {
  std::ostringstream os;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    os << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
       << format_double(p.z());
    if (cloud.has_labels()) os << ' ' << cloud.labels()[i];
    os << '\n';
  }
  return os.str();
}

PointCloud read_pointcloud(const fs::path& path) {
  const std::string text = read_text_file(path);
  const std::string ext = lower_ext(path);
  if (ext == ".ply") return parse_ply(text, path.string());
  if (ext == ".xyz" || ext == ".txt") return parse_xyz(text, path.string());
  throw Error(ErrorKind::InvalidParameter,
              "unknown point cloud extension for " + path.string());
}

void write_pointcloud(const PointCloud& cloud, const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".ply") {
    write_text_file(path, format_ply(cloud));
  } else if (ext == ".xyz" || ext == ".txt") {
    write_text_file(path, format_xyz(cloud));
  } else {
    throw Error(ErrorKind::InvalidParameter,
                "unknown point cloud extension for " + path.string());
  }
}

std::vector<PoseEntry> parse_poses(std::string_view text, const std::string& source) {
  const json root = parse_json_text(text, source);
  if (!root.is_array()) {
    throw Error(ErrorKind::ParseError, source + ": top level must be an array");
  }
  static const std::set<std::string> kKeys = {"id", "category", "rotation", "translation",
                                              "size", "symmetry", "deformation"};
  std::vector<PoseEntry> out;
  std::unordered_set<std::string> ids;
  for (std::size_t r = 0; r < root.size(); ++r) {
    const json& obj = root[r];
    JsonContext ctx{source, "record " + std::to_string(r)};
    if (!obj.is_object()) ctx.fail("record must be an object");
    for (const auto& item : obj.items()) {
      if (!kKeys.count(item.key())) ctx.fail("unknown key '" + item.key() + "'");
    }
    PoseEntry e;
    e.id = ctx.string(ctx.field(obj, "id"), "id");
    ctx.where += " (id '" + e.id + "')";
    e.pose.category = ctx.string(ctx.field(obj, "category"), "category");
    e.pose.rotation = load_rotation(ctx.numbers<9>(ctx.field(obj, "rotation"), "rotation"), ctx);
    e.pose.translation = ctx.vec3(ctx.field(obj, "translation"), "translation");
    e.pose.size = ctx.vec3(ctx.field(obj, "size"), "size");
    const json& sym = ctx.field(obj, "symmetry");
    if (!sym.is_object()) ctx.fail("symmetry must be an object");
    try {
      e.pose.symmetry.kind =
          symmetry_kind_from_string(ctx.string(ctx.field(sym, "kind"), "symmetry.kind"));
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::ParseError) throw;
      ctx.fail(err.what());
    }
    if (auto it = sym.find("n"); it != sym.end()) {
      if (!it->is_number_integer()) ctx.fail("symmetry.n must be an integer");
      e.pose.symmetry.n = it->get<int>();
    }
    if (auto it = sym.find("axis"); it != sym.end()) {
      e.pose.symmetry.axis = ctx.vec3(*it, "symmetry.axis");
    }
    if (auto it = obj.find("deformation"); it != obj.end() && !it->is_null()) {
      e.deformation = deformation_from_json(*it, ctx);
    }
    try {
      e.pose.validate();
    } catch (const Error& err) {
      ctx.fail(err.what());
    }
    if (!ids.insert(e.id).second) {
      throw Error(ErrorKind::DuplicateId, source + ": duplicate id '" + e.id + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string format_poses(const std::vector<PoseEntry>& entries) {
  json root = json::array();
  for (const auto& e : entries) {
    json j;
    j["id"] = e.id;
    j["category"] = e.pose.category;
    const auto rm = e.pose.rotation.row_major();
    j["rotation"] = json(std::vector<double>(rm.begin(), rm.end()));
    j["translation"] = vec3_json(e.pose.translation);
    j["size"] = vec3_json(e.pose.size);
    j["symmetry"] = {{"kind", std::string(to_string(e.pose.symmetry.kind))},
                     {"n", e.pose.symmetry.n},
                     {"axis", vec3_json(e.pose.symmetry.axis)}};
    if (e.deformation) j["deformation"] = deformation_to_json(*e.deformation);
    root.push_back(std::move(j));
  }
  return root.dump(2) + "\n";
}

std::vector<PoseEntry> read_poses(const fs::path& path) {
  return parse_poses(read_text_file(path), path.string());
}

void write_poses(const std::vector<PoseEntry>& entries, const fs::path& path) {
  write_text_file(path, format_poses(entries));
}

DeformationSpec parse_deformation_json(std::string_view text, const std::string& source) {
  const json root = parse_json_text(text, source);
  JsonContext ctx{source, "deformation"};
  // Accept either a bare spec or an object holding it under "deformation".
  if (root.is_object() && root.contains("deformation")) {
    return deformation_from_json(root["deformation"], ctx);
  }
  return deformation_from_json(root, ctx);
}

// ---------------------------------------------------------------------------

std::string_view to_string(ShapeBase base) {
  switch (base) {
    case ShapeBase::Box: return "box";
    case ShapeBase::Cylinder: return "cylinder";
    case ShapeBase::TaperedBox: return "tapered_box";
  }
  return "box";
}

ShapeBase shape_base_from_string(std::string_view s) {
  if (s == "box") return ShapeBase::Box;
  if (s == "cylinder") return ShapeBase::Cylinder;
  if (s == "tapered_box") return ShapeBase::TaperedBox;
  throw Error(ErrorKind::InvalidParameter, "unknown shape base '" + std::string(s) + "'");
}

SymmetrySpec default_symmetry(ShapeBase base) {
  switch (base) {
    case ShapeBase::Box: return SymmetrySpec::n_fold(2);
    case ShapeBase::Cylinder: return SymmetrySpec::circular();
    case ShapeBase::TaperedBox: return SymmetrySpec::n_fold(2);
  }
  return SymmetrySpec::none();
}

Vec3 default_extents(ShapeBase base) {
  switch (base) {
    case ShapeBase::Box: return {0.16, 0.10, 0.12};
    case ShapeBase::Cylinder: return {0.08, 0.08, 0.20};
    case ShapeBase::TaperedBox: return {0.10, 0.14, 0.12};
  }
  return Vec3::Ones();
}

void SyntheticShapeSpec::validate() const {
  if (!is_finite(extents) || (extents.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidParameter, "extents must be positive");
  }
  if (points_per_sample < 64) {
    throw Error(ErrorKind::InvalidParameter, "points_per_sample must be >= 64");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorKind::InvalidParameter, "noise_sigma must be >= 0");
  }
}

std::vector<Vec3> sample_visible_surface(ShapeBase base, const Vec3& extents,
                                         std::size_t count, Rng& rng) {
  return sample_surface(base, extents, count, true, rng);
}

std::vector<Vec3> sample_complete_surface(ShapeBase base, const Vec3& extents,
                                          std::size_t count, Rng& rng) {
  return sample_surface(base, extents, count, false, rng);
}

SyntheticSample generate_synthetic_sample(const SyntheticShapeSpec& spec,
                                          const PoseRecord& pose) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticSample out;
  out.pose = pose;
  out.pose.size = spec.extents;
  out.pose.validate();

  auto canonical = sample_visible_surface(spec.base, spec.extents,
                                          spec.points_per_sample, rng);
  if (spec.noise_sigma > 0.0) {
    for (auto& p : canonical) {
      for (int a = 0; a < 3; ++a) p[a] += rng.normal(0.0, spec.noise_sigma);
    }
  }
  std::vector<Vec3> pts;
  pts.reserve(spec.points_per_sample + spec.background_points);
  for (const auto& p : canonical) pts.push_back(pose.rotation * p + pose.translation);
  std::vector<int> labels(pts.size(), 1);
  const double radius = 2.0 * spec.extents.maxCoeff();
  for (std::size_t i = 0; i < spec.background_points; ++i) {
    pts.push_back(pose.translation + rng.in_ball(radius));
    labels.push_back(0);
  }
  out.cloud = PointCloud(std::move(pts), std::move(labels));
  return out;
}

Rotation PoseDistribution::sample_rotation(Rng& rng) const {
  const double yaw = rng.uniform(0.0, 360.0);
  const double tilt = rng.uniform(0.0, max_tilt_deg);
  const double azimuth = rng.uniform(0.0, 360.0);
  return Rotation::rz(azimuth) * Rotation::rx(tilt) * Rotation::rz(-azimuth) *
         Rotation::rz(yaw);
}

Vec3 PoseDistribution::sample_translation(Rng& rng) const {
  Vec3 t;
  for (int a = 0; a < 3; ++a) t[a] = rng.uniform(translation_min[a], translation_max[a]);
  return t;
}

std::vector<DatasetSample> generate_synthetic_dataset(const SyntheticDatasetSpec& spec,
                                                      const std::string& id_prefix) {
  if (spec.bases.empty()) throw Error(ErrorKind::InvalidParameter, "no shape bases");
  Rng rng(spec.seed);
  std::vector<DatasetSample> out;
  out.reserve(spec.count);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(spec.count).size()));
  for (std::size_t i = 0; i < spec.count; ++i) {
    const ShapeBase base = spec.bases[i % spec.bases.size()];
    SyntheticShapeSpec shape;
    shape.base = base;
    shape.extents = default_extents(base);
    for (int a = 0; a < 3; ++a) {
      shape.extents[a] *= 1.0 + rng.uniform(-spec.extent_jitter, spec.extent_jitter);
    }
    if (base == ShapeBase::Cylinder) shape.extents.y() = shape.extents.x();
    shape.points_per_sample = spec.points_per_sample;
    shape.background_points = spec.background_points;
    shape.noise_sigma = spec.noise_sigma;
    shape.seed = rng.engine()();

    PoseRecord pose;
    pose.rotation = spec.poses.sample_rotation(rng);
    pose.translation = spec.poses.sample_translation(rng);
    pose.size = shape.extents;
    pose.category = std::string(to_string(base));
    pose.symmetry = default_symmetry(base);

    std::ostringstream id;
    id << id_prefix << std::setw(width) << std::setfill('0') << i;
    out.push_back({id.str(), generate_synthetic_sample(shape, pose)});
  }
  return out;
}

void write_dataset(const std::vector<DatasetSample>& samples, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string());
  json manifest;
  json categories = json::array();
  std::vector<std::string> seen;
  json list = json::array();
  std::vector<PoseEntry> poses;
  for (const auto& s : samples) {
    const std::string file = s.id + ".ply";
    write_pointcloud(s.sample.cloud, dir / file);
    if (std::find(seen.begin(), seen.end(), s.sample.pose.category) == seen.end()) {
      seen.push_back(s.sample.pose.category);
      categories.push_back(s.sample.pose.category);
    }
    list.push_back({{"id", s.id}, {"cloud", file}, {"category", s.sample.pose.category}});
    poses.push_back({s.id, s.sample.pose, std::nullopt});
  }
  manifest["categories"] = categories;
  manifest["poses"] = "poses.json";
  manifest["samples"] = list;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_poses(poses, dir / "poses.json");
}

std::vector<DatasetSample> read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const std::string text = read_text_file(manifest_path);
  const json manifest = parse_json_text(text, manifest_path.string());
  JsonContext ctx{manifest_path.string(), "manifest"};
  if (!manifest.is_object()) ctx.fail("manifest must be an object");
  const auto poses = read_poses(dir / ctx.string(ctx.field(manifest, "poses"), "poses"));
  std::unordered_map<std::string, const PoseEntry*> by_id;
  for (const auto& p : poses) by_id[p.id] = &p;
  const json& list = ctx.field(manifest, "samples");
  if (!list.is_array()) ctx.fail("samples must be an array");
  std::vector<DatasetSample> out;
  std::unordered_set<std::string> ids;
  for (const auto& item : list) {
    const std::string id = ctx.string(ctx.field(item, "id"), "id");
    if (!ids.insert(id).second) {
      throw Error(ErrorKind::DuplicateId, manifest_path.string() + ": duplicate id '" + id + "'");
    }
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::MissingGroundTruth, "no pose for sample '" + id + "'");
    }
    DatasetSample s;
    s.id = id;
    s.sample.cloud = read_pointcloud(dir / ctx.string(ctx.field(item, "cloud"), "cloud"));
    s.sample.pose = it->second->pose;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace posekit
