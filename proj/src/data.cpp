#include "cgca/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cgca {

namespace {

constexpr std::string_view kMagic = "cgca-dataset";
constexpr int kVersion = 1;
constexpr double kPi = std::numbers::pi;

double uniform(Engine& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 random_direction(Engine& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Vec3 v(normal(rng), normal(rng), normal(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

/// Two unit vectors completing `axis` to an orthonormal frame.
std::pair<Vec3, Vec3> frame(const Vec3& axis) {
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = axis.cross(helper).normalized();
  return {u, axis.cross(u)};
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

double box_distance(const Vec3& p, const Vec3& c, const Vec3& h) {
  const Vec3 q = (p - c).cwiseAbs() - h;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

int capsule_count(const ToyShape& s) { return static_cast<int>((s.params.size() - 1) / 6); }
Vec3 capsule_a(const ToyShape& s, int n) { return s.params.segment<3>(1 + 6 * n); }
Vec3 capsule_b(const ToyShape& s, int n) { return s.params.segment<3>(4 + 6 * n); }

void expect_params(const ToyShape& s, Eigen::Index n) {
  if (s.params.size() != n) fail(ErrorCode::ShapeMismatch, "wrong parameter count for " + std::string(to_string(s.kind)));
}

void validate(const ToyShape& s) {
  switch (s.kind) {
    case ShapeKind::Sphere: expect_params(s, 4); break;
    case ShapeKind::Box: expect_params(s, 6); break;
    case ShapeKind::Torus: expect_params(s, 6); break;
    case ShapeKind::TwoBlobs: expect_params(s, 8); break;
    case ShapeKind::LineUnion:
      if (s.params.size() < 7 || (s.params.size() - 1) % 6 != 0) {
        fail(ErrorCode::ShapeMismatch, "line_union needs r plus 6 values per capsule");
      }
      break;
  }
}

Vec3 sphere_point(const Vec3& c, double r, Engine& rng) { return c + r * random_direction(rng); }

Vec3 capsule_point(const Vec3& a, const Vec3& b, double r, Engine& rng) {
  const Vec3 ab = b - a;
  const double len = ab.norm();
  const Vec3 axis = ab / len;
  const double side = 2.0 * kPi * r * len;
  const double caps = 4.0 * kPi * r * r;
  if (uniform(rng, 0.0, side + caps) < side) {
    const auto [u, v] = frame(axis);
    const double phi = uniform(rng, 0.0, 2.0 * kPi);
    return a + uniform(rng, 0.0, len) * ab / len + r * (std::cos(phi) * u + std::sin(phi) * v);
  }
  Vec3 dir = random_direction(rng);
  const double along = dir.dot(axis);
  // Hemisphere facing away from the segment at whichever end it belongs to.
  return along >= 0.0 ? Vec3(b + r * dir) : Vec3(a + r * dir);
}

Vec3 surface_point(const ToyShape& s, Engine& rng) {
  const auto& q = s.params;
  switch (s.kind) {
    case ShapeKind::Sphere:
      return sphere_point(q.head<3>(), q[3], rng);
    case ShapeKind::Box: {
      const Vec3 c = q.head<3>(), h = q.segment<3>(3);
      const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
      double pick = uniform(rng, 0.0, areas[0] + areas[1] + areas[2]);
      int axis = 0;
      while (axis < 2 && pick >= areas[axis]) pick -= areas[axis++];
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = uniform(rng, -h[a], h[a]);
      p[axis] = uniform(rng, 0.0, 1.0) < 0.5 ? -h[axis] : h[axis];
      return c + p;
    }
    case ShapeKind::Torus: {
      const Vec3 c = q.head<3>();
      const double R = q[3], r = q[4];
      const int axis = static_cast<int>(q[5]);
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      const double phi = uniform(rng, 0.0, 2.0 * kPi);
      double theta = 0.0;
      do {
        theta = uniform(rng, 0.0, 2.0 * kPi);
      } while (uniform(rng, 0.0, R + r) > R + r * std::cos(theta));
      Vec3 p = c;
      const double ring = R + r * std::cos(theta);
      p[a1] += ring * std::cos(phi);
      p[a2] += ring * std::sin(phi);
      p[axis] += r * std::sin(theta);
      return p;
    }
    case ShapeKind::TwoBlobs: {
      const double w1 = q[3] * q[3], w2 = q[7] * q[7];
      return uniform(rng, 0.0, w1 + w2) < w1 ? sphere_point(q.head<3>(), q[3], rng)
                                            : sphere_point(q.segment<3>(4), q[7], rng);
    }
    case ShapeKind::LineUnion: {
      const double r = q[0];
      std::vector<double> areas;
      double total = 0.0;
      for (int n = 0; n < capsule_count(s); ++n) {
        areas.push_back(2.0 * kPi * r * (capsule_b(s, n) - capsule_a(s, n)).norm() + 4.0 * kPi * r * r);
        total += areas.back();
      }
      for (;;) {
        double pick = uniform(rng, 0.0, total);
        int n = 0;
        while (n + 1 < capsule_count(s) && pick >= areas[static_cast<std::size_t>(n)]) {
          pick -= areas[static_cast<std::size_t>(n++)];
        }
        const Vec3 p = capsule_point(capsule_a(s, n), capsule_b(s, n), r, rng);
        // Parts of one capsule buried inside another are not on the union surface.
        if (s.distance(p) > -1e-9) return p;
      }
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown shape kind");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> parse_doubles(const std::string& text, char sep) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    if (cell.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      fail(ErrorCode::FormatError, "not a number: '" + cell + "'");
    }
  }
  return out;
}

void write_rows(const std::string& path, const std::vector<std::vector<double>>& rows, const char* header) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
    out << '\n';
  }
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

std::vector<std::vector<double>> read_rows(const std::string& path, std::size_t width) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = parse_doubles(line, ',');
    if (row.size() != width) fail(ErrorCode::FormatError, "bad row width in " + path);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_points(const std::string& path, const PointList& points) {
  std::vector<std::vector<double>> rows;
  rows.reserve(points.size());
  for (const Vec3& p : points) rows.push_back({p.x(), p.y(), p.z()});
  write_rows(path, rows, "x,y,z");
}

PointList read_points(const std::string& path) {
  PointList points;
  for (const auto& r : read_rows(path, 3)) points.emplace_back(r[0], r[1], r[2]);
  return points;
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Torus: return "torus";
    case ShapeKind::TwoBlobs: return "two_blobs";
    case ShapeKind::LineUnion: return "line_union";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(std::string_view name) {
  for (ShapeKind k : kAllShapeKinds)
    if (to_string(k) == name) return k;
  fail(ErrorCode::FormatError, "unknown shape kind '" + std::string(name) + "'");
}

double ToyShape::distance(const Vec3& p) const {
  validate(*this);
  const auto& q = params;
  switch (kind) {
    case ShapeKind::Sphere:
      return (p - q.head<3>()).norm() - q[3];
    case ShapeKind::Box:
      return box_distance(p, q.head<3>(), q.segment<3>(3));
    case ShapeKind::Torus: {
      const int axis = static_cast<int>(q[5]);
      const Vec3 d = p - q.head<3>();
      const double planar = std::hypot(d[(axis + 1) % 3], d[(axis + 2) % 3]) - q[3];
      return std::hypot(planar, d[axis]) - q[4];
    }
    case ShapeKind::TwoBlobs:
      return std::min((p - q.head<3>()).norm() - q[3], (p - q.segment<3>(4)).norm() - q[7]);
    case ShapeKind::LineUnion: {
      double best = std::numeric_limits<double>::infinity();
      for (int n = 0; n < capsule_count(*this); ++n) best = std::min(best, segment_distance(p, capsule_a(*this, n), capsule_b(*this, n)));
      return best - q[0];
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown shape kind");
}

double ToyShape::area() const {
  validate(*this);
  const auto& q = params;
  switch (kind) {
    case ShapeKind::Sphere: return 4.0 * kPi * q[3] * q[3];
    case ShapeKind::Box: return 8.0 * (q[3] * q[4] + q[3] * q[5] + q[4] * q[5]);
    case ShapeKind::Torus: return 4.0 * kPi * kPi * q[3] * q[4];
    case ShapeKind::TwoBlobs: return 4.0 * kPi * (q[3] * q[3] + q[7] * q[7]);
    case ShapeKind::LineUnion: {
      // Sum of capsule areas; overlaps at shared joints are not subtracted.
      double a = 0.0;
      for (int n = 0; n < capsule_count(*this); ++n) {
        a += 2.0 * kPi * q[0] * (capsule_b(*this, n) - capsule_a(*this, n)).norm() + 4.0 * kPi * q[0] * q[0];
      }
      return a;
    }
  }
  return 0.0;
}

ToyShape make_sphere(const Vec3& center, double radius) {
  ToyShape s;
  s.kind = ShapeKind::Sphere;
  s.params.resize(4);
  s.params << center, radius;
  return s;
}

ToyShape random_shape(ShapeKind kind, double scale, Engine& rng) {
  if (!(scale > 0.0)) fail(ErrorCode::InvalidArgument, "shape scale must be positive");
  const double jitter = 0.1 * scale;
  const Vec3 c(uniform(rng, -jitter, jitter), uniform(rng, -jitter, jitter), uniform(rng, -jitter, jitter));
  ToyShape s;
  s.kind = kind;
  switch (kind) {
    case ShapeKind::Sphere:
      s.params.resize(4);
      s.params << c, uniform(rng, 0.6, 0.9) * scale;
      break;
    case ShapeKind::Box:
      s.params.resize(6);
      s.params << c, uniform(rng, 0.35, 0.6) * scale, uniform(rng, 0.35, 0.6) * scale, uniform(rng, 0.35, 0.6) * scale;
      break;
    case ShapeKind::Torus:
      s.params.resize(6);
      s.params << c, uniform(rng, 0.6, 0.7) * scale, uniform(rng, 0.22, 0.3) * scale,
          static_cast<double>(std::uniform_int_distribution<int>(0, 2)(rng));
      break;
    case ShapeKind::TwoBlobs: {
      // Centres 1.3 * scale apart with radii <= 0.4 * scale: a clear gap.
      const Vec3 axis = random_direction(rng);
      s.params.resize(8);
      s.params << c + 0.65 * scale * axis, uniform(rng, 0.3, 0.4) * scale, c - 0.65 * scale * axis,
          uniform(rng, 0.3, 0.4) * scale;
      break;
    }
    case ShapeKind::LineUnion: {
      // A tripod: three capsules from a shared joint.
      const double r = uniform(rng, 0.15, 0.2) * scale;
      s.params.resize(1 + 18);
      s.params[0] = r;
      for (int n = 0; n < 3; ++n) {
        const Vec3 tip = c + uniform(rng, 0.7, 0.85) * scale * random_direction(rng);
        s.params.segment<3>(1 + 6 * n) = c;
        s.params.segment<3>(4 + 6 * n) = tip;
      }
      break;
    }
  }
  return s;
}

PointList sample_surface(const ToyShape& shape, std::size_t count, Engine& rng) {
  validate(shape);
  PointList points;
  points.reserve(count);
  for (std::size_t n = 0; n < count; ++n) points.push_back(surface_point(shape, rng));
  return points;
}

std::vector<PointSample> sample_query_pairs(const ToyShape& shape, std::size_t count, double band_sd,
                                            FieldMode mode, Engine& rng) {
  if (!(band_sd > 0.0)) fail(ErrorCode::InvalidArgument, "band_sd must be positive");
  std::normal_distribution<double> noise(0.0, band_sd);
  std::vector<PointSample> pairs;
  pairs.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    PointSample s;
    s.p = surface_point(shape, rng);
    s.p += Vec3(noise(rng), noise(rng), noise(rng));
    s.d = shape.distance(s.p);
    if (mode == FieldMode::Unsigned) s.d = std::abs(s.d);
    pairs.push_back(s);
  }
  return pairs;
}

PointList make_partial(const PointList& points, const PartialSpec& spec, Engine& rng) {
  if (points.empty()) fail(ErrorCode::EmptyCloud, "make_partial needs points");
  if (!(spec.min_rate > 0.0 && spec.min_rate <= 1.0)) fail(ErrorCode::InvalidArgument, "min_rate must be in (0,1]");
  const double floor = spec.min_rate * static_cast<double>(points.size());
  PointList survivors = points;
  for (int it = 0; it < spec.iterations && !survivors.empty(); ++it) {
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, survivors.size() - 1)(rng);
    const Vec3 center = survivors[pick];
    PointList kept;
    kept.reserve(survivors.size());
    for (const Vec3& p : survivors)
      if ((p - center).norm() > spec.removal_radius) kept.push_back(p);
    if (static_cast<double>(kept.size()) < floor) continue;  // revoked
    survivors = std::move(kept);
  }
  if (spec.noise_sd > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sd);
    for (Vec3& p : survivors) p += Vec3(noise(rng), noise(rng), noise(rng));
  }
  return survivors;
}

std::vector<std::size_t> Dataset::split(bool held_out) const {
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < shapes.size(); ++n)
    if (shapes[n].held_out == held_out) out.push_back(n);
  return out;
}

Dataset generate_dataset(const CorpusSpec& spec, std::uint64_t seed) {
  Dataset ds;
  ds.seed = seed;
  ds.grid = spec.grid;
  ds.mode = spec.mode;
  const int per_kind = spec.train_per_kind + spec.test_per_kind;
  std::size_t index = 0;
  for (int copy = 0; copy < per_kind; ++copy) {
    for (ShapeKind kind : kAllShapeKinds) {
      Engine rng(derive_seed(seed, "shape", index++));
      ShapeRecord rec;
      rec.shape = random_shape(kind, spec.scale, rng);
      rec.held_out = copy >= spec.train_per_kind;
      rec.complete = sample_surface(rec.shape, spec.surface_points, rng);
      rec.partial = make_partial(rec.complete, spec.partial, rng);
      rec.pairs = sample_query_pairs(rec.shape, spec.query_pairs, spec.band_sd, spec.mode, rng);
      ds.shapes.push_back(std::move(rec));
    }
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + directory);
  const fs::path dir(directory);

  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) fail(ErrorCode::IoError, "cannot write manifest in " + directory);
  manifest << "magic=" << kMagic << '\n'
           << "version=" << kVersion << '\n'
           << "seed=" << dataset.seed << '\n'
           << "resolution=" << dataset.grid.resolution << '\n'
           << "voxel_size=" << format_double(dataset.grid.voxel_size) << '\n'
           << "bounded=" << (dataset.grid.bounded ? 1 : 0) << '\n'
           << "mode=" << (dataset.mode == FieldMode::Signed ? "sdf" : "udf") << '\n'
           << "shapes=" << dataset.shapes.size() << '\n';
  for (std::size_t n = 0; n < dataset.shapes.size(); ++n) {
    const auto& rec = dataset.shapes[n];
    manifest << "shape." << n << ".kind=" << to_string(rec.shape.kind) << '\n'
             << "shape." << n << ".held_out=" << (rec.held_out ? 1 : 0) << '\n'
             << "shape." << n << ".params=";
    for (Eigen::Index c = 0; c < rec.shape.params.size(); ++c) manifest << (c ? "," : "") << format_double(rec.shape.params[c]);
    manifest << '\n';
    write_points((dir / ("complete_" + std::to_string(n) + ".csv")).string(), rec.complete);
    write_points((dir / ("partial_" + std::to_string(n) + ".csv")).string(), rec.partial);
    std::vector<std::vector<double>> rows;
    rows.reserve(rec.pairs.size());
    for (const auto& s : rec.pairs) rows.push_back({s.p.x(), s.p.y(), s.p.z(), s.d});
    write_rows((dir / ("pairs_" + std::to_string(n) + ".csv")).string(), rows, "x,y,z,d");
  }
  manifest << "states=" << dataset.states.size() << '\n';
  std::size_t n = 0;
  for (const auto& [name, state] : dataset.states) {
    manifest << "state." << n << ".name=" << name << '\n';
    save_state((dir / ("state_" + std::to_string(n) + ".csv")).string(), state);
    ++n;
  }
  if (!manifest) fail(ErrorCode::IoError, "write failed for manifest in " + directory);
}

Dataset load_dataset(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  std::ifstream in(dir / "manifest.txt");
  if (!in) fail(ErrorCode::IoError, "cannot read manifest in " + directory);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::FormatError, "manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorCode::FormatError, "manifest lacks " + key);
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    try {
      return std::stoll(get(key));
    } catch (const std::logic_error&) {
      fail(ErrorCode::FormatError, "manifest value of " + key + " is not an integer");
    }
  };
  if (kv.count("magic") == 0 || kv["magic"] != kMagic) fail(ErrorCode::FormatError, "bad dataset magic in " + directory);
  if (get_int("version") != kVersion) fail(ErrorCode::FormatError, "unsupported dataset version " + get("version"));

  Dataset ds;
  ds.seed = std::stoull(get("seed"));
  ds.grid.resolution = static_cast<int>(get_int("resolution"));
  ds.grid.voxel_size = parse_doubles(get("voxel_size"), ',').at(0);
  ds.grid.bounded = get_int("bounded") != 0;
  const std::string& mode = get("mode");
  if (mode != "sdf" && mode != "udf") fail(ErrorCode::FormatError, "unknown field mode " + mode);
  ds.mode = mode == "sdf" ? FieldMode::Signed : FieldMode::Unsigned;

  const auto count = static_cast<std::size_t>(get_int("shapes"));
  for (std::size_t n = 0; n < count; ++n) {
    const std::string p = "shape." + std::to_string(n);
    ShapeRecord rec;
    rec.shape.kind = shape_kind_from_string(get(p + ".kind"));
    rec.held_out = get_int(p + ".held_out") != 0;
    const auto values = parse_doubles(get(p + ".params"), ',');
    rec.shape.params = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    validate(rec.shape);
    rec.complete = read_points((dir / ("complete_" + std::to_string(n) + ".csv")).string());
    rec.partial = read_points((dir / ("partial_" + std::to_string(n) + ".csv")).string());
    for (const auto& r : read_rows((dir / ("pairs_" + std::to_string(n) + ".csv")).string(), 4)) {
      rec.pairs.push_back({Vec3(r[0], r[1], r[2]), r[3]});
    }
    ds.shapes.push_back(std::move(rec));
  }
  const auto states = static_cast<std::size_t>(get_int("states"));
  for (std::size_t n = 0; n < states; ++n) {
    ds.states.emplace(get("state." + std::to_string(n) + ".name"),
                      load_state((dir / ("state_" + std::to_string(n) + ".csv")).string()));
  }
  return ds;
}

}  // namespace cgca
