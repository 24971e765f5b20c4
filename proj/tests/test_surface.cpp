#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cgca/surface.hpp"

using namespace cgca;

namespace {

namespace fs = std::filesystem;

FieldEvaluator constant(double v) {
  return [v](std::span<const Vec3> q) { return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(q.size()), v); };
}

FieldEvaluator sphere_sdf(double radius) {
  return [radius](std::span<const Vec3> q) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(q.size()));
    for (std::size_t n = 0; n < q.size(); ++n) out[static_cast<Eigen::Index>(n)] = q[n].norm() - radius;
    return out;
  };
}

SparseState one_cell(const Coord& c, int resolution = 32) {
  GridSpec g;
  g.resolution = resolution;
  g.voxel_size = 2.0 / resolution;
  SparseState s(1, g);
  s.set(c, Eigen::VectorXd::Zero(1));
  return s;
}

struct ParsedObj {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  int warnings = 0;
};

// Minimal strict OBJ reader: anything other than comments, v and f lines,
// or a face index out of range, counts as a warning.
ParsedObj parse_obj(const fs::path& path) {
  ParsedObj obj;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string tag;
    row >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(row >> v.x() >> v.y() >> v.z()) || !v.allFinite()) ++obj.warnings;
      obj.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> f{};
      if (!(row >> f[0] >> f[1] >> f[2])) ++obj.warnings;
      for (int& i : f) {
        if (i < 1 || i > static_cast<int>(obj.vertices.size())) ++obj.warnings;
        --i;
      }
      obj.faces.push_back(f);
    } else {
      ++obj.warnings;
    }
  }
  return obj;
}

}  // namespace

TEST_CASE("dense query node counts") {
  SUBCASE("single interior cell at u = 1") {
    const SparseState s = one_cell({10, 10, 10});
    const ScalarField f = dense_query(s, 1, FieldMode::Signed, constant(0.3));
    CHECK(f.size() == 27);
  }
  SUBCASE("corner cell is clipped") {
    const SparseState s = one_cell({0, 0, 0});
    CHECK(dense_query(s, 1, FieldMode::Signed, constant(0.3)).size() == 8);
  }
  SUBCASE("u = 4 multiplies the density per axis") {
    const SparseState s = one_cell({10, 10, 10});
    for (int u : {2, 3, 4}) CHECK(dense_query(s, u, FieldMode::Signed, constant(0.3)).size() == 27u * u * u * u);
  }
  SUBCASE("two cells share their dilation") {
    SparseState s = one_cell({10, 10, 10});
    s.set({11, 10, 10}, Eigen::VectorXd::Zero(1));
    CHECK(dense_query(s, 2, FieldMode::Signed, constant(0.0)).size() == 4u * 3 * 3 * 8);
  }
  SUBCASE("nodes lie in the coarse dilation and values come from the evaluator") {
    const SparseState s = one_cell({5, 6, 7});
    const ScalarField f = dense_query(s, 4, FieldMode::Signed, sphere_sdf(0.5));
    for (const auto& [key, v] : f.samples) {
      const Coord n = unpack(key);
      const Coord c{n.i / 4, n.j / 4, n.k / 4};
      CHECK(std::abs(c.i - 5) <= 1);
      CHECK(std::abs(c.j - 6) <= 1);
      CHECK(std::abs(c.k - 7) <= 1);
      CHECK(v == f.node_position(n).norm() - 0.5);
    }
  }
  CHECK_THROWS_AS(dense_query(SparseState(1, GridSpec{}), 2, FieldMode::Signed, constant(0.0)), Error);
}

TEST_CASE("extract_points") {
  const SparseState s = one_cell({10, 10, 10});
  CHECK(extract_points(dense_query(s, 2, FieldMode::Signed, constant(1.0))).empty());
  CHECK(extract_points(dense_query(s, 2, FieldMode::Unsigned, constant(0.0))).size() == 27u * 8);

  const ScalarField mixed = dense_query(one_cell({16, 16, 16}), 4, FieldMode::Signed, sphere_sdf(0.1));
  for (double tau : {0.02, 0.05, 0.1}) {
    std::size_t count = 0;
    for (const auto& [key, v] : mixed.samples)
      if (std::abs(v) < tau) ++count;
    const PointList got = extract_points(mixed, tau);
    CHECK(got.size() == count);
    for (const Vec3& p : got) CHECK(std::abs(p.norm() - 0.1) < tau + 1e-12);
  }
  // Monotone in tau.
  const auto a = extract_points(mixed, 0.03), b = extract_points(mixed, 0.08);
  for (const Vec3& p : a) CHECK(std::find(b.begin(), b.end(), p) != b.end());
}

TEST_CASE("marching cubes") {
  SUBCASE("uniform positive field") {
    const ScalarField f = dense_query(one_cell({10, 10, 10}), 4, FieldMode::Signed, constant(0.5));
    const Mesh m = marching_cubes(f);
    CHECK(m.vertices.empty());
    CHECK(m.triangles.empty());
  }
  SUBCASE("sphere vertices lie within a fine diagonal of the radius") {
    GridSpec g;
    g.resolution = 8;
    g.voxel_size = 0.25;
    const double r = 0.61;
    const ScalarField f = sample_field(g, 4, FieldMode::Signed, all_field_nodes(g, 4), sphere_sdf(r));
    const Mesh m = marching_cubes(f);
    REQUIRE(m.triangles.size() > 100);
    const double diag = std::sqrt(3.0) * f.spacing();
    for (const Vec3& v : m.vertices) {
      CHECK(v.allFinite());
      CHECK(std::abs(v.norm() - r) < diag);
    }
    for (const auto& t : m.triangles)
      for (int i : t) CHECK((i >= 0 && i < static_cast<int>(m.vertices.size())));
    CHECK(mesh_area(m) == doctest::Approx(4 * M_PI * r * r).epsilon(0.03));
  }
  SUBCASE("plane area matches the cross-section of the sampled box") {
    GridSpec g;
    g.resolution = 8;
    g.voxel_size = 0.25;
    const double c = 0.0371;
    const ScalarField f = sample_field(g, 4, FieldMode::Signed, all_field_nodes(g, 4),
                                       [c](std::span<const Vec3> q) {
                                         Eigen::VectorXd out(static_cast<Eigen::Index>(q.size()));
                                         for (std::size_t n = 0; n < q.size(); ++n) out[static_cast<Eigen::Index>(n)] = q[n].z() - c;
                                         return out;
                                       });
    const Mesh m = marching_cubes(f);
    // Cubes past the outermost nodes see absent (+1) corners and close the
    // region below the plane with walls; keep triangles between the nodes.
    const double lo = f.node_position({0, 0, 0}).x(), hi = f.node_position({31, 31, 31}).x();
    Mesh inner;
    inner.vertices = m.vertices;
    for (const auto& t : m.triangles) {
      const Vec3 centroid = (m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3.0;
      if (centroid.x() > lo && centroid.x() < hi && centroid.y() > lo && centroid.y() < hi &&
          std::abs(centroid.z() - c) < 1e-9)
        inner.triangles.push_back(t);
    }
    const double want = (hi - lo) * (hi - lo);
    CHECK(std::abs(mesh_area(inner) - want) < 0.02 * want);
  }
  SUBCASE("no triangles in cubes without a sign change") {
    GridSpec g;
    g.resolution = 8;
    g.voxel_size = 0.25;
    const ScalarField f = sample_field(g, 2, FieldMode::Signed, all_field_nodes(g, 2), sphere_sdf(0.45));
    const Mesh m = marching_cubes(f);
    const double h = f.spacing();
    for (const auto& t : m.triangles) {
      const Vec3 centroid = (m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3.0;
      // The cube holding the centroid, in node units (node n sits at (n + 0.5) h).
      const Vec3 u = (centroid.array() - g.origin()) / h - 0.5;
      const Coord base{static_cast<int>(std::floor(u.x())), static_cast<int>(std::floor(u.y())),
                       static_cast<int>(std::floor(u.z()))};
      bool neg = false, pos = false;
      for (int n = 0; n < 8; ++n) {
        const Coord node = base + Coord{n & 1, (n >> 1) & 1, (n >> 2) & 1};
        auto it = f.samples.find(pack(node));
        const double v = it == f.samples.end() ? 1.0 : it->second;
        (v < 0 ? neg : pos) = true;
      }
      CHECK((neg && pos));
    }
  }
}

TEST_CASE("OBJ and XYZ export") {
  const fs::path dir = fs::temp_directory_path() / "cgca_test_surface";
  fs::create_directories(dir);
  SUBCASE("empty mesh is header only") {
    export_obj(Mesh{}, (dir / "empty.obj").string());
    const ParsedObj obj = parse_obj(dir / "empty.obj");
    CHECK(obj.vertices.empty());
    CHECK(obj.faces.empty());
    CHECK(obj.warnings == 0);
  }
  SUBCASE("single triangle round-trips") {
    Mesh m;
    m.vertices = {Vec3(0.125, -0.5, 0.25), Vec3(1.0, 0.0, 0.0), Vec3(0.0, 0.75, -1.0)};
    m.triangles = {{0, 2, 1}};
    export_obj(m, (dir / "tri.obj").string());
    const ParsedObj obj = parse_obj(dir / "tri.obj");
    CHECK(obj.vertices == m.vertices);
    CHECK(obj.faces == m.triangles);
  }
  SUBCASE("sphere mesh parses cleanly at written precision") {
    GridSpec g;
    g.resolution = 8;
    g.voxel_size = 0.25;
    const Mesh m = marching_cubes(sample_field(g, 2, FieldMode::Signed, all_field_nodes(g, 2), sphere_sdf(0.55)));
    export_obj(m, (dir / "sphere.obj").string());
    const ParsedObj obj = parse_obj(dir / "sphere.obj");
    CHECK(obj.warnings == 0);
    REQUIRE(obj.vertices.size() == m.vertices.size());
    CHECK(obj.faces == m.triangles);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK((obj.vertices[i] - m.vertices[i]).norm() < 1e-8);
  }
  SUBCASE("xyz round-trips to nine significant digits") {
    Engine rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointList pts;
    for (int n = 0; n < 100; ++n) pts.emplace_back(u(rng), u(rng), u(rng));
    export_xyz(pts, (dir / "pts.xyz").string());
    const PointList back = import_xyz((dir / "pts.xyz").string());
    REQUIRE(back.size() == pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((back[i] - pts[i]).cwiseAbs().maxCoeff() < 1e-8);
    // Re-export is byte-stable.
    export_xyz(back, (dir / "again.xyz").string());
    std::ifstream a(dir / "pts.xyz"), b(dir / "again.xyz");
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  }
  CHECK_THROWS_AS(export_xyz(PointList{}, (dir / "missing" / "x.xyz").string()), Error);
  fs::remove_all(dir);
}
