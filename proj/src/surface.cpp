#include "cgca/surface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "cgca/detail/mc_table.hpp"

namespace cgca {

namespace {

constexpr std::array<Coord, 8> kCorner{{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
constexpr std::array<std::array<int, 2>, 12> kEdge{{{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                                    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

constexpr std::size_t kQueryChunk = 4096;

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

std::unique_ptr<std::FILE, FileCloser> open_for_write(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(ErrorCode::IoError, "cannot write " + path);
  return f;
}

}  // namespace

Vec3 ScalarField::node_position(const Coord& n) const {
  const double h = spacing();
  return Vec3::Constant(grid.origin()) + h * Vec3(n.i + 0.5, n.j + 0.5, n.k + 0.5);
}

std::vector<Coord> field_nodes(const SparseState& state, int upsample) {
  if (upsample < 1) fail(ErrorCode::InvalidArgument, "upsample factor must be >= 1");
  std::set<Coord> coarse;
  for (const auto& [key, z] : state.storage()) {
    const Coord c = unpack(key);
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int d = -1; d <= 1; ++d) {
          const Coord n = c + Coord{a, b, d};
          if (!state.grid().bounded || state.grid().in_bounds(n)) coarse.insert(n);
        }
  }
  std::vector<Coord> nodes;
  nodes.reserve(coarse.size() * upsample * upsample * upsample);
  for (const Coord& c : coarse)
    for (int a = 0; a < upsample; ++a)
      for (int b = 0; b < upsample; ++b)
        for (int d = 0; d < upsample; ++d) nodes.push_back({c.i * upsample + a, c.j * upsample + b, c.k * upsample + d});
  std::sort(nodes.begin(), nodes.end());
  return nodes;
}

std::vector<Coord> all_field_nodes(const GridSpec& grid, int upsample) {
  if (upsample < 1) fail(ErrorCode::InvalidArgument, "upsample factor must be >= 1");
  const int n = grid.resolution * upsample;
  std::vector<Coord> nodes;
  nodes.reserve(static_cast<std::size_t>(n) * n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) nodes.push_back({i, j, k});
  return nodes;
}

ScalarField sample_field(const GridSpec& grid, int upsample, FieldMode mode, std::span<const Coord> nodes,
                         const FieldEvaluator& evaluate) {
  ScalarField field;
  field.grid = grid;
  field.upsample = upsample;
  field.mode = mode;
  std::vector<Vec3> batch;
  for (std::size_t start = 0; start < nodes.size(); start += kQueryChunk) {
    const std::size_t end = std::min(nodes.size(), start + kQueryChunk);
    batch.clear();
    for (std::size_t n = start; n < end; ++n) batch.push_back(field.node_position(nodes[n]));
    const Eigen::VectorXd values = evaluate(batch);
    if (values.size() != static_cast<Eigen::Index>(batch.size())) {
      fail(ErrorCode::ShapeMismatch, "field evaluator returned the wrong number of values");
    }
    for (std::size_t n = start; n < end; ++n) field.samples.emplace(pack(nodes[n]), values[static_cast<Eigen::Index>(n - start)]);
  }
  return field;
}

ScalarField dense_query(const SparseState& state, int upsample, FieldMode mode, const FieldEvaluator& evaluate) {
  if (state.empty()) fail(ErrorCode::EmptyState, "dense_query needs an occupied state");
  const auto nodes = field_nodes(state, upsample);
  return sample_field(state.grid(), upsample, mode, nodes, evaluate);
}

ScalarField dense_query(const ParamStore& params, const Autoencoder& ae, const SparseState& state, int upsample) {
  if (state.empty()) fail(ErrorCode::EmptyState, "dense_query needs an occupied state");
  const FeaturePyramid pyramid = build_pyramid(params, ae, state);
  return dense_query(state, upsample, ae.spec().mode,
                     [&](std::span<const Vec3> q) { return decode_batch(params, ae, pyramid, q); });
}

PointList extract_points(const ScalarField& field, double tau) {
  PointList points;
  for (const auto& [key, value] : field.samples) {
    const double d = field.mode == FieldMode::Signed ? std::abs(value) : value;
    if (d < tau) points.push_back(field.node_position(unpack(key)));
  }
  return points;
}

Mesh marching_cubes(const ScalarField& field, double iso) {
  Mesh mesh;
  if (field.empty()) return mesh;

  auto value_at = [&](const Coord& n) {
    auto it = field.samples.find(pack(n));
    if (it == field.samples.end()) return 1.0;
    return field.mode == FieldMode::Signed ? it->second : std::abs(it->second);
  };

  std::set<Coord> cubes;
  for (const auto& [key, value] : field.samples) {
    const Coord n = unpack(key);
    for (const Coord& a : kCorner) cubes.insert(n - a);
  }

  std::map<std::pair<std::uint64_t, std::uint64_t>, int> edge_vertex;
  auto vertex_on = [&](const Coord& a, const Coord& b, double fa, double fb) {
    std::uint64_t ka = pack(a), kb = pack(b);
    Coord lo = a, hi = b;
    double flo = fa, fhi = fb;
    if (kb < ka) {
      std::swap(ka, kb);
      std::swap(lo, hi);
      std::swap(flo, fhi);
    }
    auto [it, fresh] = edge_vertex.try_emplace({ka, kb}, static_cast<int>(mesh.vertices.size()));
    if (fresh) {
      const double denom = fhi - flo;
      const double t = std::abs(denom) > 1e-300 ? std::clamp((iso - flo) / denom, 0.0, 1.0) : 0.5;
      const Vec3 plo = field.node_position(lo);
      mesh.vertices.push_back(plo + t * (field.node_position(hi) - plo));
    }
    return it->second;
  };

  for (const Coord& base : cubes) {
    std::array<double, 8> f;
    int index = 0;
    for (int v = 0; v < 8; ++v) {
      f[v] = value_at(base + kCorner[v]);
      if (f[v] < iso) index |= 1 << v;
    }
    if (index == 0 || index == 255) continue;
    const auto& row = detail::kTriangleTable[index];
    for (int t = 0; row[t] != -1; t += 3) {
      std::array<int, 3> tri;
      for (int s = 0; s < 3; ++s) {
        const auto& e = kEdge[static_cast<std::size_t>(row[t + s])];
        tri[s] = vertex_on(base + kCorner[e[0]], base + kCorner[e[1]], f[e[0]], f[e[1]]);
      }
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
      mesh.triangles.push_back(tri);
    }
  }
  return mesh;
}

double mesh_area(const Mesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    area += 0.5 * (mesh.vertices[static_cast<std::size_t>(t[1])] - a)
                      .cross(mesh.vertices[static_cast<std::size_t>(t[2])] - a)
                      .norm();
  }
  return area;
}

void export_obj(const Mesh& mesh, const std::string& path) {
  auto f = open_for_write(path);
  std::fprintf(f.get(), "# cgca mesh: %zu vertices, %zu triangles\n", mesh.vertices.size(), mesh.triangles.size());
  for (const Vec3& v : mesh.vertices) std::fprintf(f.get(), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
  for (const auto& t : mesh.triangles) std::fprintf(f.get(), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
  if (std::ferror(f.get())) fail(ErrorCode::IoError, "write failed for " + path);
}

void export_xyz(std::span<const Vec3> points, const std::string& path) {
  auto f = open_for_write(path);
  for (const Vec3& p : points) std::fprintf(f.get(), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
  if (std::ferror(f.get())) fail(ErrorCode::IoError, "write failed for " + path);
}

PointList import_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  PointList points;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    Vec3 p;
    if (!(row >> p.x() >> p.y() >> p.z())) fail(ErrorCode::FormatError, "bad xyz line in " + path + ": " + line);
    points.push_back(p);
  }
  return points;
}

}  // namespace cgca
