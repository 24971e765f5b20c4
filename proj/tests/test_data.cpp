#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cgca/data.hpp"

using namespace cgca;

namespace fs = std::filesystem;

TEST_CASE("surface sampling") {
  Engine rng(1);
  for (ShapeKind kind : kAllShapeKinds) {
    CAPTURE(to_string(kind));
    const ToyShape shape = random_shape(kind, 0.35, rng);
    CHECK(sample_surface(shape, 0, rng).empty());
    for (const Vec3& p : sample_surface(shape, 500, rng)) CHECK(std::abs(shape.distance(p)) < 1e-6);
  }
  SUBCASE("sphere octants are equally populated") {
    const ToyShape s = make_sphere(Vec3::Zero(), 0.5);
    std::array<int, 8> counts{};
    const int n = 80000;
    for (const Vec3& p : sample_surface(s, n, rng)) ++counts[(p.x() > 0) + 2 * (p.y() > 0) + 4 * (p.z() > 0)];
    for (int c : counts) CHECK(std::abs(c - n / 8.0) < 0.1 * n / 8.0);
  }
}

TEST_CASE("distance functions") {
  Engine rng(2);
  SUBCASE("sphere against the closed form") {
    const ToyShape s = make_sphere(Vec3(0.1, -0.2, 0.05), 0.3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int n = 0; n < 100; ++n) {
      const Vec3 p(u(rng), u(rng), u(rng));
      CHECK(std::abs(s.distance(p) - ((p - Vec3(0.1, -0.2, 0.05)).norm() - 0.3)) < 1e-12);
    }
  }
  SUBCASE("unit gradient near the surface") {
    for (ShapeKind kind : kAllShapeKinds) {
      CAPTURE(to_string(kind));
      const ToyShape shape = random_shape(kind, 0.35, rng);
      const double h = 1e-6;
      for (const Vec3& p : sample_surface(shape, 200, rng)) {
        Vec3 g;
        for (int a = 0; a < 3; ++a) {
          Vec3 e = Vec3::Zero();
          e[a] = h;
          g[a] = (shape.distance(p + e) - shape.distance(p - e)) / (2 * h);
        }
        CHECK(std::abs(g.norm() - 1.0) < 1e-3);
      }
    }
  }
  SUBCASE("sphere area") { CHECK(make_sphere(Vec3::Zero(), 0.5).area() == doctest::Approx(M_PI)); }
}

TEST_CASE("query pairs") {
  Engine rng(3);
  const ToyShape torus = random_shape(ShapeKind::Torus, 0.4, rng);
  const auto pairs = sample_query_pairs(torus, 500, 0.05, FieldMode::Signed, rng);
  bool neg = false, pos = false;
  for (const PointSample& s : pairs) {
    CHECK(std::abs(s.d - torus.distance(s.p)) < 1e-9);
    (s.d < 0 ? neg : pos) = true;
  }
  CHECK((neg && pos));
  for (const PointSample& s : sample_query_pairs(torus, 300, 0.05, FieldMode::Unsigned, rng)) {
    CHECK(s.d >= 0.0);
    CHECK(std::abs(s.d - std::abs(torus.distance(s.p))) < 1e-9);
  }
  for (const PointSample& s : sample_query_pairs(torus, 300, 1e-12, FieldMode::Signed, rng)) CHECK(std::abs(s.d) < 1e-10);
  CHECK_THROWS_AS(sample_query_pairs(torus, 1, 0.0, FieldMode::Signed, rng), Error);
}

TEST_CASE("make_partial") {
  Engine rng(4);
  const ToyShape s = make_sphere(Vec3::Zero(), 0.4);
  const PointList full = sample_surface(s, 1000, rng);
  SUBCASE("min_rate one is the identity") {
    PartialSpec spec;
    spec.min_rate = 1.0;
    CHECK(make_partial(full, spec, rng) == full);
  }
  SUBCASE("survivor fraction over 100 seeds") {
    PartialSpec spec;
    spec.min_rate = 0.5;
    spec.removal_radius = 0.3;
    spec.iterations = 6;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Engine r(seed);
      const PointList part = make_partial(full, spec, r);
      const double frac = static_cast<double>(part.size()) / static_cast<double>(full.size());
      CHECK(frac >= 0.5);
      CHECK(frac < 1.0);
      for (const Vec3& p : part) CHECK(std::find(full.begin(), full.end(), p) != full.end());
    }
  }
  SUBCASE("deterministic and never growing, also with jitter") {
    PartialSpec spec;
    spec.noise_sd = 0.01;
    Engine a(9), b(9);
    const PointList pa = make_partial(full, spec, a);
    CHECK(pa == make_partial(full, spec, b));
    CHECK(pa.size() <= full.size());
    CHECK(static_cast<double>(pa.size()) >= spec.min_rate * static_cast<double>(full.size()));
  }
}

namespace {

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.seed != b.seed || !(a.grid == b.grid) || a.mode != b.mode || a.shapes.size() != b.shapes.size()) return false;
  for (std::size_t n = 0; n < a.shapes.size(); ++n) {
    const ShapeRecord &x = a.shapes[n], &y = b.shapes[n];
    if (x.shape.kind != y.shape.kind || x.shape.params != y.shape.params || x.held_out != y.held_out) return false;
    if (x.complete != y.complete || x.partial != y.partial || x.pairs.size() != y.pairs.size()) return false;
    for (std::size_t m = 0; m < x.pairs.size(); ++m)
      if (x.pairs[m].p != y.pairs[m].p || x.pairs[m].d != y.pairs[m].d) return false;
  }
  if (a.states.size() != b.states.size()) return false;
  for (const auto& [name, s] : a.states) {
    auto it = b.states.find(name);
    if (it == b.states.end() || !(it->second == s)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("dataset persistence") {
  const fs::path dir = fs::temp_directory_path() / "cgca_test_data";
  fs::remove_all(dir);
  SUBCASE("empty dataset") {
    Dataset empty;
    empty.seed = 17;
    save_dataset(empty, dir.string());
    CHECK(same_dataset(load_dataset(dir.string()), empty));
  }
  SUBCASE("random dataset is bit-exact") {
    CorpusSpec spec;
    spec.surface_points = 200;
    spec.query_pairs = 300;
    spec.mode = FieldMode::Unsigned;
    Dataset ds = generate_dataset(spec, 5);
    CHECK(ds.shapes.size() == 15);
    CHECK(ds.split(true).size() == 5);
    SparseState st(3, ds.grid);
    st.set({1, 2, 3}, Eigen::Vector3d(0.1, 1.0 / 3.0, -2e-300));
    ds.states["probe"] = st;
    save_dataset(ds, dir.string());
    CHECK(same_dataset(load_dataset(dir.string()), ds));
    CHECK(same_dataset(generate_dataset(spec, 5), [&] {
      Dataset copy = ds;
      copy.states.clear();
      return copy;
    }()));
  }
  SUBCASE("corrupted magic") {
    save_dataset(Dataset{}, dir.string());
    std::ifstream in(dir / "manifest.txt");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    in.close();
    text.replace(text.find("magic=") + 6, 1, "X");
    std::ofstream(dir / "manifest.txt") << text;
    try {
      load_dataset(dir.string());
      FAIL("expected FormatError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::FormatError);
    }
  }
  SUBCASE("missing directory") {
    try {
      load_dataset((dir / "nowhere").string());
      FAIL("expected IoError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IoError);
    }
  }
  fs::remove_all(dir);
}
