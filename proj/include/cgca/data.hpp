#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cgca/autoencoder.hpp"
#include "cgca/common.hpp"
#include "cgca/grid.hpp"

namespace cgca {

enum class ShapeKind { Sphere, Box, Torus, TwoBlobs, LineUnion };

inline constexpr ShapeKind kAllShapeKinds[] = {ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Torus,
                                               ShapeKind::TwoBlobs, ShapeKind::LineUnion};

std::string_view to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(std::string_view name);

/// Analytic toy shape. Parameter layouts:
///   sphere     cx cy cz r
///   box        cx cy cz hx hy hz
///   torus      cx cy cz R r axis(0|1|2)
///   two_blobs  c1x c1y c1z r1 c2x c2y c2z r2   (disjoint spheres)
///   line_union r, then ax ay az bx by bz per capsule
struct ToyShape {
  ShapeKind kind = ShapeKind::Sphere;
  Eigen::VectorXd params;

  /// Signed distance, negative inside. Exact for every kind except inside
  /// unions, where it is the usual min bound.
  double distance(const Vec3& p) const;
  double area() const;
};

ToyShape make_sphere(const Vec3& center, double radius);

/// Random instance of `kind` whose bounding radius is about `scale`, centred
/// near the origin.
ToyShape random_shape(ShapeKind kind, double scale, Engine& rng);

/// Area-uniform surface points.
PointList sample_surface(const ToyShape& shape, std::size_t count, Engine& rng);

/// Surface points displaced by isotropic N(0, band_sd^2) noise, with the
/// exact distance at the displaced position (absolute value when unsigned).
std::vector<PointSample> sample_query_pairs(const ToyShape& shape, std::size_t count, double band_sd,
                                            FieldMode mode, Engine& rng);

struct PartialSpec {
  double removal_radius = 0.2;
  double min_rate = 0.5;
  int iterations = 4;
  double noise_sd = 0.0;
};

/// Repeatedly deletes every point within removal_radius of a random
/// survivor. A round that would leave fewer than min_rate * n points is
/// revoked. Survivors are optionally jittered.
PointList make_partial(const PointList& points, const PartialSpec& spec, Engine& rng);

struct ShapeRecord {
  ToyShape shape;
  bool held_out = false;
  PointList complete;
  PointList partial;
  std::vector<PointSample> pairs;
};

struct Dataset {
  std::uint64_t seed = 0;
  GridSpec grid{};
  FieldMode mode = FieldMode::Signed;
  std::vector<ShapeRecord> shapes;
  std::map<std::string, SparseState> states;

  std::vector<std::size_t> split(bool held_out) const;
};

struct CorpusSpec {
  GridSpec grid{};
  FieldMode mode = FieldMode::Signed;
  int train_per_kind = 2;
  int test_per_kind = 1;
  double scale = 0.35;
  std::size_t surface_points = 2048;
  std::size_t query_pairs = 4096;
  double band_sd = 0.03;
  PartialSpec partial{};
};

/// Shapes cycle through every kind; shape n draws from its own stream.
Dataset generate_dataset(const CorpusSpec& spec, std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::string& directory);
Dataset load_dataset(const std::string& directory);

}  // namespace cgca
