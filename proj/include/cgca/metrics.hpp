#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cgca/common.hpp"

namespace cgca {

template <typename Scalar>
using Point3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Cloud = std::vector<Point3<Scalar>>;

using PointCloud = Cloud<double>;

/// Uniform bucket grid for exact nearest-neighbour queries.
template <typename Scalar>
class BucketIndex {
 public:
  explicit BucketIndex(std::span<const Point3<Scalar>> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) fail(ErrorCode::EmptyCloud, "cannot index an empty cloud");
    lo_ = points_.front();
    Point3<Scalar> hi = lo_;
    for (const auto& p : points_) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Point3<Scalar> extent = hi - lo_;
    const Scalar largest = std::max(extent.maxCoeff(), Scalar(1e-12));
    const double target = std::cbrt(static_cast<double>(points_.size()));
    cell_ = std::max(largest / static_cast<Scalar>(std::max(1.0, target)), Scalar(1e-12));
    for (int a = 0; a < 3; ++a) dims_[a] = static_cast<int>(std::floor(extent[a] / cell_)) + 1;
    offsets_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2] + 1, 0);
    std::vector<std::size_t> slot(points_.size());
    for (std::size_t n = 0; n < points_.size(); ++n) {
      slot[n] = flat(cell_of(points_[n]));
      ++offsets_[slot[n] + 1];
    }
    for (std::size_t c = 1; c < offsets_.size(); ++c) offsets_[c] += offsets_[c - 1];
    order_.resize(points_.size());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t n = 0; n < points_.size(); ++n) order_[fill[slot[n]]++] = n;
  }

  /// Euclidean distance from q to its nearest indexed point.
  Scalar nearest_distance(const Point3<Scalar>& q) const {
    // Queries outside the indexed box start from the cell holding their
    // projection onto it; a cell k rings away is still >= (k-1)*cell_ from q.
    const std::array<int, 3> home = cell_of(q);
    Scalar best2 = std::numeric_limits<Scalar>::infinity();
    int reach = 0;
    for (int a = 0; a < 3; ++a) reach = std::max({reach, home[a], dims_[a] - 1 - home[a]});
    for (int ring = 0; ring <= reach; ++ring) {
      scan_ring(home, ring, q, best2);
      const Scalar bound = static_cast<Scalar>(ring) * cell_;
      if (best2 <= bound * bound) break;
    }
    return std::sqrt(best2);
  }

 private:
  std::array<int, 3> cell_of(const Point3<Scalar>& p) const {
    std::array<int, 3> c;
    for (int a = 0; a < 3; ++a) {
      const Scalar u = std::floor((p[a] - lo_[a]) / cell_);
      c[a] = static_cast<int>(std::clamp(u, Scalar(0), static_cast<Scalar>(dims_[a] - 1)));
    }
    return c;
  }
  std::size_t flat(const std::array<int, 3>& c) const {
    return (static_cast<std::size_t>(c[0]) * dims_[1] + c[1]) * dims_[2] + c[2];
  }

  void scan_ring(const std::array<int, 3>& home, int ring, const Point3<Scalar>& q, Scalar& best2) const {
    const int x0 = std::max(home[0] - ring, 0), x1 = std::min(home[0] + ring, dims_[0] - 1);
    const int y0 = std::max(home[1] - ring, 0), y1 = std::min(home[1] + ring, dims_[1] - 1);
    const int z0 = std::max(home[2] - ring, 0), z1 = std::min(home[2] + ring, dims_[2] - 1);
    for (int x = x0; x <= x1; ++x)
      for (int y = y0; y <= y1; ++y)
        for (int z = z0; z <= z1; ++z) {
          const int cheb = std::max({std::abs(x - home[0]), std::abs(y - home[1]), std::abs(z - home[2])});
          if (cheb != ring) continue;
          const std::size_t c = flat({x, y, z});
          for (std::size_t s = offsets_[c]; s < offsets_[c + 1]; ++s) {
            best2 = std::min(best2, (points_[order_[s]] - q).squaredNorm());
          }
        }
  }

  std::vector<Point3<Scalar>> points_;
  Point3<Scalar> lo_;
  Scalar cell_{};
  std::array<int, 3> dims_{};
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> order_;
};

/// Distance from every point of a to its nearest point of b.
template <typename Scalar>
std::vector<Scalar> nearest_distances(std::span<const Point3<Scalar>> a, std::span<const Point3<Scalar>> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptyCloud, "nearest_distances needs non-empty clouds");
  const BucketIndex<Scalar> index(b);
  std::vector<Scalar> out;
  out.reserve(a.size());
  for (const auto& p : a) out.push_back(index.nearest_distance(p));
  return out;
}

template <typename Scalar>
Scalar directed_mean_distance(std::span<const Point3<Scalar>> a, std::span<const Point3<Scalar>> b) {
  Scalar sum = 0;
  for (Scalar d : nearest_distances(a, b)) sum += d;
  return sum / static_cast<Scalar>(a.size());
}

/// Symmetric Chamfer-L1: half the sum of the two mean nearest-neighbour distances.
template <typename Scalar>
Scalar chamfer(std::span<const Point3<Scalar>> a, std::span<const Point3<Scalar>> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptyCloud, "chamfer needs non-empty clouds");
  return Scalar(0.5) * (directed_mean_distance(a, b) + directed_mean_distance(b, a));
}

/// Unidirectional Hausdorff distance from the partial input to the completion.
template <typename Scalar>
Scalar uhd(std::span<const Point3<Scalar>> partial, std::span<const Point3<Scalar>> completion) {
  if (partial.empty() || completion.empty()) fail(ErrorCode::EmptyCloud, "uhd needs non-empty clouds");
  Scalar worst = 0;
  for (Scalar d : nearest_distances(partial, completion)) worst = std::max(worst, d);
  return worst;
}

/// Mean Chamfer distance over unordered pairs of completions.
template <typename Scalar>
Scalar tmd(std::span<const Cloud<Scalar>> completions) {
  if (completions.size() < 2) fail(ErrorCode::NeedTwo, "tmd needs at least two completions");
  Scalar sum = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < completions.size(); ++i)
    for (std::size_t j = i + 1; j < completions.size(); ++j) {
      sum += chamfer<Scalar>(completions[i], completions[j]);
      ++pairs;
    }
  return sum / static_cast<Scalar>(pairs);
}

/// Mean over inputs of the best Chamfer distance among that input's completions.
template <typename Scalar>
Scalar mmd(std::span<const std::vector<Cloud<Scalar>>> completions, std::span<const Cloud<Scalar>> ground_truth) {
  if (completions.size() != ground_truth.size() || completions.empty()) {
    fail(ErrorCode::Misaligned, "mmd needs one completion set per ground truth");
  }
  Scalar sum = 0;
  for (std::size_t n = 0; n < completions.size(); ++n) {
    if (completions[n].empty()) fail(ErrorCode::Misaligned, "input without completions");
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (const auto& c : completions[n]) best = std::min(best, chamfer<Scalar>(c, ground_truth[n]));
    sum += best;
  }
  return sum / static_cast<Scalar>(completions.size());
}

inline double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer<double>(a, b); }
inline double uhd(const PointCloud& partial, const PointCloud& completion) {
  return uhd<double>(partial, completion);
}
inline double tmd(const std::vector<PointCloud>& completions) { return tmd<double>(completions); }
inline double mmd(const std::vector<std::vector<PointCloud>>& completions, const std::vector<PointCloud>& truth) {
  return mmd<double>(completions, truth);
}

}  // namespace cgca
