#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "mspc/core.hpp"

namespace mspc {

struct Neighbor {
    std::size_t index;
    double distance;  // Euclidean
};

/// Balanced 3-d tree over point indices. Split axis is the one with the
/// largest spread, split point the median. Immutable after build;
/// concurrent read-only queries are fine.
class KdTree {
  public:
    KdTree() = default;
    static KdTree build(const PointCloud& cloud);
    static KdTree build(std::span<const double> xs, std::span<const double> ys, std::span<const double> zs);

    /// min(k, n) nearest neighbors, ascending distance, ties by lower index.
    std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

    /// All points with distance <= radius, ascending distance.
    std::vector<Neighbor> radius_query(const Vec3& query, double radius) const;

    std::size_t size() const { return pts_.size() / 3; }

  private:
    struct Node {
        double split = 0.0;
        std::int32_t axis = -1;  // -1 marks a leaf
        std::uint32_t left = 0, right = 0;
        std::uint32_t begin = 0, end = 0;  // leaf range into order_
    };

    std::uint32_t build_node(std::uint32_t begin, std::uint32_t end);
    double coord(std::size_t point, int axis) const { return pts_[point * 3 + axis]; }

    std::vector<double> pts_;          // xyz interleaved
    std::vector<std::uint32_t> order_; // point indices, permuted by build
    std::vector<Node> nodes_;
    std::uint32_t root_ = 0;
};

struct VoxelKey {
    std::int64_t x, y, z;
    auto operator<=>(const VoxelKey&) const = default;
};

/// Partition of point indices into cells of side `cell`, anchored at
/// `origin`. Cells are ordered by key (lexicographic x,y,z).
struct VoxelGrid {
    double cell = 0.0;
    Vec3 origin;
    std::map<VoxelKey, std::vector<std::size_t>> cells;

    std::size_t cell_count() const { return cells.size(); }
};

VoxelKey voxel_key(const Vec3& p, const Vec3& origin, double cell);

/// Default origin is the cloud's min corner.
VoxelGrid voxelize(const PointCloud& cloud, double cell);
VoxelGrid voxelize(const PointCloud& cloud, double cell, const Vec3& origin);
VoxelGrid voxelize(std::span<const double> xs, std::span<const double> ys, std::span<const double> zs,
                   double cell, const Vec3& origin);

}  // namespace mspc
