#include "mspc/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace mspc {

namespace {

constexpr std::uint32_t kLeafSize = 16;

inline double sq(double v) { return v * v; }

}  // namespace

KdTree KdTree::build(const PointCloud& cloud) {
    return build(cloud.x, cloud.y, cloud.z);
}

KdTree KdTree::build(std::span<const double> xs, std::span<const double> ys, std::span<const double> zs) {
    KdTree t;
    const std::size_t n = xs.size();
    t.pts_.resize(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        t.pts_[i * 3 + 0] = xs[i];
        t.pts_[i * 3 + 1] = ys[i];
        t.pts_[i * 3 + 2] = zs[i];
    }
    t.order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.order_[i] = static_cast<std::uint32_t>(i);
    if (n > 0) {
        t.nodes_.reserve(2 * n / kLeafSize + 2);
        t.root_ = t.build_node(0, static_cast<std::uint32_t>(n));
    }
    return t;
}

std::uint32_t KdTree::build_node(std::uint32_t begin, std::uint32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin <= kLeafSize) {
        nodes_.push_back(node);
        return static_cast<std::uint32_t>(nodes_.size() - 1);
    }

    double lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = coord(order_[begin], a);
        hi[a] = lo[a];
    }
    for (std::uint32_t i = begin + 1; i < end; ++i) {
        for (int a = 0; a < 3; ++a) {
            double v = coord(order_[i], a);
            lo[a] = std::min(lo[a], v);
            hi[a] = std::max(hi[a], v);
        }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
        if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    }
    if (hi[axis] - lo[axis] == 0.0) {
        // All points coincident; keep as a leaf regardless of size.
        nodes_.push_back(node);
        return static_cast<std::uint32_t>(nodes_.size() - 1);
    }

    std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                         double ca = coord(a, axis), cb = coord(b, axis);
                         return ca < cb || (ca == cb && a < b);
                     });
    node.axis = axis;
    node.split = coord(order_[mid], axis);

    nodes_.push_back(node);
    std::uint32_t self = static_cast<std::uint32_t>(nodes_.size() - 1);
    std::uint32_t left = build_node(begin, mid);
    std::uint32_t right = build_node(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
    std::vector<Neighbor> out;
    if (k == 0 || size() == 0) return out;
    const double q[3] = {query.x, query.y, query.z};

    // Max-heap of the best k by (squared distance, index); ties resolved
    // toward the lower index so results match the brute-force ordering.
    using Entry = std::pair<double, std::uint32_t>;
    std::priority_queue<Entry> heap;

    auto consider = [&](std::uint32_t idx) {
        double d2 = sq(coord(idx, 0) - q[0]) + sq(coord(idx, 1) - q[1]) + sq(coord(idx, 2) - q[2]);
        if (heap.size() < k) {
            heap.emplace(d2, idx);
        } else if (Entry cand{d2, idx}; cand < heap.top()) {
            heap.pop();
            heap.push(cand);
        }
    };

    auto walk = [&](auto&& self, std::uint32_t ni) -> void {
        const Node& node = nodes_[ni];
        if (node.axis < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) consider(order_[i]);
            return;
        }
        double diff = q[node.axis] - node.split;
        std::uint32_t near = diff < 0 ? node.left : node.right;
        std::uint32_t far = diff < 0 ? node.right : node.left;
        self(self, near);
        if (heap.size() < k || sq(diff) <= heap.top().first) {
            self(self, far);
        }
    };
    walk(walk, root_);

    out.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
        out[i] = {heap.top().second, std::sqrt(heap.top().first)};
        heap.pop();
    }
    return out;
}

std::vector<Neighbor> KdTree::radius_query(const Vec3& query, double radius) const {
    std::vector<Neighbor> out;
    if (size() == 0 || radius < 0) return out;
    const double q[3] = {query.x, query.y, query.z};
    const double r2 = radius * radius;

    auto walk = [&](auto&& self, std::uint32_t ni) -> void {
        const Node& node = nodes_[ni];
        if (node.axis < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                std::uint32_t idx = order_[i];
                double d2 = sq(coord(idx, 0) - q[0]) + sq(coord(idx, 1) - q[1]) + sq(coord(idx, 2) - q[2]);
                if (d2 <= r2) out.push_back({idx, d2});
            }
            return;
        }
        double diff = q[node.axis] - node.split;
        std::uint32_t near = diff < 0 ? node.left : node.right;
        std::uint32_t far = diff < 0 ? node.right : node.left;
        self(self, near);
        if (sq(diff) <= r2) self(self, far);
    };
    walk(walk, root_);

    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    });
    for (auto& nb : out) nb.distance = std::sqrt(nb.distance);
    return out;
}

VoxelKey voxel_key(const Vec3& p, const Vec3& origin, double cell) {
    return {static_cast<std::int64_t>(std::floor((p.x - origin.x) / cell)),
            static_cast<std::int64_t>(std::floor((p.y - origin.y) / cell)),
            static_cast<std::int64_t>(std::floor((p.z - origin.z) / cell))};
}

VoxelGrid voxelize(const PointCloud& cloud, double cell) {
    Vec3 origin;
    if (!cloud.empty()) origin = cloud.bounds().min;
    return voxelize(cloud, cell, origin);
}

VoxelGrid voxelize(const PointCloud& cloud, double cell, const Vec3& origin) {
    return voxelize(cloud.x, cloud.y, cloud.z, cell, origin);
}

VoxelGrid voxelize(std::span<const double> xs, std::span<const double> ys, std::span<const double> zs,
                   double cell, const Vec3& origin) {
    if (cell <= 0.0) throw std::invalid_argument("voxelize: cell size must be positive");
    VoxelGrid grid;
    grid.cell = cell;
    grid.origin = origin;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        grid.cells[voxel_key({xs[i], ys[i], zs[i]}, origin, cell)].push_back(i);
    }
    return grid;
}

}  // namespace mspc
