#include "mspc/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "mspc/parallel.hpp"
#include "mspc/spatial.hpp"

namespace mspc {

PointCloud downsample(const PointCloud& cloud, double cell) {
    if (cell <= 0.0) throw std::invalid_argument("downsample: cell size must be positive");
    if (cloud.empty()) return {};

    // Snap the grid to an absolute origin: a second pass then sees the
    // same partition and keeps every point, making the operation
    // idempotent (a raw min-corner origin shifts between passes and can
    // merge cells).
    BoundingBox b = cloud.bounds();
    Vec3 origin{std::floor(b.min.x / cell) * cell, std::floor(b.min.y / cell) * cell,
                std::floor(b.min.z / cell) * cell};
    VoxelGrid grid = voxelize(cloud, cell, origin);

    std::vector<std::size_t> keep;
    keep.reserve(grid.cell_count());
    for (const auto& [key, members] : grid.cells) {
        double cx = 0, cy = 0, cz = 0;
        for (std::size_t i : members) {
            cx += cloud.x[i];
            cy += cloud.y[i];
            cz += cloud.z[i];
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        cx *= inv;
        cy *= inv;
        cz *= inv;
        std::size_t best = members[0];
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t i : members) {
            double d2 = (cloud.x[i] - cx) * (cloud.x[i] - cx) + (cloud.y[i] - cy) * (cloud.y[i] - cy) +
                        (cloud.z[i] - cz) * (cloud.z[i] - cz);
            if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                best_d2 = d2;
                best = i;
            }
        }
        keep.push_back(best);
    }
    return cloud.select(keep);
}

SorResult sor_filter(const PointCloud& cloud, const SorParams& params) {
    if (params.k < 1) throw std::invalid_argument("sor_filter: k must be >= 1");
    if (params.multiplier <= 0.0) throw std::invalid_argument("sor_filter: multiplier must be positive");

    const std::size_t n = cloud.size();
    SorResult res;
    if (n <= static_cast<std::size_t>(params.k)) {
        res.kept = cloud;
        return res;
    }

    KdTree tree = KdTree::build(cloud);
    std::vector<double> mean_dist(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto nbs = tree.knn({cloud.x[i], cloud.y[i], cloud.z[i]},
                                static_cast<std::size_t>(params.k) + 1);
            double sum = 0.0;
            int used = 0;
            for (const auto& nb : nbs) {
                if (nb.index == i) continue;  // exclude self
                sum += nb.distance;
                if (++used == params.k) break;
            }
            mean_dist[i] = sum / params.k;
        }
    });

    double mu = 0.0;
    for (double d : mean_dist) mu += d;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double d : mean_dist) var += (d - mu) * (d - mu);
    var /= static_cast<double>(n);
    const double threshold = mu + params.multiplier * std::sqrt(var);

    std::vector<std::size_t> kept_idx;
    kept_idx.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (mean_dist[i] > threshold) {
            res.removed_indices.push_back(i);
        } else {
            kept_idx.push_back(i);
        }
    }
    res.kept = cloud.select(kept_idx);
    return res;
}

namespace {

struct ClothGrid {
    int nx = 0, ny = 0;
    double res = 0.0;
    double x0 = 0.0, y0 = 0.0;
    std::vector<double> z;        // node heights, inverted frame
    std::vector<double> ihv;      // terrain constraint per node, inverted frame
    std::vector<std::uint8_t> movable;

    int idx(int i, int j) const { return j * nx + i; }
};

}  // namespace

CsfResult csf_ground(const PointCloud& cloud, const CsfParams& params) {
    const std::size_t n = cloud.size();
    if (n < 3) throw std::invalid_argument("csf_ground: need at least 3 points");
    if (params.cloth_resolution <= 0 || params.distance_threshold <= 0 || params.time_step <= 0 ||
        params.convergence_eps <= 0 || params.max_iterations <= 0) {
        throw std::invalid_argument("csf_ground: parameters must be positive");
    }
    if (params.rigidness < 1 || params.rigidness > 3) {
        throw std::invalid_argument("csf_ground: rigidness must be in {1,2,3}");
    }

    BoundingBox b = cloud.bounds();
    const double ext_x = b.max.x - b.min.x;
    const double ext_y = b.max.y - b.min.y;
    if (ext_x == 0.0 && ext_y == 0.0) {
        throw std::invalid_argument("csf_ground: degenerate cloud, all points share one xy location");
    }

    ClothGrid g;
    g.res = params.cloth_resolution;
    g.x0 = b.min.x;
    g.y0 = b.min.y;
    g.nx = std::max(2, static_cast<int>(std::ceil(ext_x / g.res)) + 1);
    g.ny = std::max(2, static_cast<int>(std::ceil(ext_y / g.res)) + 1);
    const int nn = g.nx * g.ny;

    // Terrain constraint per node: the highest inverted point (= lowest
    // original point) among points nearest to the node.
    constexpr double kUnset = -std::numeric_limits<double>::infinity();
    g.ihv.assign(nn, kUnset);
    for (std::size_t p = 0; p < n; ++p) {
        int i = std::clamp(static_cast<int>(std::lround((cloud.x[p] - g.x0) / g.res)), 0, g.nx - 1);
        int j = std::clamp(static_cast<int>(std::lround((cloud.y[p] - g.y0) / g.res)), 0, g.ny - 1);
        g.ihv[g.idx(i, j)] = std::max(g.ihv[g.idx(i, j)], -cloud.z[p]);
    }

    // Fill nodes with no points from their nearest filled neighbors so the
    // cloth cannot fall through data gaps; wave-ordered for determinism.
    {
        std::deque<int> frontier;
        std::vector<std::uint8_t> filled(nn, 0);
        for (int k = 0; k < nn; ++k) {
            if (g.ihv[k] != kUnset) {
                filled[k] = 1;
                frontier.push_back(k);
            }
        }
        if (frontier.empty()) throw std::invalid_argument("csf_ground: no usable points");
        while (!frontier.empty()) {
            std::size_t wave = frontier.size();
            std::vector<int> next;
            for (std::size_t w = 0; w < wave; ++w) {
                int k = frontier.front();
                frontier.pop_front();
                int i = k % g.nx, j = k / g.nx;
                const int di[4] = {-1, 1, 0, 0};
                const int dj[4] = {0, 0, -1, 1};
                for (int d = 0; d < 4; ++d) {
                    int ii = i + di[d], jj = j + dj[d];
                    if (ii < 0 || ii >= g.nx || jj < 0 || jj >= g.ny) continue;
                    int kk = g.idx(ii, jj);
                    if (!filled[kk]) {
                        g.ihv[kk] = g.ihv[k];
                        filled[kk] = 1;
                        next.push_back(kk);
                    }
                }
            }
            for (int k : next) frontier.push_back(k);
        }
    }

    double top = *std::max_element(g.ihv.begin(), g.ihv.end());
    g.z.assign(nn, top + 1.0);
    g.movable.assign(nn, 1);

    const double gravity_step = params.time_step * params.time_step;  // g normalized to 1
    std::vector<double> snapshot(nn), relaxed(nn);

    for (int iter = 0; iter < params.max_iterations; ++iter) {
        snapshot = g.z;

        for (int k = 0; k < nn; ++k) {
            if (!g.movable[k]) continue;
            g.z[k] -= gravity_step;
            if (g.z[k] <= g.ihv[k]) {
                g.z[k] = g.ihv[k];
                g.movable[k] = 0;
            }
        }

        for (int pass = 0; pass < params.rigidness; ++pass) {
            relaxed = g.z;
            for (int j = 0; j < g.ny; ++j) {
                for (int i = 0; i < g.nx; ++i) {
                    int k = g.idx(i, j);
                    if (!g.movable[k]) continue;
                    double sum = 0.0;
                    int cnt = 0;
                    if (i > 0) { sum += g.z[g.idx(i - 1, j)]; ++cnt; }
                    if (i + 1 < g.nx) { sum += g.z[g.idx(i + 1, j)]; ++cnt; }
                    if (j > 0) { sum += g.z[g.idx(i, j - 1)]; ++cnt; }
                    if (j + 1 < g.ny) { sum += g.z[g.idx(i, j + 1)]; ++cnt; }
                    relaxed[k] = sum / cnt;
                }
            }
            for (int k = 0; k < nn; ++k) {
                if (!g.movable[k]) continue;
                g.z[k] = relaxed[k];
                if (g.z[k] <= g.ihv[k]) {
                    g.z[k] = g.ihv[k];
                    g.movable[k] = 0;
                }
            }
        }

        double max_disp = 0.0;
        for (int k = 0; k < nn; ++k) max_disp = std::max(max_disp, std::abs(g.z[k] - snapshot[k]));
        if (max_disp < params.convergence_eps) break;
    }

    // Back to the original orientation and classify by vertical distance
    // to the bilinearly interpolated cloth surface.
    CsfResult res;
    res.ground.resize(n);
    res.height_above_cloth.resize(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double fx = std::clamp((cloud.x[p] - g.x0) / g.res, 0.0, static_cast<double>(g.nx - 1));
            double fy = std::clamp((cloud.y[p] - g.y0) / g.res, 0.0, static_cast<double>(g.ny - 1));
            int i0 = std::min(static_cast<int>(fx), g.nx - 2);
            int j0 = std::min(static_cast<int>(fy), g.ny - 2);
            double tx = fx - i0, ty = fy - j0;
            double z00 = g.z[g.idx(i0, j0)], z10 = g.z[g.idx(i0 + 1, j0)];
            double z01 = g.z[g.idx(i0, j0 + 1)], z11 = g.z[g.idx(i0 + 1, j0 + 1)];
            double cloth_inv = (1 - tx) * (1 - ty) * z00 + tx * (1 - ty) * z10 +
                               (1 - tx) * ty * z01 + tx * ty * z11;
            double cloth = -cloth_inv;
            double h = cloud.z[p] - cloth;
            res.height_above_cloth[p] = h;
            res.ground[p] = std::abs(h) <= params.distance_threshold ? 1 : 0;
        }
    });
    return res;
}

}  // namespace mspc
