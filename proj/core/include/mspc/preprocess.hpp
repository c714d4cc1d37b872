#pragma once

#include <vector>

#include "mspc/core.hpp"

namespace mspc {

struct SorParams {
    int k = 10;
    double multiplier = 10.0;
};

struct CsfParams {
    double cloth_resolution = 1.0;
    double distance_threshold = 1.5;
    double time_step = 0.65;
    int rigidness = 1;  // relaxation passes per gravity step, in {1,2,3}
    int max_iterations = 500;
    double convergence_eps = 0.005;
};

/// Voxel downsample: at most one point per occupied cell, keeping the
/// original member nearest the cell's member centroid (ties to the lowest
/// index). Output order is ascending cell key. The grid is anchored to an
/// absolute origin (min corner snapped to a cell multiple) so the
/// operation is idempotent.
PointCloud downsample(const PointCloud& cloud, double cell = 0.02);

struct SorResult {
    PointCloud kept;
    std::vector<std::size_t> removed_indices;
};

/// Statistical outlier removal. d_i = mean distance of point i to its k
/// nearest neighbors (self excluded); removes points with
/// d_i > mean + multiplier * std over all d_i. Clouds with n <= k are
/// returned unchanged.
SorResult sor_filter(const PointCloud& cloud, const SorParams& params = {});

struct CsfResult {
    std::vector<std::uint8_t> ground;         // 1 = ground
    std::vector<double> height_above_cloth;   // z - interpolated cloth surface
};

/// Cloth simulation ground filter: a grid cloth settles onto the
/// z-inverted cloud; points within distance_threshold (vertically) of the
/// re-inverted cloth surface are ground.
CsfResult csf_ground(const PointCloud& cloud, const CsfParams& params = {});

}  // namespace mspc
