#pragma once

#include <array>

#include "mspc/core.hpp"

namespace mspc {

struct FusionConfig {
    double radius = 0.25;
};

/// Merge three per-scanner clouds into one multispectral cloud. The output
/// is the union of all input points in scanner order; each point's foreign
/// channels are copied from the single nearest foreign-scanner point
/// within the radius (ties to the lowest index), or left at the missing
/// sentinel with the presence bit cleared.
PointCloud fuse(const std::array<PointCloud, kNumChannels>& clouds, const FusionConfig& config = {});

/// Fraction of points whose presence mask has all three channel bits set.
double fusion_completeness(const PointCloud& cloud);

}  // namespace mspc
