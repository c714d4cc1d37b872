#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mspc/core.hpp"

namespace mspc {

/// Model input configurations: the incremental channel sets plus the
/// single-feature runs (each spectral feature from all three scanners,
/// with geometry).
enum class ChannelSetConfig {
    XYZ,
    Channel1,
    Channels12,
    Channels123,
    AllFeatures,
    OnlyIntensity,
    OnlyReflectance,
    OnlyAmplitude,
    OnlyDeviation,
};

int feature_dim(ChannelSetConfig config);
const char* channel_set_name(ChannelSetConfig config);
std::optional<ChannelSetConfig> channel_set_from_name(const std::string& name);

/// Per-feature mean/std for the 12 spectral and 2 pulse columns, computed
/// over present (non-sentinel) entries of the training split only.
/// Height-normalized z and centered xy are not z-scored.
struct NormStats {
    static constexpr int kCount = 14;  // i1..i3 r1..r3 a1..a3 d1..d3 rn nr
    std::array<double, kCount> mean{};
    std::array<double, kCount> stddev{};
};

NormStats compute_norm_stats(const std::vector<const PointCloud*>& clouds);

/// Row-major n x dim feature matrix. Column order: centered x, centered y,
/// height above ground, then the configured subset of
/// (intensity, reflectance, amplitude, deviation) x channels, then pulse
/// counts. Spectral and pulse entries are z-scored; absent channels are
/// imputed at the training mean (z-score 0).
std::vector<float> assemble(const PointCloud& cloud, ChannelSetConfig config, const NormStats& stats,
                            std::span<const double> height_above_ground);

struct EigenFeatures {
    std::vector<float> linearity;
    std::vector<float> planarity;
    std::vector<float> sphericity;
    std::vector<float> surface_variation;
};

/// Weinmann-style shape features from the eigenvalues of each point's
/// k-neighborhood covariance (neighborhood includes the point itself).
EigenFeatures eigen_features(const PointCloud& cloud, int k);

/// Eigenvalues of a symmetric 3x3 matrix, descending. Exposed for reuse by
/// the synthetic-scene tooling and tests.
std::array<double, 3> symmetric_eigenvalues_3x3(const std::array<double, 6>& m);  // xx,yy,zz,xy,xz,yz

}  // namespace mspc
