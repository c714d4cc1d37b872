#include "mspc/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mspc/parallel.hpp"
#include "mspc/spatial.hpp"

namespace mspc {

namespace {

constexpr double kEps = 1e-8;

const char* kStatNames[NormStats::kCount] = {"i1", "i2", "i3", "r1", "r2", "r3", "a1",
                                             "a2", "a3", "d1", "d2", "d3", "rn", "nr"};

// Number of spectral channels a config uses (prefix of the fixed order).
int spectral_channels(ChannelSetConfig c) {
    switch (c) {
        case ChannelSetConfig::XYZ: return 0;
        case ChannelSetConfig::Channel1: return 1;
        case ChannelSetConfig::Channels12: return 2;
        case ChannelSetConfig::Channels123:
        case ChannelSetConfig::AllFeatures: return 3;
        default: return 3;  // Only* use all channels of one attribute
    }
}

bool uses_pulse(ChannelSetConfig c) { return c == ChannelSetConfig::AllFeatures; }

// Attribute selector for the Only* configs: -1 means all four attributes.
int only_attribute(ChannelSetConfig c) {
    switch (c) {
        case ChannelSetConfig::OnlyIntensity: return 0;
        case ChannelSetConfig::OnlyReflectance: return 1;
        case ChannelSetConfig::OnlyAmplitude: return 2;
        case ChannelSetConfig::OnlyDeviation: return 3;
        default: return -1;
    }
}

}  // namespace

int feature_dim(ChannelSetConfig config) {
    int attr = only_attribute(config);
    if (attr >= 0) return 3 + kNumChannels;
    return 3 + 4 * spectral_channels(config) + (uses_pulse(config) ? 2 : 0);
}

const char* channel_set_name(ChannelSetConfig config) {
    switch (config) {
        case ChannelSetConfig::XYZ: return "xyz";
        case ChannelSetConfig::Channel1: return "ch1";
        case ChannelSetConfig::Channels12: return "ch12";
        case ChannelSetConfig::Channels123: return "ch123";
        case ChannelSetConfig::AllFeatures: return "all";
        case ChannelSetConfig::OnlyIntensity: return "intensity";
        case ChannelSetConfig::OnlyReflectance: return "reflectance";
        case ChannelSetConfig::OnlyAmplitude: return "amplitude";
        case ChannelSetConfig::OnlyDeviation: return "deviation";
    }
    return "invalid";
}

std::optional<ChannelSetConfig> channel_set_from_name(const std::string& name) {
    for (ChannelSetConfig c :
         {ChannelSetConfig::XYZ, ChannelSetConfig::Channel1, ChannelSetConfig::Channels12,
          ChannelSetConfig::Channels123, ChannelSetConfig::AllFeatures, ChannelSetConfig::OnlyIntensity,
          ChannelSetConfig::OnlyReflectance, ChannelSetConfig::OnlyAmplitude,
          ChannelSetConfig::OnlyDeviation}) {
        if (name == channel_set_name(c)) return c;
    }
    return std::nullopt;
}

NormStats compute_norm_stats(const std::vector<const PointCloud*>& clouds) {
    std::array<double, NormStats::kCount> sum{}, sumsq{};
    std::array<std::uint64_t, NormStats::kCount> count{};

    for (const PointCloud* cloud : clouds) {
        for (std::size_t i = 0; i < cloud->size(); ++i) {
            const std::uint8_t mask = cloud->channel_presence[i];
            for (int c = 0; c < kNumChannels; ++c) {
                if (!(mask & (1u << c))) continue;
                const double vals[4] = {cloud->intensity[c][i], cloud->reflectance[c][i],
                                        cloud->amplitude[c][i], cloud->deviation[c][i]};
                for (int a = 0; a < 4; ++a) {
                    int f = a * kNumChannels + c;
                    sum[f] += vals[a];
                    sumsq[f] += vals[a] * vals[a];
                    ++count[f];
                }
            }
            const double rn = cloud->return_number[i];
            const double nr = cloud->number_of_returns[i];
            sum[12] += rn;
            sumsq[12] += rn * rn;
            ++count[12];
            sum[13] += nr;
            sumsq[13] += nr * nr;
            ++count[13];
        }
    }

    NormStats stats;
    for (int f = 0; f < NormStats::kCount; ++f) {
        if (count[f] == 0) {
            throw std::runtime_error(std::string("compute_norm_stats: feature '") + kStatNames[f] +
                                     "' has no present entries");
        }
        const double n = static_cast<double>(count[f]);
        stats.mean[f] = sum[f] / n;
        double var = sumsq[f] / n - stats.mean[f] * stats.mean[f];
        stats.stddev[f] = std::sqrt(std::max(var, 0.0));
    }
    return stats;
}

std::vector<float> assemble(const PointCloud& cloud, ChannelSetConfig config, const NormStats& stats,
                            std::span<const double> height_above_ground) {
    const std::size_t n = cloud.size();
    if (height_above_ground.size() != n) {
        throw std::invalid_argument("assemble: height vector length mismatch");
    }
    const int dim = feature_dim(config);
    std::vector<float> out(n * static_cast<std::size_t>(dim));
    if (n == 0) return out;

    double cx = 0, cy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cx += cloud.x[i];
        cy += cloud.y[i];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);

    // Feature columns after the 3 coordinates, as (attribute, channel)
    // pairs into the NormStats layout.
    std::vector<int> stat_cols;
    const int attr = only_attribute(config);
    if (attr >= 0) {
        for (int c = 0; c < kNumChannels; ++c) stat_cols.push_back(attr * kNumChannels + c);
    } else {
        const int nch = spectral_channels(config);
        for (int a = 0; a < 4; ++a) {
            for (int c = 0; c < nch; ++c) stat_cols.push_back(a * kNumChannels + c);
        }
        if (uses_pulse(config)) {
            stat_cols.push_back(12);
            stat_cols.push_back(13);
        }
    }
    if (3 + static_cast<int>(stat_cols.size()) != dim) {
        throw std::logic_error("assemble: column bookkeeping mismatch");
    }

    for (std::size_t i = 0; i < n; ++i) {
        float* row = out.data() + i * dim;
        row[0] = static_cast<float>(cloud.x[i] - cx);
        row[1] = static_cast<float>(cloud.y[i] - cy);
        row[2] = static_cast<float>(height_above_ground[i]);
        for (std::size_t k = 0; k < stat_cols.size(); ++k) {
            const int f = stat_cols[k];
            const int a = f / kNumChannels;  // 4 selects pulse features
            const int c = f % kNumChannels;
            double raw;
            bool present = true;
            if (f == 12) {
                raw = cloud.return_number[i];
            } else if (f == 13) {
                raw = cloud.number_of_returns[i];
            } else {
                present = (cloud.channel_presence[i] >> c) & 1u;
                switch (a) {
                    case 0: raw = cloud.intensity[c][i]; break;
                    case 1: raw = cloud.reflectance[c][i]; break;
                    case 2: raw = cloud.amplitude[c][i]; break;
                    default: raw = cloud.deviation[c][i]; break;
                }
            }
            // Missing entries are imputed at the training mean, z-score 0.
            double zscore = present ? (raw - stats.mean[f]) / (stats.stddev[f] + kEps) : 0.0;
            row[3 + k] = static_cast<float>(zscore);
        }
    }
    return out;
}

std::array<double, 3> symmetric_eigenvalues_3x3(const std::array<double, 6>& m) {
    // Jacobi rotations on the full 3x3; plenty for shape features.
    double a[3][3] = {{m[0], m[3], m[4]}, {m[3], m[1], m[5]}, {m[4], m[5], m[2]}};
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
        if (off < 1e-15) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a[p][q]) < 1e-18) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int r = 0; r < 3; ++r) {
                    double arp = a[r][p], arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for (int r = 0; r < 3; ++r) {
                    double apr = a[p][r], aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    std::array<double, 3> ev = {a[0][0], a[1][1], a[2][2]};
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

EigenFeatures eigen_features(const PointCloud& cloud, int k) {
    if (k < 3) throw std::invalid_argument("eigen_features: k must be >= 3");
    const std::size_t n = cloud.size();
    EigenFeatures out;
    out.linearity.resize(n);
    out.planarity.resize(n);
    out.sphericity.resize(n);
    out.surface_variation.resize(n);
    if (n == 0) return out;

    KdTree tree = KdTree::build(cloud);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto nbs = tree.knn({cloud.x[i], cloud.y[i], cloud.z[i]}, static_cast<std::size_t>(k));
            double mx = 0, my = 0, mz = 0;
            for (const auto& nb : nbs) {
                mx += cloud.x[nb.index];
                my += cloud.y[nb.index];
                mz += cloud.z[nb.index];
            }
            const double inv = 1.0 / static_cast<double>(nbs.size());
            mx *= inv;
            my *= inv;
            mz *= inv;
            std::array<double, 6> cov{};  // xx yy zz xy xz yz
            for (const auto& nb : nbs) {
                double dx = cloud.x[nb.index] - mx;
                double dy = cloud.y[nb.index] - my;
                double dz = cloud.z[nb.index] - mz;
                cov[0] += dx * dx;
                cov[1] += dy * dy;
                cov[2] += dz * dz;
                cov[3] += dx * dy;
                cov[4] += dx * dz;
                cov[5] += dy * dz;
            }
            for (double& v : cov) v *= inv;
            auto ev = symmetric_eigenvalues_3x3(cov);
            double l1 = std::max(ev[0], 0.0), l2 = std::max(ev[1], 0.0), l3 = std::max(ev[2], 0.0);
            if (l1 <= kEps * kEps) {
                out.linearity[i] = out.planarity[i] = out.sphericity[i] = out.surface_variation[i] = 0.0f;
                continue;
            }
            out.linearity[i] = static_cast<float>((l1 - l2) / l1);
            out.planarity[i] = static_cast<float>((l2 - l3) / l1);
            out.sphericity[i] = static_cast<float>(l3 / l1);
            out.surface_variation[i] = static_cast<float>(l3 / (l1 + l2 + l3));
        }
    });
    return out;
}

}  // namespace mspc
