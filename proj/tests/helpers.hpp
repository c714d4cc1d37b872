#pragma once

#include <random>

#include "mspc/core.hpp"

namespace mspc::test {

/// Uniform random cloud in [0, extent)^3 with random attributes and labels,
/// all channels present.
inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 10.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.0, extent);
    std::uniform_real_distribution<float> attr(0.0f, 1.0f);
    std::uniform_int_distribution<int> lab(0, kNumClasses - 1);
    std::uniform_int_distribution<int> ret(1, 3);
    PointCloud cloud;
    cloud.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        MultispectralPoint p;
        p.x = pos(rng);
        p.y = pos(rng);
        p.z = pos(rng);
        for (int c = 0; c < kNumChannels; ++c) {
            p.intensity[c] = attr(rng);
            p.reflectance[c] = attr(rng);
            p.amplitude[c] = attr(rng);
            p.deviation[c] = attr(rng);
        }
        p.number_of_returns = static_cast<std::uint8_t>(ret(rng));
        std::uniform_int_distribution<int> rn(1, p.number_of_returns);
        p.return_number = static_cast<std::uint8_t>(rn(rng));
        p.label = static_cast<LandCoverClass>(lab(rng));
        p.channel_presence = 0x7;
        cloud.push_back(p);
    }
    return cloud;
}

inline PointCloud grid_cloud(int nx, int ny, double spacing, double z = 0.0) {
    PointCloud cloud;
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j < ny; ++j) {
            MultispectralPoint p;
            p.x = i * spacing;
            p.y = j * spacing;
            p.z = z;
            p.channel_presence = 0x7;
            p.label = LandCoverClass::Sand;
            cloud.push_back(p);
        }
    }
    return cloud;
}

}  // namespace mspc::test
