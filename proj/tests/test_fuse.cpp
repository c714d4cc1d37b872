#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "mspc/fuse.hpp"

using namespace mspc;

namespace {

/// Single-channel cloud: carries attributes on `channel` only.
PointCloud channel_cloud(std::size_t n, std::uint64_t seed, int channel, double extent = 10.0) {
    PointCloud full = test::random_cloud(n, seed, extent);
    PointCloud out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        MultispectralPoint p = full.point(i);
        for (int c = 0; c < kNumChannels; ++c) {
            if (c == channel) continue;
            p.intensity[c] = kMissingAttribute;
            p.reflectance[c] = kMissingAttribute;
            p.amplitude[c] = kMissingAttribute;
            p.deviation[c] = kMissingAttribute;
        }
        p.channel_presence = static_cast<std::uint8_t>(1u << channel);
        out.push_back(p);
    }
    return out;
}

}  // namespace

TEST_CASE("coincident single points fuse into three fully populated records") {
    std::array<PointCloud, 3> clouds;
    for (int c = 0; c < 3; ++c) {
        clouds[c] = channel_cloud(1, 100 + c, c);
        clouds[c].x[0] = 1.0;
        clouds[c].y[0] = 2.0;
        clouds[c].z[0] = 3.0;
    }
    PointCloud fused = fuse(clouds);
    REQUIRE(fused.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(fused.channel_presence[i] == 0x7);
        for (int c = 0; c < 3; ++c) {
            CHECK(fused.intensity[c][i] == clouds[c].intensity[c][0]);
            CHECK(fused.reflectance[c][i] == clouds[c].reflectance[c][0]);
        }
    }
    CHECK(fusion_completeness(fused) == 1.0);
}

TEST_CASE("no foreign point within the radius leaves the sentinel and a cleared bit") {
    std::array<PointCloud, 3> clouds;
    clouds[0] = channel_cloud(1, 1, 0);
    clouds[1] = channel_cloud(1, 2, 1);
    clouds[2] = channel_cloud(1, 3, 2);
    clouds[0].x[0] = 0.0;
    clouds[1].x[0] = 10.0;
    clouds[2].x[0] = 20.0;
    for (auto& c : clouds) {
        c.y[0] = 0;
        c.z[0] = 0;
    }
    PointCloud fused = fuse(clouds);
    REQUIRE(fused.size() == 3);
    CHECK(fused.channel_presence[0] == 0x1);
    CHECK(fused.intensity[1][0] == kMissingAttribute);
    CHECK(fused.intensity[2][0] == kMissingAttribute);
    CHECK(fusion_completeness(fused) == 0.0);
}

TEST_CASE("empty inputs fuse to an empty cloud") {
    std::array<PointCloud, 3> clouds;
    PointCloud fused = fuse(clouds);
    CHECK(fused.empty());
    CHECK(fusion_completeness(fused) == 0.0);
}

TEST_CASE("fused attributes equal the brute-force nearest-within-radius oracle") {
    std::array<PointCloud, 3> clouds = {channel_cloud(500, 11, 0, 4.0), channel_cloud(500, 12, 1, 4.0),
                                        channel_cloud(500, 13, 2, 4.0)};
    const double radius = 0.25;
    PointCloud fused = fuse(clouds, FusionConfig{radius});
    REQUIRE(fused.size() == 1500);

    std::size_t offset = 0;
    for (int own = 0; own < 3; ++own) {
        for (std::size_t i = 0; i < clouds[own].size(); ++i) {
            const std::size_t o = offset + i;
            // own channel passes through bit-exact
            CHECK(fused.intensity[own][o] == clouds[own].intensity[own][i]);
            CHECK(fused.return_number[o] == clouds[own].return_number[i]);
            CHECK((fused.channel_presence[o] & (1u << own)) != 0);
            for (int foreign = 0; foreign < 3; ++foreign) {
                if (foreign == own) continue;
                // brute-force nearest within radius, ties to lower index
                std::size_t best = static_cast<std::size_t>(-1);
                double best_d = radius;
                for (std::size_t j = 0; j < clouds[foreign].size(); ++j) {
                    double dx = clouds[foreign].x[j] - clouds[own].x[i];
                    double dy = clouds[foreign].y[j] - clouds[own].y[i];
                    double dz = clouds[foreign].z[j] - clouds[own].z[i];
                    double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                    if (d < best_d || (d == best_d && best == static_cast<std::size_t>(-1))) {
                        best_d = d;
                        best = j;
                    }
                }
                if (best == static_cast<std::size_t>(-1)) {
                    CHECK(fused.intensity[foreign][o] == kMissingAttribute);
                    CHECK((fused.channel_presence[o] & (1u << foreign)) == 0);
                } else {
                    CHECK(fused.intensity[foreign][o] == clouds[foreign].intensity[foreign][best]);
                    CHECK(fused.reflectance[foreign][o] == clouds[foreign].reflectance[foreign][best]);
                    CHECK(fused.amplitude[foreign][o] == clouds[foreign].amplitude[foreign][best]);
                    CHECK(fused.deviation[foreign][o] == clouds[foreign].deviation[foreign][best]);
                    CHECK((fused.channel_presence[o] & (1u << foreign)) != 0);
                }
            }
        }
        offset += clouds[own].size();
    }
}

TEST_CASE("swapping channels 2 and 3 swaps the corresponding output columns") {
    std::array<PointCloud, 3> clouds = {channel_cloud(200, 21, 0, 3.0), channel_cloud(200, 22, 1, 3.0),
                                        channel_cloud(200, 23, 2, 3.0)};
    PointCloud fused = fuse(clouds);

    // move cloud 2's attributes into channel-1 slots and vice versa
    std::array<PointCloud, 3> swapped = {clouds[0], clouds[2], clouds[1]};
    auto swap_channel = [](PointCloud& c, int from, int to) {
        c.intensity[to] = std::move(c.intensity[from]);
        c.reflectance[to] = std::move(c.reflectance[from]);
        c.amplitude[to] = std::move(c.amplitude[from]);
        c.deviation[to] = std::move(c.deviation[from]);
        c.intensity[from].assign(c.size(), kMissingAttribute);
        c.reflectance[from].assign(c.size(), kMissingAttribute);
        c.amplitude[from].assign(c.size(), kMissingAttribute);
        c.deviation[from].assign(c.size(), kMissingAttribute);
        for (auto& m : c.channel_presence) m = static_cast<std::uint8_t>(1u << to);
    };
    swap_channel(swapped[1], 2, 1);
    swap_channel(swapped[2], 1, 2);
    PointCloud fused_swapped = fuse(swapped);

    // scanner-0 points sit first in both outputs; their channel 1/2
    // columns must swap and nothing else may change
    for (std::size_t i = 0; i < clouds[0].size(); ++i) {
        CHECK(fused_swapped.intensity[0][i] == fused.intensity[0][i]);
        CHECK(fused_swapped.intensity[1][i] == fused.intensity[2][i]);
        CHECK(fused_swapped.intensity[2][i] == fused.intensity[1][i]);
        CHECK(fused_swapped.deviation[1][i] == fused.deviation[2][i]);
    }
}

TEST_CASE("completeness counts only fully present masks") {
    PointCloud cloud;
    for (int i = 0; i < 4; ++i) {
        MultispectralPoint p;
        p.channel_presence = i == 0 ? 0x7 : 0x3;
        cloud.push_back(p);
    }
    CHECK(fusion_completeness(cloud) == doctest::Approx(0.25));
}

TEST_CASE("fusion completeness on a dense synthetic trio matches a recount") {
    std::array<PointCloud, 3> clouds = {channel_cloud(300, 31, 0, 2.0), channel_cloud(110, 32, 1, 2.0),
                                        channel_cloud(350, 33, 2, 2.0)};
    PointCloud fused = fuse(clouds);
    std::size_t full = 0;
    for (auto m : fused.channel_presence) full += (m == 0x7);
    CHECK(fusion_completeness(fused) == doctest::Approx(static_cast<double>(full) / fused.size()));
}
