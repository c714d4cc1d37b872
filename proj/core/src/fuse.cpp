#include "mspc/fuse.hpp"

#include <stdexcept>

#include "mspc/parallel.hpp"
#include "mspc/spatial.hpp"

namespace mspc {

namespace {

// Nearest neighbor within radius; ties by lower index. Returns npos when
// nothing is in range.
std::size_t nearest_within(const KdTree& tree, const Vec3& q, double radius) {
    auto nbs = tree.knn(q, 1);
    if (nbs.empty() || nbs[0].distance > radius) return static_cast<std::size_t>(-1);
    // knn(k=1) already breaks distance ties toward the lower index.
    return nbs[0].index;
}

}  // namespace

PointCloud fuse(const std::array<PointCloud, kNumChannels>& clouds, const FusionConfig& config) {
    if (config.radius <= 0.0) throw std::invalid_argument("fuse: radius must be positive");

    std::array<KdTree, kNumChannels> trees;
    for (int c = 0; c < kNumChannels; ++c) trees[c] = KdTree::build(clouds[c]);

    PointCloud out;
    std::size_t total = 0;
    for (const auto& c : clouds) total += c.size();
    out.reserve(total);

    for (int own = 0; own < kNumChannels; ++own) {
        const PointCloud& src = clouds[own];
        const std::size_t base = out.size();
        out.append(src);
        parallel_for(src.size(), [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                const std::size_t o = base + i;
                std::uint8_t mask = static_cast<std::uint8_t>(1u << own);
                for (int foreign = 0; foreign < kNumChannels; ++foreign) {
                    if (foreign == own) continue;
                    std::size_t j = nearest_within(trees[foreign], {src.x[i], src.y[i], src.z[i]},
                                                   config.radius);
                    if (j == static_cast<std::size_t>(-1)) {
                        out.intensity[foreign][o] = kMissingAttribute;
                        out.reflectance[foreign][o] = kMissingAttribute;
                        out.amplitude[foreign][o] = kMissingAttribute;
                        out.deviation[foreign][o] = kMissingAttribute;
                    } else {
                        out.intensity[foreign][o] = clouds[foreign].intensity[foreign][j];
                        out.reflectance[foreign][o] = clouds[foreign].reflectance[foreign][j];
                        out.amplitude[foreign][o] = clouds[foreign].amplitude[foreign][j];
                        out.deviation[foreign][o] = clouds[foreign].deviation[foreign][j];
                        mask |= static_cast<std::uint8_t>(1u << foreign);
                    }
                }
                out.channel_presence[o] = mask;
            }
        });
    }
    return out;
}

double fusion_completeness(const PointCloud& cloud) {
    if (cloud.empty()) return 0.0;
    std::size_t full = 0;
    for (std::uint8_t m : cloud.channel_presence) {
        if ((m & 0x7u) == 0x7u) ++full;
    }
    return static_cast<double>(full) / static_cast<double>(cloud.size());
}

}  // namespace mspc
