#include "mspc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mspc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d4d049bb133111ULL;
    return x ^ (x >> 31);
}

double phase_from_seed(std::uint64_t seed, int slot) {
    return 2.0 * std::numbers::pi *
           static_cast<double>(splitmix64(seed * 6364136223846793005ULL + slot) % 100000) / 100000.0;
}

double channel_centerline(const SceneSpec& spec, double x) {
    return spec.extent_y / 2.0 +
           spec.channel_amplitude *
               std::sin(2.0 * std::numbers::pi * x / spec.channel_wavelength + phase_from_seed(spec.seed, 0));
}

/// Distance measure used for both the terrain carve and the class bands.
double channel_distance(const SceneSpec& spec, double x, double y) {
    return std::abs(y - channel_centerline(spec, x));
}

constexpr double kFlatHalfwidth = 4.0;  // flat channel bottom half-width, meters

// Band order around the channel, inner to outer. The forest band carries
// both high vegetation and forest floor.
enum Band { kBandWater = 0, kBandSand, kBandGravel, kBandLowVeg, kBandForest, kBandCount };

struct Layout {
    std::array<double, kBandCount - 1> thresholds;  // outer edge of each band but the last

    int band(double d) const {
        for (int b = 0; b + 1 < kBandCount; ++b) {
            if (d < thresholds[b]) return b;
        }
        return kBandForest;
    }
};

double total_density(const SceneSpec& spec) {
    double rho = 0;
    for (int s = 0; s < kNumChannels; ++s) rho += spec.effective_density(s);
    return rho;
}

/// Band thresholds from target label fractions: each band's area is the
/// target fraction divided by its labeled-point yield per square meter,
/// and thresholds are the matching quantiles of the channel-distance
/// distribution (estimated by seeded Monte Carlo).
Layout compute_layout(const SceneSpec& spec) {
    const double rho = total_density(spec);
    const double water_rate =
        spec.water_foreign_density_scale * (spec.effective_density(0) + spec.effective_density(1)) +
        spec.effective_density(2);
    const auto& f = spec.class_fractions;
    std::array<double, kBandCount> area;
    area[kBandWater] = f[static_cast<int>(LandCoverClass::Water)] / water_rate;
    area[kBandSand] = f[static_cast<int>(LandCoverClass::Sand)] / rho;
    area[kBandGravel] = f[static_cast<int>(LandCoverClass::Gravel)] / rho;
    area[kBandLowVeg] = f[static_cast<int>(LandCoverClass::LowVegetation)] / rho;
    const double forest_rate = rho * (1.0 + spec.mid_canopy_prob + spec.ground_return_prob);
    area[kBandForest] = (f[static_cast<int>(LandCoverClass::HighVegetation)] +
                         f[static_cast<int>(LandCoverClass::ForestFloor)]) /
                        forest_rate;
    double area_sum = 0;
    for (double a : area) area_sum += a;
    if (area_sum <= 0) throw std::invalid_argument("generate: class fractions are all zero");

    constexpr std::size_t kSamples = 200000;
    std::mt19937_64 rng(splitmix64(spec.seed ^ 0x1a2b3c4dULL));
    std::uniform_real_distribution<double> ux(0.0, spec.extent_x), uy(0.0, spec.extent_y);
    std::vector<double> dist(kSamples);
    for (double& d : dist) d = channel_distance(spec, ux(rng), uy(rng));
    std::sort(dist.begin(), dist.end());

    Layout layout;
    double cum = 0;
    for (int b = 0; b + 1 < kBandCount; ++b) {
        cum += area[b] / area_sum;
        auto idx = static_cast<std::size_t>(std::min(cum, 1.0) * (kSamples - 1));
        layout.thresholds[b] = dist[idx];
    }
    return layout;
}

float draw_attribute(const SpectralSignature& sig, int attribute, int channel, double gain,
                     std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    double v = static_cast<double>(sig.mean[attribute][channel]) * gain +
               static_cast<double>(sig.stddev[attribute][channel]) * noise(rng);
    return static_cast<float>(std::max(v, 0.0));
}

}  // namespace

void SceneSpec::validate() const {
    if (extent_x <= 0 || extent_y <= 0) throw std::invalid_argument("SceneSpec: extent must be positive");
    double sum = 0;
    for (double f : class_fractions) {
        if (f < 0) throw std::invalid_argument("SceneSpec: class fractions must be non-negative");
        sum += f;
    }
    if (sum > 1.0 + 1e-9) throw std::invalid_argument("SceneSpec: class fractions sum above 1");
    for (int s = 0; s < kNumChannels; ++s) {
        if (effective_density(s) <= 0) throw std::invalid_argument("SceneSpec: densities must be positive");
    }
    for (const auto& sig : signatures) {
        for (const auto& stds : sig.stddev) {
            for (float v : stds) {
                if (v < 0) throw std::invalid_argument("SceneSpec: signature stddev must be >= 0");
            }
        }
    }
    if (label_fraction <= 0 || label_fraction > 1) {
        throw std::invalid_argument("SceneSpec: label_fraction must be in (0, 1]");
    }
    if (mid_canopy_prob < 0 || mid_canopy_prob > 1 || ground_return_prob < 0 || ground_return_prob > 1) {
        throw std::invalid_argument("SceneSpec: return probabilities must be in [0, 1]");
    }
}

double terrain_height(const SceneSpec& spec, double x, double y) {
    const double p1 = phase_from_seed(spec.seed, 1);
    const double p2 = phase_from_seed(spec.seed, 2);
    const double p3 = phase_from_seed(spec.seed, 3);
    const double tau = 2.0 * std::numbers::pi;
    const double lx = std::max(spec.extent_x, 1.0);
    const double ly = std::max(spec.extent_y, 1.0);
    double base = spec.terrain_roughness *
                  (0.5 * std::sin(tau * x / (0.43 * lx) + p1) + 0.3 * std::sin(tau * y / (0.29 * ly) + p2) +
                   0.2 * std::sin(tau * (x + y) / (0.17 * (lx + ly)) + p3));
    // channel carve: flat bottom, banks rising at the configured slope
    const double d = channel_distance(spec, x, y);
    const double bank_w = spec.channel_depth / std::tan(spec.bank_slope_deg * std::numbers::pi / 180.0);
    double carve = 0.0;
    if (d < kFlatHalfwidth) {
        carve = spec.channel_depth;
    } else if (d < kFlatHalfwidth + bank_w) {
        carve = spec.channel_depth * (1.0 - (d - kFlatHalfwidth) / bank_w);
    }
    return base - carve;
}

std::array<SpectralSignature, kNumClasses> default_signatures() {
    auto sig = [](std::array<float, 3> i, std::array<float, 3> r, std::array<float, 3> a,
                  std::array<float, 3> d, float si, float sother) {
        SpectralSignature s;
        s.mean = {i, r, a, d};
        s.stddev = {std::array<float, 3>{si, si, si}, {si, si, si}, {sother, sother, sother},
                    {sother, sother, sother}};
        return s;
    };
    std::array<SpectralSignature, kNumClasses> out;
    // channel order: 1550 nm, 905 nm, 532 nm
    out[static_cast<int>(LandCoverClass::Sand)] =
        sig({0.60f, 0.62f, 0.55f}, {0.55f, 0.58f, 0.50f}, {0.50f, 0.50f, 0.50f}, {0.40f, 0.40f, 0.41f},
            0.10f, 0.08f);
    out[static_cast<int>(LandCoverClass::Gravel)] =
        sig({0.45f, 0.40f, 0.42f}, {0.40f, 0.37f, 0.38f}, {0.48f, 0.49f, 0.50f}, {0.42f, 0.42f, 0.43f},
            0.10f, 0.08f);
    out[static_cast<int>(LandCoverClass::HighVegetation)] =
        sig({0.78f, 0.60f, 0.35f}, {0.72f, 0.56f, 0.32f}, {0.52f, 0.51f, 0.49f}, {0.60f, 0.58f, 0.57f},
            0.08f, 0.08f);
    out[static_cast<int>(LandCoverClass::LowVegetation)] =
        sig({0.72f, 0.54f, 0.37f}, {0.66f, 0.50f, 0.34f}, {0.51f, 0.50f, 0.50f}, {0.52f, 0.51f, 0.50f},
            0.08f, 0.08f);
    out[static_cast<int>(LandCoverClass::ForestFloor)] =
        sig({0.70f, 0.52f, 0.36f}, {0.64f, 0.48f, 0.33f}, {0.50f, 0.50f, 0.49f}, {0.50f, 0.49f, 0.48f},
            0.08f, 0.08f);
    // water: 1550 nm strongly absorbed, 532 nm retained
    out[static_cast<int>(LandCoverClass::Water)] =
        sig({0.05f, 0.15f, 0.50f}, {0.04f, 0.12f, 0.45f}, {0.35f, 0.40f, 0.48f}, {0.48f, 0.47f, 0.50f},
            0.08f, 0.08f);
    return out;
}

SceneSpec preset_scene(const std::string& name) {
    SceneSpec spec;
    spec.signatures = default_signatures();
    auto set_fractions = [&](double sand, double gravel, double hv, double lv, double ff, double water) {
        spec.class_fractions[static_cast<int>(LandCoverClass::Sand)] = sand;
        spec.class_fractions[static_cast<int>(LandCoverClass::Gravel)] = gravel;
        spec.class_fractions[static_cast<int>(LandCoverClass::HighVegetation)] = hv;
        spec.class_fractions[static_cast<int>(LandCoverClass::LowVegetation)] = lv;
        spec.class_fractions[static_cast<int>(LandCoverClass::ForestFloor)] = ff;
        spec.class_fractions[static_cast<int>(LandCoverClass::Water)] = water;
        // align the canopy ground-return rate with the requested
        // forest-floor : high-vegetation ratio
        spec.ground_return_prob = std::clamp(ff / hv * (1.0 + spec.mid_canopy_prob), 0.0, 0.95);
    };
    if (name == "ns-like") {
        set_fractions(0.005, 0.101, 0.596, 0.053, 0.116, 0.129);
        spec.site_gain = {0.88, 0.88, 0.88};
    } else if (name == "hn-like") {
        set_fractions(0.323, 0.077, 0.352, 0.033, 0.052, 0.162);
        spec.site_gain = {1.12, 1.12, 1.12};
        spec.label_fraction = 0.6;  // sparsely annotated site
    } else if (name == "jm-like") {
        set_fractions(0.302, 0.118, 0.258, 0.130, 0.094, 0.098);
        spec.site_gain = {1.0, 1.0, 1.0};
    } else {
        throw std::invalid_argument("preset_scene: unknown preset '" + name +
                                    "' (expected ns-like, hn-like or jm-like)");
    }
    return spec;
}

std::vector<std::string> preset_names() { return {"ns-like", "hn-like", "jm-like"}; }

SynthScene generate(const SceneSpec& spec) {
    spec.validate();
    const Layout layout = compute_layout(spec);
    SynthScene scene;

    for (int s = 0; s < kNumChannels; ++s) {
        PointCloud& cloud = scene.scanner_clouds[s];
        auto& mask = scene.scanner_terrain_mask[s];
        std::mt19937_64 rng(splitmix64(spec.seed * kNumChannels + 17 * s + 101));
        std::uniform_real_distribution<double> ux(0.0, spec.extent_x), uy(0.0, spec.extent_y);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> surface_noise(0.0, 0.02);

        const auto pulses =
            static_cast<std::size_t>(std::llround(spec.effective_density(s) * spec.extent_x * spec.extent_y));
        cloud.reserve(pulses + pulses / 2);

        auto emit = [&](double x, double y, double z, LandCoverClass cls, int rn, int nr) {
            MultispectralPoint p;
            p.x = x;
            p.y = y;
            p.z = z;
            const auto& sig = spec.signatures[static_cast<int>(cls)];
            for (int attr = 0; attr < 4; ++attr) {
                const double gain = attr < 2 ? spec.site_gain[s] : 1.0;
                float v = draw_attribute(sig, attr, s, gain, rng);
                switch (attr) {
                    case 0: p.intensity[s] = v; break;
                    case 1: p.reflectance[s] = v; break;
                    case 2: p.amplitude[s] = v; break;
                    default: p.deviation[s] = v; break;
                }
            }
            p.return_number = static_cast<std::uint8_t>(rn);
            p.number_of_returns = static_cast<std::uint8_t>(nr);
            p.channel_presence = static_cast<std::uint8_t>(1u << s);
            p.label = u01(rng) < spec.label_fraction ? cls : LandCoverClass::Unlabeled;
            cloud.push_back(p);
            const double terrain = terrain_height(spec, x, y);
            mask.push_back(z - terrain < 0.1 ? 1 : 0);
        };

        for (std::size_t pulse = 0; pulse < pulses; ++pulse) {
            const double x = ux(rng);
            const double y = uy(rng);
            const double terrain = terrain_height(spec, x, y);
            const int band = layout.band(channel_distance(spec, x, y));
            switch (band) {
                case kBandWater:
                    if (s < 2 && u01(rng) >= spec.water_foreign_density_scale) break;
                    emit(x, y, terrain + surface_noise(rng), LandCoverClass::Water, 1, 1);
                    break;
                case kBandSand:
                    emit(x, y, terrain + surface_noise(rng), LandCoverClass::Sand, 1, 1);
                    break;
                case kBandGravel:
                    emit(x, y, terrain + surface_noise(rng), LandCoverClass::Gravel, 1, 1);
                    break;
                case kBandLowVeg: {
                    std::uniform_real_distribution<double> h(spec.low_veg_height_min,
                                                             spec.low_veg_height_max);
                    emit(x, y, terrain + h(rng), LandCoverClass::LowVegetation, 1, 1);
                    break;
                }
                default: {  // forest: multi-return pulse
                    std::uniform_real_distribution<double> ch(spec.canopy_height_min,
                                                              spec.canopy_height_max);
                    const double canopy = ch(rng);
                    const bool mid = u01(rng) < spec.mid_canopy_prob;
                    const bool ground = u01(rng) < spec.ground_return_prob;
                    const int nr = 1 + (mid ? 1 : 0) + (ground ? 1 : 0);
                    int rn = 1;
                    emit(x, y, terrain + canopy, LandCoverClass::HighVegetation, rn++, nr);
                    if (mid) {
                        std::uniform_real_distribution<double> frac(0.3, 0.9);
                        emit(x, y, terrain + frac(rng) * canopy, LandCoverClass::HighVegetation, rn++, nr);
                    }
                    if (ground) {
                        emit(x, y, terrain + surface_noise(rng), LandCoverClass::ForestFloor, rn++, nr);
                    }
                    break;
                }
            }
        }
    }

    scene.fused = fuse(scene.scanner_clouds);
    for (int s = 0; s < kNumChannels; ++s) {
        scene.fused_terrain_mask.insert(scene.fused_terrain_mask.end(),
                                        scene.scanner_terrain_mask[s].begin(),
                                        scene.scanner_terrain_mask[s].end());
    }
    return scene;
}

namespace {

double bhattacharyya_1d(double m1, double s1, double m2, double s2) {
    const double v1 = std::max(s1, 1e-6) * std::max(s1, 1e-6);
    const double v2 = std::max(s2, 1e-6) * std::max(s2, 1e-6);
    return 0.25 * (m1 - m2) * (m1 - m2) / (v1 + v2) + 0.5 * std::log((v1 + v2) / (2.0 * std::sqrt(v1 * v2)));
}

}  // namespace

std::array<std::array<double, kNumClasses>, kNumClasses> spectral_separability_attribute(
    const SceneSpec& spec, int attribute) {
    if (attribute < 0 || attribute > 3) throw std::invalid_argument("attribute must be in [0, 3]");
    std::array<std::array<double, kNumClasses>, kNumClasses> out{};
    for (int a = 0; a < kNumClasses; ++a) {
        for (int b = 0; b < kNumClasses; ++b) {
            if (a == b) continue;
            double d = 0;
            for (int c = 0; c < kNumChannels; ++c) {
                d += bhattacharyya_1d(spec.signatures[a].mean[attribute][c],
                                      spec.signatures[a].stddev[attribute][c],
                                      spec.signatures[b].mean[attribute][c],
                                      spec.signatures[b].stddev[attribute][c]);
            }
            out[a][b] = d;
        }
    }
    return out;
}

std::array<std::array<double, kNumClasses>, kNumClasses> spectral_separability(const SceneSpec& spec) {
    std::array<std::array<double, kNumClasses>, kNumClasses> out{};
    for (int attr = 0; attr < 4; ++attr) {
        auto part = spectral_separability_attribute(spec, attr);
        for (int a = 0; a < kNumClasses; ++a) {
            for (int b = 0; b < kNumClasses; ++b) out[a][b] += part[a][b];
        }
    }
    return out;
}

std::string scene_spec_json(const SceneSpec& spec) {
    std::ostringstream os;
    os.precision(17);
    os << "{\n";
    os << "  \"extent_x\": " << spec.extent_x << ",\n  \"extent_y\": " << spec.extent_y << ",\n";
    os << "  \"seed\": " << spec.seed << ",\n";
    os << "  \"terrain_roughness\": " << spec.terrain_roughness << ",\n";
    os << "  \"channel_amplitude\": " << spec.channel_amplitude << ",\n";
    os << "  \"channel_wavelength\": " << spec.channel_wavelength << ",\n";
    os << "  \"channel_depth\": " << spec.channel_depth << ",\n";
    os << "  \"bank_slope_deg\": " << spec.bank_slope_deg << ",\n";
    os << "  \"class_fractions\": {";
    for (int c = 0; c < kNumClasses; ++c) {
        if (c) os << ", ";
        os << '"' << class_name(static_cast<LandCoverClass>(c)) << "\": " << spec.class_fractions[c];
    }
    os << "},\n";
    os << "  \"base_density\": [" << spec.base_density[0] << ", " << spec.base_density[1] << ", "
       << spec.base_density[2] << "],\n";
    os << "  \"density_factor\": " << spec.density_factor << ",\n";
    os << "  \"canopy_height\": [" << spec.canopy_height_min << ", " << spec.canopy_height_max << "],\n";
    os << "  \"mid_canopy_prob\": " << spec.mid_canopy_prob << ",\n";
    os << "  \"ground_return_prob\": " << spec.ground_return_prob << ",\n";
    os << "  \"low_veg_height\": [" << spec.low_veg_height_min << ", " << spec.low_veg_height_max << "],\n";
    os << "  \"water_foreign_density_scale\": " << spec.water_foreign_density_scale << ",\n";
    os << "  \"site_gain\": [" << spec.site_gain[0] << ", " << spec.site_gain[1] << ", "
       << spec.site_gain[2] << "],\n";
    os << "  \"label_fraction\": " << spec.label_fraction << ",\n";
    os << "  \"signatures\": {\n";
    const char* attr_names[4] = {"intensity", "reflectance", "amplitude", "deviation"};
    for (int cls = 0; cls < kNumClasses; ++cls) {
        os << "    \"" << class_name(static_cast<LandCoverClass>(cls)) << "\": {";
        const auto& sig = spec.signatures[cls];
        for (int attr = 0; attr < 4; ++attr) {
            if (attr) os << ", ";
            os << '"' << attr_names[attr] << "_mean\": [" << sig.mean[attr][0] << ", " << sig.mean[attr][1]
               << ", " << sig.mean[attr][2] << "], ";
            os << '"' << attr_names[attr] << "_std\": [" << sig.stddev[attr][0] << ", "
               << sig.stddev[attr][1] << ", " << sig.stddev[attr][2] << "]";
        }
        os << "}" << (cls + 1 < kNumClasses ? "," : "") << "\n";
    }
    os << "  }\n}\n";
    return os.str();
}

}  // namespace mspc
