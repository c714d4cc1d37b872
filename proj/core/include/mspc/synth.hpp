#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mspc/core.hpp"
#include "mspc/fuse.hpp"

namespace mspc {

/// Per-class spectral model: mean and std for each of the four attributes
/// (intensity, reflectance, amplitude, deviation) on each channel.
struct SpectralSignature {
    std::array<std::array<float, kNumChannels>, 4> mean{};
    std::array<std::array<float, kNumChannels>, 4> stddev{};
};

/// Declarative description of a synthetic riverine scene. The default
/// signature table is a modeling choice, not a measurement: intensity and
/// reflectance separate the sediment classes strongly while amplitude and
/// deviation overlap heavily, and the low-vegetation / forest-floor pair
/// is spectrally close so that only geometry and pulse context separate
/// it. Channel-ablation orderings measured on generated scenes are
/// conditioned on this table.
struct SceneSpec {
    double extent_x = 100.0;  // meters
    double extent_y = 100.0;
    std::uint64_t seed = 7;

    double terrain_roughness = 0.25;   // height-field amplitude, meters
    double channel_amplitude = 12.0;   // meander amplitude of the water channel
    double channel_wavelength = 90.0;
    double channel_depth = 1.2;
    double bank_slope_deg = 12.0;

    /// Target fractions of labeled points per class; must sum to <= 1.
    std::array<double, kNumClasses> class_fractions{0.30, 0.12, 0.26, 0.13, 0.09, 0.10};
    std::array<SpectralSignature, kNumClasses> signatures;

    /// Base per-scanner densities (points/m^2) before the density factor.
    std::array<double, kNumChannels> base_density{1400.0, 500.0, 1600.0};
    double density_factor = 0.02;

    double canopy_height_min = 4.0;
    double canopy_height_max = 12.0;
    double mid_canopy_prob = 0.3;      // extra canopy return per pulse
    double ground_return_prob = 0.40;  // canopy-penetrating ground return (forest floor)
    double low_veg_height_min = 0.03;
    double low_veg_height_max = 0.5;

    /// 1550/905 nm returns over water are thinned to this fraction.
    double water_foreign_density_scale = 0.2;

    /// Site-level radiometric gain on intensity and reflectance, per
    /// channel; models calibration/moisture differences between sites.
    std::array<double, kNumChannels> site_gain{1.0, 1.0, 1.0};

    /// Fraction of points carrying labels (sparse-annotation sites).
    double label_fraction = 1.0;

    double effective_density(int scanner) const { return base_density[scanner] * density_factor; }
    void validate() const;
};

/// Named presets mirroring the three study-site roles: `ns-like` is
/// sand-poor and forest-heavy, `hn-like` sand-rich and sparsely labeled,
/// `jm-like` balanced. Class fractions follow the published per-site
/// distributions.
SceneSpec preset_scene(const std::string& name);  // "ns-like" | "hn-like" | "jm-like"
std::vector<std::string> preset_names();

/// Default signature table shared by the presets.
std::array<SpectralSignature, kNumClasses> default_signatures();

struct SynthScene {
    std::array<PointCloud, kNumChannels> scanner_clouds;
    std::array<std::vector<std::uint8_t>, kNumChannels> scanner_terrain_mask;
    PointCloud fused;  // union of scanners in channel order, fused attributes, true labels
    std::vector<std::uint8_t> fused_terrain_mask;
};

/// Deterministic per seed. Labels are assigned by distance-band layout
/// around a meandering channel; spectral values are drawn from the class
/// signatures; canopy areas emit multi-return pulses whose ground returns
/// become forest floor.
SynthScene generate(const SceneSpec& spec);

/// True terrain height of the scene at (x, y); exposed so tests can check
/// generated points against the exact surface.
double terrain_height(const SceneSpec& spec, double x, double y);

/// Pairwise class distances: sum over the 12 spectral features of the
/// Bhattacharyya distance between the per-class Gaussians. Symmetric with
/// a zero diagonal.
std::array<std::array<double, kNumClasses>, kNumClasses> spectral_separability(const SceneSpec& spec);

/// Same distance restricted to one attribute (0 intensity, 1 reflectance,
/// 2 amplitude, 3 deviation), summed over channels.
std::array<std::array<double, kNumClasses>, kNumClasses> spectral_separability_attribute(
    const SceneSpec& spec, int attribute);

std::string scene_spec_json(const SceneSpec& spec);

}  // namespace mspc
