#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mspc {

/// Land cover taxonomy. Integer codes are stable across serialization.
enum class LandCoverClass : std::uint8_t {
    Sand = 0,
    Gravel = 1,
    HighVegetation = 2,
    LowVegetation = 3,
    ForestFloor = 4,
    Water = 5,
    Unlabeled = 255,
};

inline constexpr int kNumClasses = 6;

/// Channel order is fixed: index 0 = 1550 nm, 1 = 905 nm, 2 = 532 nm.
inline constexpr int kNumChannels = 3;
inline constexpr std::array<int, kNumChannels> kChannelWavelengthsNm = {1550, 905, 532};

/// Attribute slot value for a channel that was not measured on a point.
/// Real scanner readings are non-negative, so -1 is unambiguous; the
/// presence mask is still the authoritative signal.
inline constexpr float kMissingAttribute = -1.0f;

const char* class_name(LandCoverClass c);
std::optional<LandCoverClass> class_from_name(const std::string& name);

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

/// One point in row form; the columnar PointCloud is the working
/// representation, this is for construction and tests.
struct MultispectralPoint {
    double x = 0.0, y = 0.0, z = 0.0;
    std::array<float, kNumChannels> intensity{kMissingAttribute, kMissingAttribute, kMissingAttribute};
    std::array<float, kNumChannels> reflectance{kMissingAttribute, kMissingAttribute, kMissingAttribute};
    std::array<float, kNumChannels> amplitude{kMissingAttribute, kMissingAttribute, kMissingAttribute};
    std::array<float, kNumChannels> deviation{kMissingAttribute, kMissingAttribute, kMissingAttribute};
    std::uint8_t return_number = 1;
    std::uint8_t number_of_returns = 1;
    LandCoverClass label = LandCoverClass::Unlabeled;
    std::uint8_t channel_presence = 0;  // bit c set <=> channel c measured
};

struct BoundingBox {
    Vec3 min, max;
};

/// Columnar multispectral point cloud. All columns have equal length.
/// Treated as immutable once filled; cheap to share read-only across
/// workers.
struct PointCloud {
    std::vector<double> x, y, z;
    std::array<std::vector<float>, kNumChannels> intensity;
    std::array<std::vector<float>, kNumChannels> reflectance;
    std::array<std::vector<float>, kNumChannels> amplitude;
    std::array<std::vector<float>, kNumChannels> deviation;
    std::vector<std::uint8_t> return_number;
    std::vector<std::uint8_t> number_of_returns;
    std::vector<std::uint8_t> label;  // LandCoverClass codes
    std::vector<std::uint8_t> channel_presence;

    std::size_t size() const { return x.size(); }
    bool empty() const { return x.empty(); }

    void reserve(std::size_t n);
    void push_back(const MultispectralPoint& p);
    MultispectralPoint point(std::size_t i) const;

    /// Subset by index list, preserving the given order.
    PointCloud select(const std::vector<std::size_t>& indices) const;

    /// Append all points of another cloud.
    void append(const PointCloud& other);

    BoundingBox bounds() const;  // requires non-empty

    LandCoverClass label_at(std::size_t i) const { return static_cast<LandCoverClass>(label[i]); }
};

enum class CloudFormat { Binary, Text };

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Reads a cloud in either format; binary is detected by the MSPC magic,
/// anything else is parsed as the delimited text table.
PointCloud read_cloud(const std::filesystem::path& path);

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                 CloudFormat format = CloudFormat::Binary);

/// Counts per labeled class; Unlabeled points are not counted.
std::array<std::uint64_t, kNumClasses> class_histogram(const PointCloud& cloud);

enum class DatasetRole { Train, Validation, Test };

struct DatasetDescriptor {
    std::string name;
    std::filesystem::path path;
    DatasetRole role = DatasetRole::Train;
    std::array<std::uint64_t, kNumClasses> class_histogram{};
};

}  // namespace mspc
