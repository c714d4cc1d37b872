#include "mspc/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace mspc {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'S', 'P', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

// Bits of the header feature-presence field, in declared column order.
// This build always writes the full record; readers reject files that
// advertise a different column set.
constexpr std::uint32_t kAllColumnsMask = 0x7FFFFu;  // 19 columns

constexpr const char* kTextHeader = "x y z i1 i2 i3 r1 r2 r3 a1 a2 a3 d1 d2 d3 rn nr label";

template <typename T>
void put_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

}  // namespace

const char* class_name(LandCoverClass c) {
    switch (c) {
        case LandCoverClass::Sand: return "sand";
        case LandCoverClass::Gravel: return "gravel";
        case LandCoverClass::HighVegetation: return "high_vegetation";
        case LandCoverClass::LowVegetation: return "low_vegetation";
        case LandCoverClass::ForestFloor: return "forest_floor";
        case LandCoverClass::Water: return "water";
        case LandCoverClass::Unlabeled: return "unlabeled";
    }
    return "invalid";
}

std::optional<LandCoverClass> class_from_name(const std::string& name) {
    for (int c = 0; c < kNumClasses; ++c) {
        if (name == class_name(static_cast<LandCoverClass>(c))) {
            return static_cast<LandCoverClass>(c);
        }
    }
    if (name == "unlabeled") return LandCoverClass::Unlabeled;
    return std::nullopt;
}

void PointCloud::reserve(std::size_t n) {
    x.reserve(n);
    y.reserve(n);
    z.reserve(n);
    for (int c = 0; c < kNumChannels; ++c) {
        intensity[c].reserve(n);
        reflectance[c].reserve(n);
        amplitude[c].reserve(n);
        deviation[c].reserve(n);
    }
    return_number.reserve(n);
    number_of_returns.reserve(n);
    label.reserve(n);
    channel_presence.reserve(n);
}

void PointCloud::push_back(const MultispectralPoint& p) {
    x.push_back(p.x);
    y.push_back(p.y);
    z.push_back(p.z);
    for (int c = 0; c < kNumChannels; ++c) {
        intensity[c].push_back(p.intensity[c]);
        reflectance[c].push_back(p.reflectance[c]);
        amplitude[c].push_back(p.amplitude[c]);
        deviation[c].push_back(p.deviation[c]);
    }
    return_number.push_back(p.return_number);
    number_of_returns.push_back(p.number_of_returns);
    label.push_back(static_cast<std::uint8_t>(p.label));
    channel_presence.push_back(p.channel_presence);
}

MultispectralPoint PointCloud::point(std::size_t i) const {
    MultispectralPoint p;
    p.x = x[i];
    p.y = y[i];
    p.z = z[i];
    for (int c = 0; c < kNumChannels; ++c) {
        p.intensity[c] = intensity[c][i];
        p.reflectance[c] = reflectance[c][i];
        p.amplitude[c] = amplitude[c][i];
        p.deviation[c] = deviation[c][i];
    }
    p.return_number = return_number[i];
    p.number_of_returns = number_of_returns[i];
    p.label = static_cast<LandCoverClass>(label[i]);
    p.channel_presence = channel_presence[i];
    return p;
}

PointCloud PointCloud::select(const std::vector<std::size_t>& indices) const {
    PointCloud out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        out.push_back(point(i));
    }
    return out;
}

void PointCloud::append(const PointCloud& other) {
    auto cat = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    cat(x, other.x);
    cat(y, other.y);
    cat(z, other.z);
    for (int c = 0; c < kNumChannels; ++c) {
        cat(intensity[c], other.intensity[c]);
        cat(reflectance[c], other.reflectance[c]);
        cat(amplitude[c], other.amplitude[c]);
        cat(deviation[c], other.deviation[c]);
    }
    cat(return_number, other.return_number);
    cat(number_of_returns, other.number_of_returns);
    cat(label, other.label);
    cat(channel_presence, other.channel_presence);
}

BoundingBox PointCloud::bounds() const {
    if (empty()) throw std::logic_error("bounds() on empty cloud");
    BoundingBox b;
    b.min = {x[0], y[0], z[0]};
    b.max = b.min;
    for (std::size_t i = 1; i < size(); ++i) {
        b.min.x = std::min(b.min.x, x[i]);
        b.min.y = std::min(b.min.y, y[i]);
        b.min.z = std::min(b.min.z, z[i]);
        b.max.x = std::max(b.max.x, x[i]);
        b.max.y = std::max(b.max.y, y[i]);
        b.max.z = std::max(b.max.z, z[i]);
    }
    return b;
}

std::array<std::uint64_t, kNumClasses> class_histogram(const PointCloud& cloud) {
    std::array<std::uint64_t, kNumClasses> h{};
    for (std::uint8_t l : cloud.label) {
        if (l < kNumClasses) ++h[l];
    }
    return h;
}

namespace {

PointCloud read_binary(std::ifstream& in, const std::filesystem::path& path) {
    std::string header(4 + 4 + 8 + 4, '\0');
    in.seekg(0);
    if (!in.read(header.data(), static_cast<std::streamsize>(header.size()))) {
        throw ParseError(path.string() + ": truncated binary header");
    }
    std::uint32_t version = get_le<std::uint32_t>(header.data() + 4);
    if (version != kFormatVersion) {
        throw ParseError(path.string() + ": unsupported format version " + std::to_string(version));
    }
    std::uint64_t count = get_le<std::uint64_t>(header.data() + 8);
    std::uint32_t columns = get_le<std::uint32_t>(header.data() + 16);
    if (columns != kAllColumnsMask) {
        throw ParseError(path.string() + ": unexpected column set in header");
    }

    constexpr std::size_t kRecordBytes = 3 * 8 + 12 * 4 + 4;
    std::vector<char> rec(kRecordBytes);
    PointCloud cloud;
    cloud.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        if (!in.read(rec.data(), kRecordBytes)) {
            throw ParseError(path.string() + ": truncated at point " + std::to_string(i) + " (offset " +
                             std::to_string(20 + i * kRecordBytes) + ")");
        }
        const char* p = rec.data();
        MultispectralPoint pt;
        pt.x = get_le<double>(p);
        pt.y = get_le<double>(p + 8);
        pt.z = get_le<double>(p + 16);
        p += 24;
        for (int c = 0; c < kNumChannels; ++c, p += 4) pt.intensity[c] = get_le<float>(p);
        for (int c = 0; c < kNumChannels; ++c, p += 4) pt.reflectance[c] = get_le<float>(p);
        for (int c = 0; c < kNumChannels; ++c, p += 4) pt.amplitude[c] = get_le<float>(p);
        for (int c = 0; c < kNumChannels; ++c, p += 4) pt.deviation[c] = get_le<float>(p);
        pt.return_number = static_cast<std::uint8_t>(*p++);
        pt.number_of_returns = static_cast<std::uint8_t>(*p++);
        pt.label = static_cast<LandCoverClass>(static_cast<std::uint8_t>(*p++));
        pt.channel_presence = static_cast<std::uint8_t>(*p);
        if (std::isnan(pt.x) || std::isnan(pt.y) || std::isnan(pt.z)) {
            throw ParseError(path.string() + ": NaN coordinate at point " + std::to_string(i));
        }
        cloud.push_back(pt);
    }
    return cloud;
}

PointCloud read_text(std::istream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path.string() + ": empty file, expected header row");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    {
        std::istringstream hs(line);
        std::string tok;
        std::istringstream expect(kTextHeader);
        std::string want;
        while (expect >> want) {
            if (!(hs >> tok) || tok != want) {
                throw ParseError(path.string() + ":1: bad header, expected column '" + want + "'");
            }
        }
        if (hs >> tok) {
            throw ParseError(path.string() + ":1: unexpected extra column '" + tok + "'");
        }
    }

    PointCloud cloud;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        MultispectralPoint pt;
        double vals[15];
        unsigned rn, nr, lab;
        for (int k = 0; k < 15; ++k) {
            if (!(ls >> vals[k])) {
                throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 18 columns");
            }
        }
        if (!(ls >> rn >> nr >> lab)) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 18 columns");
        }
        std::string extra;
        if (ls >> extra) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": unexpected extra column");
        }
        pt.x = vals[0];
        pt.y = vals[1];
        pt.z = vals[2];
        if (std::isnan(pt.x) || std::isnan(pt.y) || std::isnan(pt.z)) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": NaN coordinate");
        }
        for (int c = 0; c < kNumChannels; ++c) {
            pt.intensity[c] = static_cast<float>(vals[3 + c]);
            pt.reflectance[c] = static_cast<float>(vals[6 + c]);
            pt.amplitude[c] = static_cast<float>(vals[9 + c]);
            pt.deviation[c] = static_cast<float>(vals[12 + c]);
        }
        pt.return_number = static_cast<std::uint8_t>(rn);
        pt.number_of_returns = static_cast<std::uint8_t>(nr);
        pt.label = static_cast<LandCoverClass>(lab);
        // The text table carries no presence column; a channel counts as
        // present unless all four of its attributes hold the sentinel.
        pt.channel_presence = 0;
        for (int c = 0; c < kNumChannels; ++c) {
            bool absent = pt.intensity[c] == kMissingAttribute && pt.reflectance[c] == kMissingAttribute &&
                          pt.amplitude[c] == kMissingAttribute && pt.deviation[c] == kMissingAttribute;
            if (!absent) pt.channel_presence |= static_cast<std::uint8_t>(1u << c);
        }
        cloud.push_back(pt);
    }
    return cloud;
}

}  // namespace

PointCloud read_cloud(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(path.string() + ": cannot open file");
    }
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::memcmp(magic, kMagic.data(), 4) == 0) {
        return read_binary(in, path);
    }
    in.close();
    std::ifstream text(path);
    return read_text(text, path);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error(path.string() + ": cannot open for writing");
    }
    if (format == CloudFormat::Binary) {
        std::string buf;
        buf.reserve(20 + cloud.size() * 76);
        buf.append(kMagic.data(), 4);
        put_le<std::uint32_t>(buf, kFormatVersion);
        put_le<std::uint64_t>(buf, cloud.size());
        put_le<std::uint32_t>(buf, kAllColumnsMask);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            put_le<double>(buf, cloud.x[i]);
            put_le<double>(buf, cloud.y[i]);
            put_le<double>(buf, cloud.z[i]);
            for (int c = 0; c < kNumChannels; ++c) put_le<float>(buf, cloud.intensity[c][i]);
            for (int c = 0; c < kNumChannels; ++c) put_le<float>(buf, cloud.reflectance[c][i]);
            for (int c = 0; c < kNumChannels; ++c) put_le<float>(buf, cloud.amplitude[c][i]);
            for (int c = 0; c < kNumChannels; ++c) put_le<float>(buf, cloud.deviation[c][i]);
            buf.push_back(static_cast<char>(cloud.return_number[i]));
            buf.push_back(static_cast<char>(cloud.number_of_returns[i]));
            buf.push_back(static_cast<char>(cloud.label[i]));
            buf.push_back(static_cast<char>(cloud.channel_presence[i]));
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    } else {
        std::ostringstream os;
        os << kTextHeader << '\n';
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            os << std::setprecision(17) << cloud.x[i] << ' ' << cloud.y[i] << ' ' << cloud.z[i];
            os << std::setprecision(9);
            auto spec = [&](const auto& cols) {
                for (int c = 0; c < kNumChannels; ++c) os << ' ' << cols[c][i];
            };
            spec(cloud.intensity);
            spec(cloud.reflectance);
            spec(cloud.amplitude);
            spec(cloud.deviation);
            os << ' ' << static_cast<unsigned>(cloud.return_number[i]) << ' '
               << static_cast<unsigned>(cloud.number_of_returns[i]) << ' '
               << static_cast<unsigned>(cloud.label[i]) << '\n';
        }
        out << os.str();
    }
    if (!out) {
        throw std::runtime_error(path.string() + ": write failed");
    }
}

}  // namespace mspc
