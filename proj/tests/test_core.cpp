#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "mspc/core.hpp"

using namespace mspc;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    auto dir = fs::temp_directory_path() / "mspc_core_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("empty cloud round trips in both formats") {
    PointCloud empty;
    for (auto format : {CloudFormat::Binary, CloudFormat::Text}) {
        auto path = temp_file(format == CloudFormat::Binary ? "empty.mspc" : "empty.txt");
        write_cloud(empty, path, format);
        PointCloud back = read_cloud(path);
        CHECK(back.size() == 0);
    }
}

TEST_CASE("binary write-read-write is byte identical") {
    PointCloud cloud = test::random_cloud(257, 12345);
    cloud.label[7] = static_cast<std::uint8_t>(LandCoverClass::Unlabeled);
    auto p1 = temp_file("rt1.mspc");
    auto p2 = temp_file("rt2.mspc");
    write_cloud(cloud, p1, CloudFormat::Binary);
    PointCloud back = read_cloud(p1);
    write_cloud(back, p2, CloudFormat::Binary);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1).size() == 20 + 76 * cloud.size());
}

TEST_CASE("read-write identity on random points, both formats") {
    PointCloud cloud = test::random_cloud(1000, 99);
    for (auto format : {CloudFormat::Binary, CloudFormat::Text}) {
        auto path = temp_file(format == CloudFormat::Binary ? "id.mspc" : "id.txt");
        write_cloud(cloud, path, format);
        PointCloud back = read_cloud(path);
        REQUIRE(back.size() == cloud.size());
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK(back.x[i] == cloud.x[i]);
            CHECK(back.y[i] == cloud.y[i]);
            CHECK(back.z[i] == cloud.z[i]);
            for (int c = 0; c < kNumChannels; ++c) {
                CHECK(back.intensity[c][i] == cloud.intensity[c][i]);
                CHECK(back.reflectance[c][i] == cloud.reflectance[c][i]);
                CHECK(back.amplitude[c][i] == cloud.amplitude[c][i]);
                CHECK(back.deviation[c][i] == cloud.deviation[c][i]);
            }
            CHECK(back.return_number[i] == cloud.return_number[i]);
            CHECK(back.number_of_returns[i] == cloud.number_of_returns[i]);
            CHECK(back.label[i] == cloud.label[i]);
            CHECK(back.channel_presence[i] == cloud.channel_presence[i]);
        }
    }
}

TEST_CASE("unlabeled sentinel survives the round trip") {
    PointCloud cloud = test::random_cloud(3, 5);
    cloud.label[1] = static_cast<std::uint8_t>(LandCoverClass::Unlabeled);
    auto path = temp_file("sentinel.mspc");
    write_cloud(cloud, path);
    PointCloud back = read_cloud(path);
    CHECK(back.label_at(1) == LandCoverClass::Unlabeled);
}

TEST_CASE("text parser: labeled fixture of three points") {
    auto path = temp_file("three.txt");
    {
        std::ofstream out(path);
        out << "x y z i1 i2 i3 r1 r2 r3 a1 a2 a3 d1 d2 d3 rn nr label\n";
        out << "0 0 0  0.5 0.5 0.5  0.4 0.4 0.4  0.3 0.3 0.3  0.2 0.2 0.2  1 1 0\n";
        out << "1 0 0  0.5 0.5 0.5  0.4 0.4 0.4  0.3 0.3 0.3  0.2 0.2 0.2  1 2 0\n";
        out << "0 1 0  0.5 0.5 0.5  0.4 0.4 0.4  0.3 0.3 0.3  0.2 0.2 0.2  2 2 5\n";
    }
    PointCloud cloud = read_cloud(path);
    REQUIRE(cloud.size() == 3);
    auto hist = class_histogram(cloud);
    CHECK(hist[static_cast<int>(LandCoverClass::Sand)] == 2);
    CHECK(hist[static_cast<int>(LandCoverClass::Water)] == 1);
    CHECK(cloud.channel_presence[0] == 0x7);
}

TEST_CASE("text parser: absent channel becomes presence bit 0") {
    auto path = temp_file("absent.txt");
    {
        std::ofstream out(path);
        out << "x y z i1 i2 i3 r1 r2 r3 a1 a2 a3 d1 d2 d3 rn nr label\n";
        out << "0 0 0  0.5 -1 0.5  0.4 -1 0.4  0.3 -1 0.3  0.2 -1 0.2  1 1 0\n";
    }
    PointCloud cloud = read_cloud(path);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.channel_presence[0] == 0x5);
}

TEST_CASE("parse errors carry location context") {
    auto bad_header = temp_file("badheader.txt");
    {
        std::ofstream out(bad_header);
        out << "x y z foo\n";
    }
    CHECK_THROWS_AS(read_cloud(bad_header), ParseError);

    auto short_row = temp_file("shortrow.txt");
    {
        std::ofstream out(short_row);
        out << "x y z i1 i2 i3 r1 r2 r3 a1 a2 a3 d1 d2 d3 rn nr label\n";
        out << "0 0 0 1 1\n";
    }
    CHECK_THROWS_WITH_AS(read_cloud(short_row), doctest::Contains(":2:"), ParseError);

    auto nan_row = temp_file("nan.txt");
    {
        std::ofstream out(nan_row);
        out << "x y z i1 i2 i3 r1 r2 r3 a1 a2 a3 d1 d2 d3 rn nr label\n";
        out << "nan 0 0  0 0 0  0 0 0  0 0 0  0 0 0  1 1 0\n";
    }
    CHECK_THROWS_WITH_AS(read_cloud(nan_row), doctest::Contains("NaN"), ParseError);

    auto truncated = temp_file("trunc.mspc");
    {
        PointCloud cloud = test::random_cloud(5, 1);
        write_cloud(cloud, truncated);
        auto bytes = slurp(truncated);
        std::ofstream out(truncated, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
    }
    CHECK_THROWS_AS(read_cloud(truncated), ParseError);

    CHECK_THROWS_AS(read_cloud(temp_file("does_not_exist.mspc")), ParseError);
}

TEST_CASE("histogram: all-unlabeled cloud counts nothing") {
    PointCloud cloud = test::random_cloud(50, 3);
    for (auto& l : cloud.label) l = static_cast<std::uint8_t>(LandCoverClass::Unlabeled);
    auto hist = class_histogram(cloud);
    for (auto v : hist) CHECK(v == 0);
}

TEST_CASE("histogram: hand-built sand/water fixture") {
    PointCloud cloud;
    for (int i = 0; i < 10; ++i) {
        MultispectralPoint p;
        p.x = i;
        p.label = LandCoverClass::Sand;
        cloud.push_back(p);
    }
    for (int i = 0; i < 5; ++i) {
        MultispectralPoint p;
        p.x = i;
        p.label = LandCoverClass::Water;
        cloud.push_back(p);
    }
    auto hist = class_histogram(cloud);
    CHECK(hist[static_cast<int>(LandCoverClass::Sand)] == 10);
    CHECK(hist[static_cast<int>(LandCoverClass::Water)] == 5);
    CHECK(hist[static_cast<int>(LandCoverClass::Gravel)] == 0);
}

TEST_CASE("histogram additivity over concatenation") {
    PointCloud a = test::random_cloud(120, 7);
    PointCloud b = test::random_cloud(80, 8);
    auto ha = class_histogram(a);
    auto hb = class_histogram(b);
    PointCloud both = a;
    both.append(b);
    auto hab = class_histogram(both);
    for (int c = 0; c < kNumClasses; ++c) CHECK(hab[c] == ha[c] + hb[c]);
}

TEST_CASE("channel columns are position stable under row permutation") {
    PointCloud cloud = test::random_cloud(64, 42);
    std::vector<std::size_t> perm(cloud.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    PointCloud shuffled = cloud.select(perm);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (int c = 0; c < kNumChannels; ++c) {
            CHECK(shuffled.intensity[c][i] == cloud.intensity[c][perm[i]]);
        }
    }
}

TEST_CASE("histogram sums match labeled point count") {
    PointCloud cloud = test::random_cloud(500, 11);
    for (std::size_t i = 0; i < cloud.size(); i += 3) {
        cloud.label[i] = static_cast<std::uint8_t>(LandCoverClass::Unlabeled);
    }
    auto hist = class_histogram(cloud);
    std::uint64_t total = 0;
    for (auto v : hist) total += v;
    std::uint64_t labeled = 0;
    for (auto l : cloud.label) labeled += l < kNumClasses;
    CHECK(total == labeled);
}
