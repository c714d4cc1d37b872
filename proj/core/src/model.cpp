#include "mspc/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace mspc {

void ModelConfig::validate() const {
    if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be >= 1");
    if (stages < 1) throw std::invalid_argument("ModelConfig: stages must be >= 1");
    if (base_width < 1) throw std::invalid_argument("ModelConfig: base_width must be >= 1");
    if (attention_groups < 1 || base_width % attention_groups != 0) {
        throw std::invalid_argument("ModelConfig: attention_groups must divide base_width");
    }
    if (base_width / attention_groups < 1) {
        throw std::invalid_argument("ModelConfig: group size must be >= 1");
    }
    if (base_width % 2 != 0) {
        throw std::invalid_argument("ModelConfig: base_width must be even");
    }
    if (neighbors_k < 1) throw std::invalid_argument("ModelConfig: neighbors_k must be >= 1");
    if (base_grid <= 0) throw std::invalid_argument("ModelConfig: base_grid must be positive");
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
}

SegModel build_model(const ModelConfig& config) { return build_model_t<float>(config); }

ForwardResultT<float> forward(const SegModel& model, const std::vector<float>& features,
                              const std::vector<float>& positions, std::size_t n) {
    return forward_t<float>(model, features, positions, n);
}

std::vector<std::uint32_t> knn_neighbors(const std::vector<double>& xs, const std::vector<double>& ys,
                                         const std::vector<double>& zs, std::size_t k) {
    const std::size_t n = xs.size();
    std::vector<std::uint32_t> out(n * k);
    KdTree tree = KdTree::build(xs, ys, zs);
    for (std::size_t i = 0; i < n; ++i) {
        auto nbs = tree.knn({xs[i], ys[i], zs[i]}, k);
        for (std::size_t jj = 0; jj < k; ++jj) {
            out[i * k + jj] = static_cast<std::uint32_t>(nbs[jj].index);
        }
    }
    return out;
}

PoolPartition grid_partition_xyz(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const std::vector<double>& zs, double cell) {
    if (cell <= 0) throw std::invalid_argument("grid_partition: cell must be positive");
    const std::size_t n = xs.size();
    Vec3 origin{0, 0, 0};
    if (n > 0) {
        origin = {*std::min_element(xs.begin(), xs.end()), *std::min_element(ys.begin(), ys.end()),
                  *std::min_element(zs.begin(), zs.end())};
    }
    std::map<VoxelKey, std::vector<std::uint32_t>> cells;
    for (std::size_t i = 0; i < n; ++i) {
        cells[voxel_key({xs[i], ys[i], zs[i]}, origin, cell)].push_back(static_cast<std::uint32_t>(i));
    }
    PoolPartition part;
    part.parent.resize(n);
    part.cells.reserve(cells.size());
    for (auto& [key, members] : cells) {
        // Coordinate order, not index order: pooled sums and maxima then
        // do not depend on how the input rows were permuted.
        std::sort(members.begin(), members.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (xs[a] != xs[b]) return xs[a] < xs[b];
            if (ys[a] != ys[b]) return ys[a] < ys[b];
            if (zs[a] != zs[b]) return zs[a] < zs[b];
            return a < b;
        });
        const std::uint32_t rank = static_cast<std::uint32_t>(part.cells.size());
        for (std::uint32_t m : members) part.parent[m] = rank;
        part.cells.push_back(std::move(members));
    }
    return part;
}

namespace {

constexpr char kCkptMagic[4] = {'M', 'S', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size()) {
            throw std::runtime_error("checkpoint: truncated file");
        }
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_str(std::size_t len) {
        if (pos + len > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
        std::string s = bytes.substr(pos, len);
        pos += len;
        return s;
    }
};

}  // namespace

std::string save_checkpoint(const SegModel& model, ChannelSetConfig channel_set, const NormStats& stats) {
    std::string out;
    out.append(kCkptMagic, 4);
    put<std::uint32_t>(out, kCkptVersion);
    const ModelConfig& c = model.config;
    put<std::int32_t>(out, c.input_dim);
    put<std::int32_t>(out, c.stages);
    put<std::int32_t>(out, c.base_width);
    put<std::int32_t>(out, c.attention_groups);
    put<std::int32_t>(out, c.neighbors_k);
    put<double>(out, c.base_grid);
    put<std::int32_t>(out, c.num_classes);
    put<std::uint64_t>(out, c.seed);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(channel_set));
    for (double m : stats.mean) put<double>(out, m);
    for (double s : stats.stddev) put<double>(out, s);

    auto params = model.parameters();
    put<std::uint64_t>(out, params.size());
    for (const auto& [name, var] : params) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        put<std::uint64_t>(out, var.val->rows);
        put<std::uint64_t>(out, var.val->cols);
        for (float v : var.val->v) put<float>(out, v);
    }
    return out;
}

Checkpoint load_checkpoint(const std::string& bytes) {
    Reader r{bytes};
    std::string magic = r.get_str(4);
    if (std::memcmp(magic.data(), kCkptMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic");
    }
    std::uint32_t version = r.get<std::uint32_t>();
    if (version != kCkptVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.config.input_dim = r.get<std::int32_t>();
    ck.config.stages = r.get<std::int32_t>();
    ck.config.base_width = r.get<std::int32_t>();
    ck.config.attention_groups = r.get<std::int32_t>();
    ck.config.neighbors_k = r.get<std::int32_t>();
    ck.config.base_grid = r.get<double>();
    ck.config.num_classes = r.get<std::int32_t>();
    ck.config.seed = r.get<std::uint64_t>();
    ck.channel_set = static_cast<ChannelSetConfig>(r.get<std::uint32_t>());
    for (double& m : ck.stats.mean) m = r.get<double>();
    for (double& s : ck.stats.stddev) s = r.get<double>();

    ck.model = build_model(ck.config);
    auto params = ck.model.parameters();
    std::uint64_t count = r.get<std::uint64_t>();
    if (count != params.size()) {
        throw std::runtime_error("checkpoint: parameter count mismatch");
    }
    for (auto& [name, var] : params) {
        std::uint16_t len = r.get<std::uint16_t>();
        std::string got = r.get_str(len);
        if (got != name) {
            throw std::runtime_error("checkpoint: expected parameter '" + name + "', found '" + got + "'");
        }
        std::uint64_t rows = r.get<std::uint64_t>();
        std::uint64_t cols = r.get<std::uint64_t>();
        if (rows != var.val->rows || cols != var.val->cols) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        }
        for (float& v : var.val->v) v = r.get<float>();
    }
    if (r.pos != bytes.size()) {
        throw std::runtime_error("checkpoint: trailing bytes");
    }
    return ck;
}

void write_checkpoint_file(const std::filesystem::path& path, const SegModel& model,
                           ChannelSetConfig channel_set, const NormStats& stats) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    std::string bytes = save_checkpoint(model, channel_set, stats);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path.string() + ": cannot open checkpoint");
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_checkpoint(ss.str());
}

}  // namespace mspc
