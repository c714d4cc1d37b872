#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mspc/autodiff.hpp"
#include "mspc/core.hpp"
#include "mspc/features.hpp"
#include "mspc/spatial.hpp"

namespace mspc {

struct ModelConfig {
    int input_dim = 17;
    int stages = 3;
    int base_width = 32;       // doubles per stage
    int attention_groups = 4;  // must divide every stage width
    int neighbors_k = 8;
    double base_grid = 0.10;   // meters, doubles per pooling
    int num_classes = kNumClasses;
    std::uint64_t seed = 42;

    int width(int stage) const { return base_width << stage; }
    void validate() const;
};

/// One attention block: grouped vector attention plus a feed-forward
/// sub-block, each with a per-channel layer scale.
template <class T>
struct GvaBlockT {
    ad::Var<T> q_w, q_b, k_w, k_b, v_w, v_b;
    ad::Var<T> pos_w1, pos_b1, pos_w2, pos_b2;      // position encoding MLP, 3 -> C -> C
    ad::Var<T> wenc_w1, wenc_b1, wenc_w2, wenc_b2;  // weight encoding MLP, C -> C/2 -> G
    ad::Var<T> gamma_att;
    ad::Var<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ad::Var<T> gamma_ffn;
};

template <class T>
struct SegModelT {
    ModelConfig config;
    ad::Var<T> embed_w1, embed_b1, embed_w2, embed_b2;
    std::vector<GvaBlockT<T>> enc_blocks;        // one per stage
    std::vector<ad::Var<T>> pool_w, pool_b;      // stage s -> s+1
    std::vector<GvaBlockT<T>> dec_blocks;        // indexed by stage, stages-1 entries
    std::vector<ad::Var<T>> unpool_w, unpool_b;  // stage s+1 -> s
    ad::Var<T> head_w1, head_b1, head_w2, head_b2;

    /// All parameters in declaration (= checkpoint) order.
    std::vector<std::pair<std::string, ad::Var<T>>> parameters() const;
    std::size_t parameter_count() const;
    void zero_grads();
};

using SegModel = SegModelT<float>;

template <class T>
SegModelT<T> build_model_t(const ModelConfig& config);
SegModel build_model(const ModelConfig& config);

// ---------------------------------------------------------------------------
// neighbor search and pooling partitions (plain data, outside the tape)

/// Flattened n x k neighbor indices by ascending distance; each point's
/// list includes the point itself. k is clamped to n.
std::vector<std::uint32_t> knn_neighbors(const std::vector<double>& xs, const std::vector<double>& ys,
                                         const std::vector<double>& zs, std::size_t k_clamped);

struct PoolPartition {
    std::vector<std::uint32_t> parent;               // fine index -> cell rank
    std::vector<std::vector<std::uint32_t>> cells;   // cell rank -> members
};

// ---------------------------------------------------------------------------
// layers

/// Grouped vector attention core (no residual): for each point i and
/// neighbor j, relation r_ij = q_i - k_j + delta(p_j - p_i); per-group
/// softmax weights over neighbors from an MLP on r_ij; output is the
/// weighted sum of (v_j + delta(p_j - p_i)).
template <class T>
ad::Var<T> gva_core(ad::Tape<T>& tape, const ad::Var<T>& x, const std::vector<T>& positions,
                    const std::vector<std::uint32_t>& neighbors, std::size_t k,
                    const GvaBlockT<T>& blk, int groups);

/// The attention operator as used standalone: core plus residual.
template <class T>
ad::Var<T> grouped_vector_attention(ad::Tape<T>& tape, const ad::Var<T>& x,
                                    const std::vector<T>& positions,
                                    const std::vector<std::uint32_t>& neighbors, std::size_t k,
                                    const GvaBlockT<T>& blk, int groups) {
    return ad::add(tape, x, gva_core(tape, x, positions, neighbors, k, blk, groups));
}

/// Full pre-norm block: x += gamma_att * GVA(LN(x)); x += gamma_ffn * FFN(LN(x)).
template <class T>
ad::Var<T> apply_block(ad::Tape<T>& tape, const ad::Var<T>& x, const std::vector<T>& positions,
                       const std::vector<std::uint32_t>& neighbors, std::size_t k,
                       const GvaBlockT<T>& blk, int groups);

/// Partition positions (xyz triples) into cells of the given size anchored
/// at their min corner. Cell members are sorted by coordinate so pooled
/// reductions are independent of input order.
PoolPartition grid_partition_xyz(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const std::vector<double>& zs, double cell);

/// Max-pool rows by partition cell after a linear projection; also emits
/// member-centroid positions for the coarse level.
template <class T>
struct GridPoolResult {
    ad::Var<T> features;
    std::vector<T> positions;  // m x 3
    PoolPartition partition;
};

template <class T>
GridPoolResult<T> grid_pool(ad::Tape<T>& tape, const ad::Var<T>& x, const std::vector<T>& positions,
                            double cell, const ad::Var<T>& proj_w, const ad::Var<T>& proj_b);

/// Unpool: each fine point takes its parent's projected coarse feature
/// plus the skip feature.
template <class T>
ad::Var<T> grid_unpool(ad::Tape<T>& tape, const ad::Var<T>& coarse, const PoolPartition& partition,
                       const ad::Var<T>& proj_w, const ad::Var<T>& proj_b, const ad::Var<T>& skip);

// ---------------------------------------------------------------------------
// forward

template <class T>
struct ForwardResultT {
    ad::Var<T> input;   // leaf for the feature matrix
    ad::Var<T> logits;  // n x num_classes
    ad::Tape<T> tape;
};

/// Runs the U-shaped network. `features` is row-major n x input_dim,
/// `positions` row-major n x 3 (the geometric coordinates used for
/// neighborhoods, pooling and position encoding). Throws on non-finite
/// intermediate values, naming the layer.
template <class T>
ForwardResultT<T> forward_t(const SegModelT<T>& model, const std::vector<T>& features,
                            const std::vector<T>& positions, std::size_t n);

ForwardResultT<float> forward(const SegModel& model, const std::vector<float>& features,
                              const std::vector<float>& positions, std::size_t n);

// ---------------------------------------------------------------------------
// checkpoints

struct Checkpoint {
    ModelConfig config;
    ChannelSetConfig channel_set = ChannelSetConfig::AllFeatures;
    NormStats stats;
    SegModel model;
};

std::string save_checkpoint(const SegModel& model, ChannelSetConfig channel_set, const NormStats& stats);
Checkpoint load_checkpoint(const std::string& bytes);
void write_checkpoint_file(const std::filesystem::path& path, const SegModel& model,
                           ChannelSetConfig channel_set, const NormStats& stats);
Checkpoint read_checkpoint_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// template implementations

namespace detail {

template <class T>
void init_uniform(std::mt19937_64& rng, ad::Var<T>& v, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : v.val->v) x = static_cast<T>(dist(rng));
}

template <class T>
void init_linear(std::mt19937_64& rng, ad::Var<T>& w, ad::Var<T>& b, std::size_t out, std::size_t in) {
    w = ad::Var<T>(out, in);
    b = ad::Var<T>(1, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init_uniform(rng, w, bound);
    init_uniform(rng, b, bound);
}

template <class T>
void init_block(std::mt19937_64& rng, GvaBlockT<T>& blk, int width, int groups) {
    const std::size_t c = static_cast<std::size_t>(width);
    const std::size_t h = c / 2;
    const std::size_t g = static_cast<std::size_t>(groups);
    init_linear(rng, blk.q_w, blk.q_b, c, c);
    init_linear(rng, blk.k_w, blk.k_b, c, c);
    init_linear(rng, blk.v_w, blk.v_b, c, c);
    init_linear(rng, blk.pos_w1, blk.pos_b1, c, 3);
    init_linear(rng, blk.pos_w2, blk.pos_b2, c, c);
    init_linear(rng, blk.wenc_w1, blk.wenc_b1, h, c);
    init_linear(rng, blk.wenc_w2, blk.wenc_b2, g, h);
    blk.gamma_att = ad::Var<T>(1, c);
    for (auto& v : blk.gamma_att.val->v) v = T(0.1);
    init_linear(rng, blk.ffn_w1, blk.ffn_b1, c, c);
    init_linear(rng, blk.ffn_w2, blk.ffn_b2, c, c);
    blk.gamma_ffn = ad::Var<T>(1, c);
    for (auto& v : blk.gamma_ffn.val->v) v = T(0.1);
}

template <class T>
void block_params(std::vector<std::pair<std::string, ad::Var<T>>>& out, const std::string& prefix,
                  const GvaBlockT<T>& blk) {
    out.emplace_back(prefix + ".q.w", blk.q_w);
    out.emplace_back(prefix + ".q.b", blk.q_b);
    out.emplace_back(prefix + ".k.w", blk.k_w);
    out.emplace_back(prefix + ".k.b", blk.k_b);
    out.emplace_back(prefix + ".v.w", blk.v_w);
    out.emplace_back(prefix + ".v.b", blk.v_b);
    out.emplace_back(prefix + ".pos.w1", blk.pos_w1);
    out.emplace_back(prefix + ".pos.b1", blk.pos_b1);
    out.emplace_back(prefix + ".pos.w2", blk.pos_w2);
    out.emplace_back(prefix + ".pos.b2", blk.pos_b2);
    out.emplace_back(prefix + ".wenc.w1", blk.wenc_w1);
    out.emplace_back(prefix + ".wenc.b1", blk.wenc_b1);
    out.emplace_back(prefix + ".wenc.w2", blk.wenc_w2);
    out.emplace_back(prefix + ".wenc.b2", blk.wenc_b2);
    out.emplace_back(prefix + ".gamma_att", blk.gamma_att);
    out.emplace_back(prefix + ".ffn.w1", blk.ffn_w1);
    out.emplace_back(prefix + ".ffn.b1", blk.ffn_b1);
    out.emplace_back(prefix + ".ffn.w2", blk.ffn_w2);
    out.emplace_back(prefix + ".ffn.b2", blk.ffn_b2);
    out.emplace_back(prefix + ".gamma_ffn", blk.gamma_ffn);
}

template <class T>
void check_finite(const ad::Tensor<T>& t, const char* layer) {
    for (const T& v : t.v) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw std::runtime_error(std::string("forward: non-finite value after layer '") + layer + "'");
        }
    }
}

}  // namespace detail

template <class T>
SegModelT<T> build_model_t(const ModelConfig& config) {
    config.validate();
    SegModelT<T> m;
    m.config = config;
    std::mt19937_64 rng(config.seed);

    const int S = config.stages;
    detail::init_linear(rng, m.embed_w1, m.embed_b1, config.base_width, config.input_dim);
    detail::init_linear(rng, m.embed_w2, m.embed_b2, config.base_width, config.base_width);

    m.enc_blocks.resize(S);
    for (int s = 0; s < S; ++s) detail::init_block(rng, m.enc_blocks[s], config.width(s), config.attention_groups);

    m.pool_w.resize(S - 1);
    m.pool_b.resize(S - 1);
    for (int s = 0; s + 1 < S; ++s) {
        detail::init_linear(rng, m.pool_w[s], m.pool_b[s], config.width(s + 1), config.width(s));
    }

    m.dec_blocks.resize(S - 1);
    for (int s = 0; s + 1 < S; ++s) detail::init_block(rng, m.dec_blocks[s], config.width(s), config.attention_groups);

    m.unpool_w.resize(S - 1);
    m.unpool_b.resize(S - 1);
    for (int s = 0; s + 1 < S; ++s) {
        detail::init_linear(rng, m.unpool_w[s], m.unpool_b[s], config.width(s), config.width(s + 1));
    }

    detail::init_linear(rng, m.head_w1, m.head_b1, config.base_width, config.base_width);
    detail::init_linear(rng, m.head_w2, m.head_b2, config.num_classes, config.base_width);
    return m;
}

template <class T>
std::vector<std::pair<std::string, ad::Var<T>>> SegModelT<T>::parameters() const {
    std::vector<std::pair<std::string, ad::Var<T>>> out;
    out.emplace_back("embed.w1", embed_w1);
    out.emplace_back("embed.b1", embed_b1);
    out.emplace_back("embed.w2", embed_w2);
    out.emplace_back("embed.b2", embed_b2);
    for (std::size_t s = 0; s < enc_blocks.size(); ++s) {
        detail::block_params(out, "enc" + std::to_string(s), enc_blocks[s]);
    }
    for (std::size_t s = 0; s < pool_w.size(); ++s) {
        out.emplace_back("pool" + std::to_string(s) + ".w", pool_w[s]);
        out.emplace_back("pool" + std::to_string(s) + ".b", pool_b[s]);
    }
    for (std::size_t s = 0; s < dec_blocks.size(); ++s) {
        detail::block_params(out, "dec" + std::to_string(s), dec_blocks[s]);
    }
    for (std::size_t s = 0; s < unpool_w.size(); ++s) {
        out.emplace_back("unpool" + std::to_string(s) + ".w", unpool_w[s]);
        out.emplace_back("unpool" + std::to_string(s) + ".b", unpool_b[s]);
    }
    out.emplace_back("head.w1", head_w1);
    out.emplace_back("head.b1", head_b1);
    out.emplace_back("head.w2", head_w2);
    out.emplace_back("head.b2", head_b2);
    return out;
}

template <class T>
std::size_t SegModelT<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, v] : parameters()) total += v.val->count();
    return total;
}

template <class T>
void SegModelT<T>::zero_grads() {
    for (auto& [name, v] : parameters()) v.grad->zero();
}

template <class T>
ad::Var<T> gva_core(ad::Tape<T>& tape, const ad::Var<T>& x, const std::vector<T>& positions,
                    const std::vector<std::uint32_t>& neighbors, std::size_t k,
                    const GvaBlockT<T>& blk, int groups) {
    const std::size_t n = x.rows();
    const std::size_t C = x.cols();
    const std::size_t G = static_cast<std::size_t>(groups);
    const std::size_t gs = C / G;
    const std::size_t H = blk.wenc_w1.rows();
    if (neighbors.size() != n * k) throw std::invalid_argument("gva_core: neighbor table size mismatch");

    ad::Var<T> q = ad::linear(tape, x, blk.q_w, blk.q_b);
    ad::Var<T> kk = ad::linear(tape, x, blk.k_w, blk.k_b);
    ad::Var<T> v = ad::linear(tape, x, blk.v_w, blk.v_b);

    auto h1 = std::make_shared<ad::Tensor<T>>(n * k, C);   // pos MLP hidden (post-relu)
    auto e = std::make_shared<ad::Tensor<T>>(n * k, C);    // position encoding
    auto h2 = std::make_shared<ad::Tensor<T>>(n * k, H);   // weight MLP hidden (post-relu)
    auto w = std::make_shared<ad::Tensor<T>>(n * k, G);    // softmax weights
    ad::Var<T> out(n, C);

    const T* pw1 = blk.pos_w1.val->v.data();
    const T* pb1 = blk.pos_b1.val->v.data();
    const T* pw2 = blk.pos_w2.val->v.data();
    const T* pb2 = blk.pos_b2.val->v.data();
    const T* uw1 = blk.wenc_w1.val->v.data();
    const T* ub1 = blk.wenc_b1.val->v.data();
    const T* uw2 = blk.wenc_w2.val->v.data();
    const T* ub2 = blk.wenc_b2.val->v.data();

    std::vector<T> r(C);
    for (std::size_t i = 0; i < n; ++i) {
        const T* qi = q.val->row(i);
        for (std::size_t jj = 0; jj < k; ++jj) {
            const std::size_t row = i * k + jj;
            const std::uint32_t j = neighbors[row];
            const T d[3] = {positions[j * 3 + 0] - positions[i * 3 + 0],
                            positions[j * 3 + 1] - positions[i * 3 + 1],
                            positions[j * 3 + 2] - positions[i * 3 + 2]};
            T* h1r = h1->row(row);
            for (std::size_t c = 0; c < C; ++c) {
                T acc = pb1[c] + pw1[c * 3] * d[0] + pw1[c * 3 + 1] * d[1] + pw1[c * 3 + 2] * d[2];
                h1r[c] = acc > T(0) ? acc : T(0);
            }
            T* er = e->row(row);
            for (std::size_t c = 0; c < C; ++c) {
                const T* wrow = pw2 + c * C;
                T acc = pb2[c];
                for (std::size_t m = 0; m < C; ++m) acc += wrow[m] * h1r[m];
                er[c] = acc;
            }
            const T* kj = kk.val->row(j);
            for (std::size_t c = 0; c < C; ++c) r[c] = qi[c] - kj[c] + er[c];
            T* h2r = h2->row(row);
            for (std::size_t m = 0; m < H; ++m) {
                const T* urow = uw1 + m * C;
                T acc = ub1[m];
                for (std::size_t c = 0; c < C; ++c) acc += urow[c] * r[c];
                h2r[m] = acc > T(0) ? acc : T(0);
            }
            T* wr = w->row(row);
            for (std::size_t g = 0; g < G; ++g) {
                const T* urow = uw2 + g * H;
                T acc = ub2[g];
                for (std::size_t m = 0; m < H; ++m) acc += urow[m] * h2r[m];
                wr[g] = acc;  // raw scores; softmax below
            }
        }
        // softmax over neighbors, per group
        for (std::size_t g = 0; g < G; ++g) {
            T mx = w->at(i * k, g);
            for (std::size_t jj = 1; jj < k; ++jj) mx = std::max(mx, w->at(i * k + jj, g));
            T sum = T(0);
            for (std::size_t jj = 0; jj < k; ++jj) {
                T& cell = w->at(i * k + jj, g);
                cell = std::exp(cell - mx);
                sum += cell;
            }
            for (std::size_t jj = 0; jj < k; ++jj) w->at(i * k + jj, g) /= sum;
        }
        T* oi = out.val->row(i);
        for (std::size_t jj = 0; jj < k; ++jj) {
            const std::size_t row = i * k + jj;
            const std::uint32_t j = neighbors[row];
            const T* vj = v.val->row(j);
            const T* er = e->row(row);
            const T* wr = w->row(row);
            for (std::size_t c = 0; c < C; ++c) {
                oi[c] += wr[c / gs] * (vj[c] + er[c]);
            }
        }
    }

    tape.record([q, kk, v, out, h1, e, h2, w, blk, neighbors, positions, n, C, G, gs, H, k] {
        const T* pw1 = blk.pos_w1.val->v.data();
        const T* pw2 = blk.pos_w2.val->v.data();
        const T* uw1 = blk.wenc_w1.val->v.data();
        const T* uw2 = blk.wenc_w2.val->v.data();
        T* d_pw1 = blk.pos_w1.grad->v.data();
        T* d_pb1 = blk.pos_b1.grad->v.data();
        T* d_pw2 = blk.pos_w2.grad->v.data();
        T* d_pb2 = blk.pos_b2.grad->v.data();
        T* d_uw1 = blk.wenc_w1.grad->v.data();
        T* d_ub1 = blk.wenc_b1.grad->v.data();
        T* d_uw2 = blk.wenc_w2.grad->v.data();
        T* d_ub2 = blk.wenc_b2.grad->v.data();

        std::vector<T> du(C), dwg(k * G), ds(G), dh2(H), dpre2(H), dr(C), de(C), dh1(C), r(C);
        for (std::size_t i = 0; i < n; ++i) {
            const T* doi = out.grad->row(i);
            const T* qi = q.val->row(i);
            // dw for all neighbors first (needed by the softmax jacobian)
            for (std::size_t jj = 0; jj < k; ++jj) {
                const std::size_t row = i * k + jj;
                const std::uint32_t j = neighbors[row];
                const T* vj = v.val->row(j);
                const T* er = e->row(row);
                for (std::size_t g = 0; g < G; ++g) {
                    T acc = T(0);
                    for (std::size_t c = g * gs; c < (g + 1) * gs; ++c) acc += doi[c] * (vj[c] + er[c]);
                    dwg[jj * G + g] = acc;
                }
            }
            for (std::size_t g = 0; g < G; ++g) {
                T dot = T(0);
                for (std::size_t jj = 0; jj < k; ++jj) dot += w->at(i * k + jj, g) * dwg[jj * G + g];
                for (std::size_t jj = 0; jj < k; ++jj) {
                    dwg[jj * G + g] = w->at(i * k + jj, g) * (dwg[jj * G + g] - dot);
                }
            }
            for (std::size_t jj = 0; jj < k; ++jj) {
                const std::size_t row = i * k + jj;
                const std::uint32_t j = neighbors[row];
                const T* wr = w->row(row);
                const T* er = e->row(row);
                const T* vj = v.val->row(j);
                const T* kj = kk.val->row(j);
                // du = w ⊙g dout ; accumulate into dv_j
                T* dvj = v.grad->row(j);
                for (std::size_t c = 0; c < C; ++c) {
                    du[c] = wr[c / gs] * doi[c];
                    dvj[c] += du[c];
                }
                // weight-encoding MLP backward: ds -> dh2 -> dr
                for (std::size_t g = 0; g < G; ++g) ds[g] = dwg[jj * G + g];
                const T* h2r = h2->row(row);
                for (std::size_t m = 0; m < H; ++m) {
                    T acc = T(0);
                    for (std::size_t g = 0; g < G; ++g) acc += uw2[g * H + m] * ds[g];
                    dh2[m] = acc;
                    dpre2[m] = h2r[m] > T(0) ? acc : T(0);
                }
                for (std::size_t g = 0; g < G; ++g) {
                    if (ds[g] == T(0)) continue;
                    T* row2 = d_uw2 + g * H;
                    for (std::size_t m = 0; m < H; ++m) row2[m] += ds[g] * h2r[m];
                    d_ub2[g] += ds[g];
                }
                for (std::size_t c = 0; c < C; ++c) r[c] = qi[c] - kj[c] + er[c];
                for (std::size_t c = 0; c < C; ++c) {
                    T acc = T(0);
                    for (std::size_t m = 0; m < H; ++m) acc += uw1[m * C + c] * dpre2[m];
                    dr[c] = acc;
                }
                for (std::size_t m = 0; m < H; ++m) {
                    if (dpre2[m] == T(0)) continue;
                    T* row1 = d_uw1 + m * C;
                    for (std::size_t c = 0; c < C; ++c) row1[c] += dpre2[m] * r[c];
                    d_ub1[m] += dpre2[m];
                }
                // r and u both feed e; q and k through r; v through u
                T* dqi = q.grad->row(i);
                T* dkj = kk.grad->row(j);
                for (std::size_t c = 0; c < C; ++c) {
                    dqi[c] += dr[c];
                    dkj[c] -= dr[c];
                    de[c] = dr[c] + du[c];
                }
                // position MLP backward
                const T* h1r = h1->row(row);
                for (std::size_t m = 0; m < C; ++m) {
                    T acc = T(0);
                    for (std::size_t c = 0; c < C; ++c) acc += pw2[c * C + m] * de[c];
                    dh1[m] = h1r[m] > T(0) ? acc : T(0);
                }
                for (std::size_t c = 0; c < C; ++c) {
                    if (de[c] == T(0)) continue;
                    T* rw = d_pw2 + c * C;
                    for (std::size_t m = 0; m < C; ++m) rw[m] += de[c] * h1r[m];
                    d_pb2[c] += de[c];
                }
                const T d[3] = {positions[j * 3 + 0] - positions[i * 3 + 0],
                                positions[j * 3 + 1] - positions[i * 3 + 1],
                                positions[j * 3 + 2] - positions[i * 3 + 2]};
                for (std::size_t m = 0; m < C; ++m) {
                    if (dh1[m] == T(0)) continue;
                    d_pw1[m * 3 + 0] += dh1[m] * d[0];
                    d_pw1[m * 3 + 1] += dh1[m] * d[1];
                    d_pw1[m * 3 + 2] += dh1[m] * d[2];
                    d_pb1[m] += dh1[m];
                }
            }
        }
    });
    return out;
}

template <class T>
ad::Var<T> apply_block(ad::Tape<T>& tape, const ad::Var<T>& x, const std::vector<T>& positions,
                       const std::vector<std::uint32_t>& neighbors, std::size_t k,
                       const GvaBlockT<T>& blk, int groups) {
    ad::Var<T> n1 = ad::layer_norm(tape, x);
    ad::Var<T> att = gva_core(tape, n1, positions, neighbors, k, blk, groups);
    ad::Var<T> x1 = ad::add(tape, x, ad::scale_channels(tape, att, blk.gamma_att));
    ad::Var<T> n2 = ad::layer_norm(tape, x1);
    ad::Var<T> f = ad::linear(tape, ad::relu(tape, ad::linear(tape, n2, blk.ffn_w1, blk.ffn_b1)),
                              blk.ffn_w2, blk.ffn_b2);
    return ad::add(tape, x1, ad::scale_channels(tape, f, blk.gamma_ffn));
}

template <class T>
GridPoolResult<T> grid_pool(ad::Tape<T>& tape, const ad::Var<T>& x, const std::vector<T>& positions,
                            double cell, const ad::Var<T>& proj_w, const ad::Var<T>& proj_b) {
    const std::size_t n = x.rows();
    std::vector<double> xs(n), ys(n), zs(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = static_cast<double>(positions[i * 3 + 0]);
        ys[i] = static_cast<double>(positions[i * 3 + 1]);
        zs[i] = static_cast<double>(positions[i * 3 + 2]);
    }

    GridPoolResult<T> res;
    res.partition = grid_partition_xyz(xs, ys, zs, cell);
    const std::size_t m = res.partition.cells.size();

    ad::Var<T> proj = ad::linear(tape, x, proj_w, proj_b);
    const std::size_t C = proj.cols();

    ad::Var<T> pooled(m, C);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(m * C);
    res.positions.resize(m * 3);
    for (std::size_t cell_i = 0; cell_i < m; ++cell_i) {
        const auto& members = res.partition.cells[cell_i];
        T* prow = pooled.val->row(cell_i);
        std::uint32_t* arow = argmax->data() + cell_i * C;
        const T* first = proj.val->row(members[0]);
        for (std::size_t c = 0; c < C; ++c) {
            prow[c] = first[c];
            arow[c] = members[0];
        }
        double px = 0, py = 0, pz = 0;
        for (std::uint32_t idx : members) {
            const T* row = proj.val->row(idx);
            for (std::size_t c = 0; c < C; ++c) {
                if (row[c] > prow[c]) {
                    prow[c] = row[c];
                    arow[c] = idx;
                }
            }
            px += xs[idx];
            py += ys[idx];
            pz += zs[idx];
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        res.positions[cell_i * 3 + 0] = static_cast<T>(px * inv);
        res.positions[cell_i * 3 + 1] = static_cast<T>(py * inv);
        res.positions[cell_i * 3 + 2] = static_cast<T>(pz * inv);
    }
    tape.record([proj, pooled, argmax, m, C] {
        for (std::size_t i = 0; i < m; ++i) {
            const T* dp = pooled.grad->row(i);
            const std::uint32_t* arow = argmax->data() + i * C;
            for (std::size_t c = 0; c < C; ++c) {
                proj.grad->at(arow[c], c) += dp[c];
            }
        }
    });
    res.features = pooled;
    return res;
}

template <class T>
ad::Var<T> grid_unpool(ad::Tape<T>& tape, const ad::Var<T>& coarse, const PoolPartition& partition,
                       const ad::Var<T>& proj_w, const ad::Var<T>& proj_b, const ad::Var<T>& skip) {
    if (partition.parent.size() != skip.rows()) {
        throw std::invalid_argument("grid_unpool: parent map does not match skip size");
    }
    ad::Var<T> proj = ad::linear(tape, coarse, proj_w, proj_b);
    const std::size_t n = skip.rows(), C = skip.cols();
    ad::Var<T> out(n, C);
    const auto parent = partition.parent;
    for (std::size_t i = 0; i < n; ++i) {
        const T* pr = proj.val->row(parent[i]);
        const T* sr = skip.val->row(i);
        T* orow = out.val->row(i);
        for (std::size_t c = 0; c < C; ++c) orow[c] = pr[c] + sr[c];
    }
    tape.record([proj, skip, out, parent, n, C] {
        for (std::size_t i = 0; i < n; ++i) {
            const T* dor = out.grad->row(i);
            T* dpr = proj.grad->row(parent[i]);
            T* dsr = skip.grad->row(i);
            for (std::size_t c = 0; c < C; ++c) {
                dpr[c] += dor[c];
                dsr[c] += dor[c];
            }
        }
    });
    return out;
}

template <class T>
ForwardResultT<T> forward_t(const SegModelT<T>& model, const std::vector<T>& features,
                            const std::vector<T>& positions, std::size_t n) {
    const ModelConfig& cfg = model.config;
    if (n == 0) throw std::invalid_argument("forward: empty input");
    if (features.size() != n * static_cast<std::size_t>(cfg.input_dim)) {
        throw std::invalid_argument("forward: feature matrix does not match input_dim");
    }
    if (positions.size() != n * 3) throw std::invalid_argument("forward: positions must be n x 3");

    ForwardResultT<T> res;
    res.input = ad::Var<T>(n, cfg.input_dim);
    res.input.val->v.assign(features.begin(), features.end());
    ad::Tape<T>& tape = res.tape;

    auto knn_of = [&](const std::vector<T>& pos, std::size_t count, std::size_t& k_eff) {
        std::vector<double> xs(count), ys(count), zs(count);
        for (std::size_t i = 0; i < count; ++i) {
            xs[i] = static_cast<double>(pos[i * 3 + 0]);
            ys[i] = static_cast<double>(pos[i * 3 + 1]);
            zs[i] = static_cast<double>(pos[i * 3 + 2]);
        }
        k_eff = std::min<std::size_t>(cfg.neighbors_k, count);
        return knn_neighbors(xs, ys, zs, k_eff);
    };

    ad::Var<T> x = ad::linear(tape, res.input, model.embed_w1, model.embed_b1);
    x = ad::relu(tape, x);
    x = ad::linear(tape, x, model.embed_w2, model.embed_b2);
    detail::check_finite(*x.val, "embed");

    const int S = cfg.stages;
    std::vector<ad::Var<T>> skips(S);
    std::vector<PoolPartition> partitions(S - 1);
    std::vector<std::vector<T>> level_pos(S);
    level_pos[0] = positions;

    for (int s = 0; s < S; ++s) {
        std::size_t count = x.rows();
        std::size_t k_eff = 0;
        auto nbrs = knn_of(level_pos[s], count, k_eff);
        x = apply_block(tape, x, level_pos[s], nbrs, k_eff, model.enc_blocks[s], cfg.attention_groups);
        detail::check_finite(*x.val, ("enc" + std::to_string(s)).c_str());
        skips[s] = x;
        if (s + 1 < S) {
            double cell = cfg.base_grid * static_cast<double>(1 << s);
            auto pooled = grid_pool(tape, x, level_pos[s], cell, model.pool_w[s], model.pool_b[s]);
            x = pooled.features;
            level_pos[s + 1] = std::move(pooled.positions);
            partitions[s] = std::move(pooled.partition);
            detail::check_finite(*x.val, ("pool" + std::to_string(s)).c_str());
        }
    }

    for (int s = S - 2; s >= 0; --s) {
        x = grid_unpool(tape, x, partitions[s], model.unpool_w[s], model.unpool_b[s], skips[s]);
        std::size_t k_eff = 0;
        auto nbrs = knn_of(level_pos[s], x.rows(), k_eff);
        x = apply_block(tape, x, level_pos[s], nbrs, k_eff, model.dec_blocks[s], cfg.attention_groups);
        detail::check_finite(*x.val, ("dec" + std::to_string(s)).c_str());
    }

    x = ad::linear(tape, x, model.head_w1, model.head_b1);
    x = ad::relu(tape, x);
    res.logits = ad::linear(tape, x, model.head_w2, model.head_b2);
    detail::check_finite(*res.logits.val, "head");
    return res;
}

}  // namespace mspc
