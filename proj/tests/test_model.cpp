#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "mspc/model.hpp"

using namespace mspc;
using test::gradcheck_max_rel_err;
using test::randomize;
using test::RunOut;

namespace {

template <class T>
GvaBlockT<T> random_block(int width, int groups, std::mt19937_64& rng) {
    GvaBlockT<T> blk;
    detail::init_block(rng, blk, width, groups);
    return blk;
}

std::vector<double> random_positions_d(std::size_t n, std::mt19937_64& rng, double extent = 2.0) {
    std::uniform_real_distribution<double> u(0.0, extent);
    std::vector<double> pos(n * 3);
    for (auto& v : pos) v = u(rng);
    return pos;
}

template <class T>
std::vector<T> to_t(const std::vector<double>& src) {
    return std::vector<T>(src.begin(), src.end());
}

std::vector<std::uint32_t> knn_of_positions(const std::vector<double>& pos, std::size_t k) {
    const std::size_t n = pos.size() / 3;
    std::vector<double> xs(n), ys(n), zs(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = pos[i * 3];
        ys[i] = pos[i * 3 + 1];
        zs[i] = pos[i * 3 + 2];
    }
    return knn_neighbors(xs, ys, zs, k);
}

}  // namespace

TEST_CASE("same seed builds bit-identical models") {
    ModelConfig cfg;
    cfg.input_dim = 17;
    SegModel a = build_model(cfg);
    SegModel b = build_model(cfg);
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.val->v == pb[i].second.val->v);
    }
    cfg.seed = 43;
    SegModel c = build_model(cfg);
    CHECK(c.embed_w1.val->v != a.embed_w1.val->v);
}

TEST_CASE("parameter count matches closed-form dimension arithmetic") {
    ModelConfig cfg;  // defaults: stages 3, width 32, groups 4, classes 6, input 17
    SegModel m = build_model(cfg);

    auto linear_params = [](int out, int in) { return static_cast<std::size_t>(out) * in + out; };
    auto block_params = [&](int c) {
        const int h = c / 2;
        std::size_t p = 3 * linear_params(c, c);          // q, k, v
        p += linear_params(c, 3) + linear_params(c, c);   // position MLP
        p += linear_params(h, c) + linear_params(cfg.attention_groups, h);  // weight MLP
        p += static_cast<std::size_t>(c);                 // gamma_att
        p += 2 * linear_params(c, c);                     // ffn
        p += static_cast<std::size_t>(c);                 // gamma_ffn
        return p;
    };
    std::size_t expect = linear_params(32, 17) + linear_params(32, 32);  // embedding
    expect += block_params(32) + block_params(64) + block_params(128);   // encoder
    expect += linear_params(64, 32) + linear_params(128, 64);            // pools
    expect += block_params(32) + block_params(64);                       // decoder
    expect += linear_params(32, 64) + linear_params(64, 128);            // unpools
    expect += linear_params(32, 32) + linear_params(6, 32);              // head
    CHECK(m.parameter_count() == expect);
}

TEST_CASE("invalid configurations are rejected") {
    ModelConfig cfg;
    cfg.attention_groups = 5;  // does not divide 32
    CHECK_THROWS_AS(build_model(cfg), std::invalid_argument);
    ModelConfig cfg2;
    cfg2.stages = 0;
    CHECK_THROWS_AS(build_model(cfg2), std::invalid_argument);
}

TEST_CASE("attention with k=1 and zero position encoding reduces to input + value") {
    std::mt19937_64 rng(5);
    const int C = 8, G = 2;
    auto blk = random_block<double>(C, G, rng);
    // zero-initialized position MLP, identity value projection
    blk.pos_w1.val->zero();
    blk.pos_b1.val->zero();
    blk.pos_w2.val->zero();
    blk.pos_b2.val->zero();
    blk.v_w.val->zero();
    for (int c = 0; c < C; ++c) blk.v_w.val->at(c, c) = 1.0;
    blk.v_b.val->zero();

    const std::size_t n = 6;
    ad::Var<double> x(n, C);
    randomize(x, rng);
    auto pos = random_positions_d(n, rng);
    std::vector<std::uint32_t> self_only(n);
    for (std::size_t i = 0; i < n; ++i) self_only[i] = static_cast<std::uint32_t>(i);

    ad::Tape<double> tape;
    auto out = grouped_vector_attention(tape, x, pos, self_only, 1, blk, G);
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < C; ++c) {
            CHECK(out.val->at(i, c) == doctest::Approx(2.0 * x.val->at(i, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("attention weights sum to one per point and group") {
    // zero value projection and constant position encoding of 1 turn the
    // output into the plain weight sum per channel
    std::mt19937_64 rng(6);
    const int C = 8, G = 4;
    auto blk = random_block<double>(C, G, rng);
    blk.v_w.val->zero();
    blk.v_b.val->zero();
    blk.pos_w1.val->zero();
    blk.pos_b1.val->zero();
    blk.pos_w2.val->zero();
    for (auto& v : blk.pos_b2.val->v) v = 1.0;

    const std::size_t n = 12, k = 5;
    ad::Var<double> x(n, C);
    randomize(x, rng);
    auto pos = random_positions_d(n, rng);
    auto nbrs = knn_of_positions(pos, k);

    ad::Tape<double> tape;
    auto out = gva_core(tape, x, pos, nbrs, k, blk, G);
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < C; ++c) {
            CHECK(out.val->at(i, c) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("attention output is invariant to neighbor order") {
    std::mt19937_64 rng(7);
    const int C = 8, G = 2;
    auto blk = random_block<double>(C, G, rng);
    const std::size_t n = 10, k = 6;
    ad::Var<double> x(n, C);
    randomize(x, rng);
    auto pos = random_positions_d(n, rng);
    auto nbrs = knn_of_positions(pos, k);
    auto reversed = nbrs;
    for (std::size_t i = 0; i < n; ++i) {
        std::reverse(reversed.begin() + i * k, reversed.begin() + (i + 1) * k);
    }
    ad::Tape<double> t1, t2;
    auto out1 = gva_core(t1, x, pos, nbrs, k, blk, G);
    auto out2 = gva_core(t2, x, pos, reversed, k, blk, G);
    for (std::size_t i = 0; i < out1.val->count(); ++i) {
        CHECK(out1.val->v[i] == doctest::Approx(out2.val->v[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradcheck: linear, relu, layer norm, scale") {
    std::mt19937_64 rng(11);
    const std::size_t n = 7;
    const int in = 5, out = 4;
    ad::Var<double> x(n, in), W(out, in), b(1, out), gamma(1, out);
    randomize(x, rng);
    randomize(W, rng);
    randomize(b, rng);
    randomize(gamma, rng);

    auto run = [&]() {
        RunOut<double> r;
        auto y = ad::linear(r.tape, x, W, b);
        y = ad::layer_norm(r.tape, y);
        y = ad::relu(r.tape, y);
        r.out = ad::scale_channels(r.tape, y, gamma);
        return r;
    };
    double err = gradcheck_max_rel_err<double>({x, W, b, gamma}, run, 1);
    CHECK(err < 1e-4);
}

TEST_CASE("gradcheck: grouped vector attention core and full op") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        std::mt19937_64 rng(seed);
        const int C = 8, G = 2;
        auto blk = random_block<double>(C, G, rng);
        const std::size_t n = 9, k = 4;
        ad::Var<double> x(n, C);
        randomize(x, rng);
        auto pos = random_positions_d(n, rng);
        auto nbrs = knn_of_positions(pos, k);

        std::vector<ad::Var<double>> checked = {x,          blk.q_w,     blk.q_b,     blk.k_w,
                                                blk.k_b,    blk.v_w,     blk.v_b,     blk.pos_w1,
                                                blk.pos_b1, blk.pos_w2,  blk.pos_b2,  blk.wenc_w1,
                                                blk.wenc_b1, blk.wenc_w2, blk.wenc_b2};
        auto run = [&]() {
            RunOut<double> r;
            r.out = grouped_vector_attention(r.tape, x, pos, nbrs, k, blk, G);
            return r;
        };
        double err = gradcheck_max_rel_err<double>(checked, run, seed * 100 + 1);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradcheck: full pre-norm block") {
    std::mt19937_64 rng(21);
    const int C = 8, G = 4;
    auto blk = random_block<double>(C, G, rng);
    const std::size_t n = 8, k = 3;
    ad::Var<double> x(n, C);
    randomize(x, rng);
    auto pos = random_positions_d(n, rng);
    auto nbrs = knn_of_positions(pos, k);

    std::vector<ad::Var<double>> checked = {x, blk.gamma_att, blk.gamma_ffn, blk.ffn_w1, blk.ffn_b1,
                                            blk.ffn_w2, blk.ffn_b2, blk.q_w, blk.pos_w2, blk.wenc_w1};
    auto run = [&]() {
        RunOut<double> r;
        r.out = apply_block(r.tape, x, pos, nbrs, k, blk, G);
        return r;
    };
    CHECK(gradcheck_max_rel_err<double>(checked, run, 77) < 1e-4);
}

TEST_CASE("grid pool semantics") {
    std::mt19937_64 rng(31);
    const std::size_t n = 6;
    const int C = 4;

    SUBCASE("all points in one cell pool to the elementwise max") {
        ad::Var<double> x(n, C);
        randomize(x, rng);
        ad::Var<double> W(C, C), b(1, C);
        W.val->zero();
        for (int c = 0; c < C; ++c) W.val->at(c, c) = 1.0;
        std::vector<double> pos(n * 3, 0.25);  // coincident-ish inside one cell
        ad::Tape<double> tape;
        auto res = grid_pool(tape, x, pos, 10.0, W, b);
        REQUIRE(res.features.rows() == 1);
        for (int c = 0; c < C; ++c) {
            double mx = x.val->at(0, c);
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.val->at(i, c));
            CHECK(res.features.val->at(0, c) == mx);
        }
        CHECK(res.partition.parent == std::vector<std::uint32_t>(n, 0));
    }

    SUBCASE("points in distinct cells keep their count and centroids") {
        ad::Var<double> x(n, C);
        randomize(x, rng);
        ad::Var<double> W(C, C), b(1, C);
        randomize(W, rng);
        std::vector<double> pos(n * 3);
        for (std::size_t i = 0; i < n; ++i) pos[i * 3] = static_cast<double>(i);  // 1 m apart
        ad::Tape<double> tape;
        auto res = grid_pool(tape, x, pos, 0.5, W, b);
        CHECK(res.features.rows() == n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(res.positions[i * 3] == doctest::Approx(pos[i * 3]));
        }
    }

    SUBCASE("pooled cell count equals the voxel oracle on a random cloud") {
        const std::size_t big = 500;
        ad::Var<double> x(big, C);
        randomize(x, rng);
        ad::Var<double> W(C, C), b(1, C);
        randomize(W, rng);
        auto pos = random_positions_d(big, rng, 3.0);
        const double cell = 0.4;
        std::vector<double> xs(big), ys(big), zs(big);
        for (std::size_t i = 0; i < big; ++i) {
            xs[i] = pos[i * 3];
            ys[i] = pos[i * 3 + 1];
            zs[i] = pos[i * 3 + 2];
        }
        PointCloud pc;
        for (std::size_t i = 0; i < big; ++i) {
            MultispectralPoint p;
            p.x = xs[i];
            p.y = ys[i];
            p.z = zs[i];
            pc.push_back(p);
        }
        ad::Tape<double> tape;
        auto res = grid_pool(tape, x, pos, cell, W, b);
        CHECK(res.features.rows() == voxelize(pc, cell).cell_count());
    }
}

TEST_CASE("pool then unpool with identity projections spreads each cell max") {
    std::mt19937_64 rng(41);
    const std::size_t n = 20;
    const int C = 4;
    ad::Var<double> x(n, C);
    randomize(x, rng);
    ad::Var<double> W(C, C), b(1, C);
    W.val->zero();
    for (int c = 0; c < C; ++c) W.val->at(c, c) = 1.0;
    ad::Var<double> zero_skip(n, C);
    auto pos = random_positions_d(n, rng, 2.0);

    ad::Tape<double> tape;
    auto pooled = grid_pool(tape, x, pos, 0.7, W, b);
    auto fine = grid_unpool(tape, pooled.features, pooled.partition, W, b, zero_skip);
    REQUIRE(fine.rows() == n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto cell = pooled.partition.parent[i];
        for (int c = 0; c < C; ++c) {
            CHECK(fine.val->at(i, c) == pooled.features.val->at(cell, c));
        }
    }
    ad::Var<double> bad_skip(n + 1, C);
    CHECK_THROWS_AS(grid_unpool(tape, pooled.features, pooled.partition, W, b, bad_skip),
                    std::invalid_argument);
}

TEST_CASE("gradcheck: grid pool and unpool pair") {
    for (std::uint64_t seed : {4ull, 5ull}) {
        std::mt19937_64 rng(seed);
        const std::size_t n = 14;
        const int cf = 4, cc = 6;
        ad::Var<double> x(n, cf), skip(n, cf);
        randomize(x, rng);
        randomize(skip, rng);
        ad::Var<double> Wp(cc, cf), bp(1, cc), Wu(cf, cc), bu(1, cf);
        randomize(Wp, rng);
        randomize(bp, rng);
        randomize(Wu, rng);
        randomize(bu, rng);
        auto pos = random_positions_d(n, rng, 1.5);

        auto run = [&]() {
            RunOut<double> r;
            auto pooled = grid_pool(r.tape, x, pos, 0.6, Wp, bp);
            r.out = grid_unpool(r.tape, pooled.features, pooled.partition, Wu, bu, skip);
            return r;
        };
        CHECK(gradcheck_max_rel_err<double>({x, skip, Wp, bp, Wu, bu}, run, seed) < 1e-4);
    }
}

TEST_CASE("forward: single point produces one logit row") {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.stages = 2;
    cfg.base_width = 8;
    cfg.attention_groups = 2;
    cfg.neighbors_k = 4;
    SegModel m = build_model(cfg);
    std::vector<float> feats(5, 0.5f), pos(3, 0.0f);
    auto res = forward(m, feats, pos, 1);
    CHECK(res.logits.rows() == 1);
    CHECK(res.logits.cols() == 6);
}

TEST_CASE("forward: xy translation leaves logits unchanged within 1e-5") {
    ModelConfig cfg;
    cfg.input_dim = 3;
    cfg.stages = 2;
    cfg.base_width = 8;
    cfg.attention_groups = 2;
    cfg.neighbors_k = 4;
    SegModel m = build_model(cfg);
    std::mt19937_64 rng(3);
    const std::size_t n = 64;
    std::vector<float> pos(n * 3);
    std::uniform_real_distribution<float> u(0.f, 3.f);
    for (auto& v : pos) v = u(rng);
    std::vector<float> feats = pos;  // xyz config: features are the coordinates

    auto base = forward(m, feats, pos, n);
    std::vector<float> pos2 = pos;
    std::vector<float> feats2 = feats;
    for (std::size_t i = 0; i < n; ++i) {
        pos2[i * 3] += 50.f;
        pos2[i * 3 + 1] -= 20.f;
        feats2[i * 3] += 50.f;
        feats2[i * 3 + 1] -= 20.f;
    }
    auto moved = forward(m, feats2, pos2, n);
    for (std::size_t i = 0; i < base.logits.val->count(); ++i) {
        CHECK(std::abs(base.logits.val->v[i] - moved.logits.val->v[i]) < 1e-5f);
    }
}

TEST_CASE("forward: permuting points permutes logits identically") {
    ModelConfig cfg;
    cfg.input_dim = 4;
    cfg.stages = 3;
    cfg.base_width = 8;
    cfg.attention_groups = 2;
    cfg.neighbors_k = 4;
    cfg.base_grid = 0.3;
    SegModel m = build_model(cfg);
    std::mt19937_64 rng(9);
    const std::size_t n = 60;
    std::vector<float> pos(n * 3), feats(n * 4);
    std::uniform_real_distribution<float> u(0.f, 2.f);
    for (auto& v : pos) v = u(rng);
    for (auto& v : feats) v = u(rng);

    auto base = forward(m, feats, pos, n);

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> pos2(n * 3), feats2(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) pos2[perm[i] * 3 + a] = pos[i * 3 + a];
        for (int a = 0; a < 4; ++a) feats2[perm[i] * 4 + a] = feats[i * 4 + a];
    }
    auto permuted = forward(m, feats2, pos2, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 6; ++c) {
            CHECK(permuted.logits.val->at(perm[i], c) == base.logits.val->at(i, c));
        }
    }
}

TEST_CASE("forward reports the layer on non-finite values") {
    ModelConfig cfg;
    cfg.input_dim = 3;
    cfg.stages = 1;
    cfg.base_width = 8;
    cfg.attention_groups = 2;
    SegModel m = build_model(cfg);
    std::vector<float> feats(9, 0.1f), pos(9, 0.1f);
    feats[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(forward(m, feats, pos, 3), doctest::Contains("embed"), std::runtime_error);
}

TEST_CASE("full-model gradient check on a tiny configuration") {
    ModelConfig cfg;
    cfg.input_dim = 4;
    cfg.stages = 2;
    cfg.base_width = 4;
    cfg.attention_groups = 2;
    cfg.neighbors_k = 3;
    cfg.base_grid = 0.5;
    cfg.num_classes = 6;
    cfg.seed = 123;
    SegModelT<double> m = build_model_t<double>(cfg);

    std::mt19937_64 rng(55);
    const std::size_t n = 20;
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::vector<double> pos(n * 3), feats(n * 4);
    for (auto& v : pos) v = u(rng);
    for (auto& v : feats) v = u(rng);

    std::vector<ad::Var<double>> checked;
    for (auto& [name, var] : m.parameters()) checked.push_back(var);

    auto run = [&]() {
        RunOut<double> r;
        auto res = forward_t<double>(m, feats, pos, n);
        r.out = res.logits;
        r.tape = std::move(res.tape);
        return r;
    };
    CHECK(gradcheck_max_rel_err<double>(checked, run, 991) < 1e-5);
}

TEST_CASE("full-model gradient check at f32 stays under 1e-3") {
    ModelConfig cfg;
    cfg.input_dim = 3;
    cfg.stages = 2;
    cfg.base_width = 4;
    cfg.attention_groups = 2;
    cfg.neighbors_k = 3;
    cfg.base_grid = 0.5;
    cfg.seed = 321;
    SegModel m = build_model(cfg);

    std::mt19937_64 rng(66);
    const std::size_t n = 16;
    std::uniform_real_distribution<float> u(0.f, 2.f);
    std::vector<float> pos(n * 3), feats(n * 3);
    for (auto& v : pos) v = u(rng);
    for (auto& v : feats) v = u(rng);

    std::vector<ad::Var<float>> checked = {m.embed_w1, m.head_w2, m.enc_blocks[0].pos_w2,
                                           m.enc_blocks[1].wenc_w1, m.unpool_w[0]};
    auto run = [&]() {
        RunOut<float> r;
        auto res = forward(m, feats, pos, n);
        r.out = res.logits;
        r.tape = std::move(res.tape);
        return r;
    };
    CHECK(gradcheck_max_rel_err<float>(checked, run, 661, 1e-2, 1e-2) < 1e-3);
}

TEST_CASE("checkpoint round trip is bit exact and under 20 MB") {
    ModelConfig cfg;  // defaults
    SegModel m = build_model(cfg);
    NormStats stats;
    for (int f = 0; f < NormStats::kCount; ++f) {
        stats.mean[f] = 0.1 * f;
        stats.stddev[f] = 1.0 + 0.01 * f;
    }
    std::string bytes = save_checkpoint(m, ChannelSetConfig::AllFeatures, stats);
    CHECK(bytes.size() < 20u * 1024 * 1024);

    Checkpoint ck = load_checkpoint(bytes);
    CHECK(ck.channel_set == ChannelSetConfig::AllFeatures);
    CHECK(ck.stats.mean == stats.mean);
    auto pa = m.parameters();
    auto pb = ck.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].second.val->v == pb[i].second.val->v);
    }

    // forward output of the reloaded model is bit-identical
    std::mt19937_64 rng(77);
    const std::size_t n = 40;
    std::uniform_real_distribution<float> u(0.f, 2.f);
    std::vector<float> pos(n * 3), feats(n * 17);
    for (auto& v : pos) v = u(rng);
    for (auto& v : feats) v = u(rng);
    auto r1 = forward(m, feats, pos, n);
    auto r2 = forward(ck.model, feats, pos, n);
    CHECK(r1.logits.val->v == r2.logits.val->v);

    CHECK_THROWS_WITH_AS(load_checkpoint(bytes.substr(0, bytes.size() / 2)),
                         doctest::Contains("truncated"), std::runtime_error);
    std::string wrong_version = bytes;
    wrong_version[4] = 9;
    CHECK_THROWS_WITH_AS(load_checkpoint(wrong_version), doctest::Contains("version"),
                         std::runtime_error);
}
