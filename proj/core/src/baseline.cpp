#include "mspc/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mspc/parallel.hpp"

namespace mspc {

namespace {

struct TreeBuilder {
    std::span<const float> features;
    int dim;
    std::span<const std::uint8_t> labels;
    const ForestConfig& config;
    int mtry;
    std::mt19937_64 rng;
    DecisionTree tree;
    std::vector<std::uint32_t> samples;  // bootstrap sample, partitioned in place
    std::vector<std::pair<float, std::uint8_t>> scratch;

    float value(std::uint32_t idx, int f) const { return features[idx * static_cast<std::size_t>(dim) + f]; }

    static double gini(const std::array<std::uint32_t, kNumClasses>& counts, std::uint32_t total) {
        double g = 1.0;
        for (std::uint32_t c : counts) {
            double p = static_cast<double>(c) / total;
            g -= p * p;
        }
        return g;
    }

    std::int32_t make_leaf(std::uint32_t begin, std::uint32_t end) {
        TreeNode node;
        for (std::uint32_t s = begin; s < end; ++s) ++node.counts[labels[samples[s]]];
        tree.nodes.push_back(node);
        return static_cast<std::int32_t>(tree.nodes.size() - 1);
    }

    std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth) {
        const std::uint32_t n = end - begin;
        std::array<std::uint32_t, kNumClasses> counts{};
        for (std::uint32_t s = begin; s < end; ++s) ++counts[labels[samples[s]]];
        int present = 0;
        for (std::uint32_t c : counts) present += c > 0;
        if (depth >= config.max_depth || present <= 1 ||
            n < 2 * static_cast<std::uint32_t>(config.min_samples_leaf)) {
            return make_leaf(begin, end);
        }

        // random feature subset (partial Fisher-Yates over the indices)
        std::vector<int> feats(dim);
        for (int f = 0; f < dim; ++f) feats[f] = f;
        for (int i = 0; i < mtry; ++i) {
            std::uniform_int_distribution<int> pick(i, dim - 1);
            std::swap(feats[i], feats[pick(rng)]);
        }

        const double parent_gini = gini(counts, n);
        double best_gain = 0.0;
        int best_feature = -1;
        float best_threshold = 0.0f;

        for (int fi = 0; fi < mtry; ++fi) {
            const int f = feats[fi];
            scratch.clear();
            for (std::uint32_t s = begin; s < end; ++s) {
                scratch.emplace_back(value(samples[s], f), labels[samples[s]]);
            }
            std::sort(scratch.begin(), scratch.end());
            std::array<std::uint32_t, kNumClasses> left{};
            std::uint32_t nl = 0;
            for (std::uint32_t i = 0; i + 1 < n; ++i) {
                ++left[scratch[i].second];
                ++nl;
                if (scratch[i].first == scratch[i + 1].first) continue;
                const std::uint32_t nr = n - nl;
                if (nl < static_cast<std::uint32_t>(config.min_samples_leaf) ||
                    nr < static_cast<std::uint32_t>(config.min_samples_leaf)) {
                    continue;
                }
                std::array<std::uint32_t, kNumClasses> right{};
                for (int c = 0; c < kNumClasses; ++c) right[c] = counts[c] - left[c];
                const double child =
                    (nl * gini(left, nl) + nr * gini(right, nr)) / static_cast<double>(n);
                const double gain = parent_gini - child;
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = 0.5f * (scratch[i].first + scratch[i + 1].first);
                }
            }
        }

        if (best_feature < 0) return make_leaf(begin, end);

        auto mid_it = std::partition(samples.begin() + begin, samples.begin() + end,
                                     [&](std::uint32_t idx) { return value(idx, best_feature) < best_threshold; });
        const auto mid = static_cast<std::uint32_t>(mid_it - samples.begin());
        if (mid == begin || mid == end) return make_leaf(begin, end);

        TreeNode node;
        node.feature = best_feature;
        node.threshold = best_threshold;
        tree.nodes.push_back(node);
        const auto self = static_cast<std::int32_t>(tree.nodes.size() - 1);
        const std::int32_t l = build(begin, mid, depth + 1);
        const std::int32_t r = build(mid, end, depth + 1);
        tree.nodes[self].left = l;
        tree.nodes[self].right = r;
        return self;
    }
};

int leaf_vote(const DecisionTree& tree, const float* row) {
    std::int32_t cur = 0;
    while (tree.nodes[cur].feature >= 0) {
        const TreeNode& node = tree.nodes[cur];
        cur = row[node.feature] < node.threshold ? node.left : node.right;
    }
    const auto& counts = tree.nodes[cur].counts;
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c) {
        if (counts[c] > counts[best]) best = c;
    }
    return best;
}

}  // namespace

Forest rf_train(std::span<const float> features, std::size_t n, int dim,
                std::span<const std::uint8_t> labels, const ForestConfig& config) {
    if (config.n_trees < 1) throw std::invalid_argument("rf_train: n_trees must be >= 1");
    if (dim < 1) throw std::invalid_argument("rf_train: dim must be >= 1");
    if (features.size() != n * static_cast<std::size_t>(dim) || labels.size() != n) {
        throw std::invalid_argument("rf_train: feature/label shape mismatch");
    }

    std::vector<std::uint32_t> usable;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < kNumClasses) usable.push_back(static_cast<std::uint32_t>(i));
    }
    if (usable.size() < 2) throw std::invalid_argument("rf_train: need at least 2 labeled rows");

    Forest forest;
    forest.config = config;
    forest.dim = dim;
    forest.trees.resize(config.n_trees);

    const int mtry = config.features_per_split > 0
                         ? std::min(config.features_per_split, dim)
                         : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(dim))));

    // Per-tree seeds are drawn up front so trees can build in parallel and
    // still come out identical at any worker count.
    std::mt19937_64 master(config.seed);
    std::vector<std::uint64_t> seeds(config.n_trees);
    for (auto& s : seeds) s = master();

    parallel_for(static_cast<std::size_t>(config.n_trees), [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            TreeBuilder builder{features, dim, labels, config, mtry, std::mt19937_64(seeds[t]), {}, {}, {}};
            builder.samples.resize(usable.size());
            std::uniform_int_distribution<std::size_t> draw(0, usable.size() - 1);
            for (auto& s : builder.samples) s = usable[draw(builder.rng)];
            builder.tree.nodes.reserve(64);
            builder.build(0, static_cast<std::uint32_t>(builder.samples.size()), 0);
            forest.trees[t] = std::move(builder.tree);
        }
    });
    return forest;
}

RfPrediction rf_predict(const Forest& forest, std::span<const float> features, std::size_t n, int dim) {
    if (dim != forest.dim) throw std::invalid_argument("rf_predict: feature dimensionality mismatch");
    if (features.size() != n * static_cast<std::size_t>(dim)) {
        throw std::invalid_argument("rf_predict: feature matrix shape mismatch");
    }
    RfPrediction pred;
    pred.labels.resize(n);
    pred.vote_fractions.assign(n * kNumClasses, 0.0f);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const float* row = features.data() + i * dim;
            std::array<std::uint32_t, kNumClasses> votes{};
            for (const DecisionTree& tree : forest.trees) ++votes[leaf_vote(tree, row)];
            int best = 0;
            for (int c = 0; c < kNumClasses; ++c) {
                pred.vote_fractions[i * kNumClasses + c] =
                    static_cast<float>(votes[c]) / static_cast<float>(forest.trees.size());
                if (votes[c] > votes[best]) best = c;
            }
            pred.labels[i] = static_cast<std::uint8_t>(best);
        }
    });
    return pred;
}

}  // namespace mspc
