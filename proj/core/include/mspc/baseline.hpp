#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mspc/core.hpp"

namespace mspc {

struct ForestConfig {
    int n_trees = 500;
    int max_depth = 20;
    int min_samples_leaf = 1;
    int features_per_split = 0;  // 0 selects floor(sqrt(dim))
    std::uint64_t seed = 42;
};

struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    float threshold = 0.0f;
    std::int32_t left = -1, right = -1;
    std::array<std::uint32_t, kNumClasses> counts{};  // leaf sample counts
};

struct DecisionTree {
    std::vector<TreeNode> nodes;
};

struct Forest {
    ForestConfig config;
    int dim = 0;
    std::vector<DecisionTree> trees;
};

/// Bootstrap-aggregated Gini trees with a random feature subset per split.
/// Rows labeled Unlabeled are ignored. Deterministic given the seed.
Forest rf_train(std::span<const float> features, std::size_t n, int dim,
                std::span<const std::uint8_t> labels, const ForestConfig& config = {});

struct RfPrediction {
    std::vector<std::uint8_t> labels;
    std::vector<float> vote_fractions;  // n x kNumClasses, rows sum to 1
};

/// Majority vote over trees (each tree votes its leaf's majority class);
/// vote count ties resolve to the lowest class index.
RfPrediction rf_predict(const Forest& forest, std::span<const float> features, std::size_t n, int dim);

}  // namespace mspc
