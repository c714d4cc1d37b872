#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mspc/core.hpp"
#include "mspc/eval.hpp"
#include "mspc/features.hpp"
#include "mspc/model.hpp"

namespace mspc {

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;  // tiles
    double lr = 1e-3;
    double lr_min = 1e-5;
    double weight_decay = 0.075;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double tile_size = 10.0;  // meters
    int max_points_per_tile = 4096;
    double scale_min = 0.8;
    double scale_max = 1.2;
    double translate_range = 0.2;  // meters, per axis
    double dataset_mix = 0.5;      // fraction of each batch from dataset 0
    std::uint64_t seed = 42;
    int val_every = 1;             // epochs between validation passes
    double stop_at_val_miou = -1;  // early-stop target; < 0 disables
};

struct Tile {
    std::vector<std::size_t> indices;  // into the source cloud
    int dataset_id = 0;
    std::size_t labeled_count = 0;
    // cached model inputs (unaugmented)
    std::vector<float> features;
    std::vector<float> positions;  // n x 3
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return indices.size(); }
};

struct ClassWeights {
    std::array<double, kNumClasses> w{};
};

/// xy grid of tile_size cells over the cloud footprint. In training mode
/// tiles over the point cap are randomly subsampled (seeded) and tiles
/// with no labeled point are dropped; in coverage mode every point lands
/// in exactly one tile.
std::vector<Tile> make_tiles(const PointCloud& cloud, const TrainConfig& config, bool training_mode,
                             int dataset_id = 0);

/// Fills the cached feature matrix, positions and labels of each tile.
void fill_tile_inputs(std::vector<Tile>& tiles, const PointCloud& cloud, ChannelSetConfig channel_set,
                      const NormStats& stats, std::span<const double> height_above_ground);

/// w_c = N_total / (6 * N_c): inverse frequency. Every class must be
/// present in the pooled histogram.
ClassWeights compute_class_weights(const std::vector<std::array<std::uint64_t, kNumClasses>>& histograms);

template <class T>
struct CeResult {
    double loss = 0;
    std::vector<T> dlogits;  // m x classes
};

/// Weighted softmax cross-entropy over labeled rows:
/// loss = sum_i w_{y_i} * (-log softmax(logits_i)[y_i]) / sum_i w_{y_i}.
/// Rows labeled Unlabeled contribute nothing and get zero gradient.
template <class T>
CeResult<T> weighted_cross_entropy(std::span<const T> logits, int classes,
                                   std::span<const std::uint8_t> labels, const ClassWeights& weights);

/// One uniform scale about the centroid then a per-axis uniform shift;
/// applied to positions only.
void augment_positions(std::vector<float>& positions, const TrainConfig& config, std::mt19937_64& rng);

struct AdamState {
    std::vector<std::vector<float>> m, v;
    std::int64_t t = 0;
};

AdamState make_adam_state(const SegModel& model);

/// Decoupled-weight-decay Adam step over all parameters, using gradients
/// accumulated in the model Vars.
void adamw_step(SegModel& model, AdamState& state, double lr_t, const TrainConfig& config);

/// Cosine annealing from lr to lr_min across the epoch range.
double cosine_lr(int epoch, const TrainConfig& config);

/// One batch: (dataset id, tile index) slots.
using Batch = std::vector<std::pair<int, std::size_t>>;

/// Every batch takes ceil(mix * batch_size) tiles from dataset 0 and the
/// remainder from the others; per-dataset sampling is without replacement,
/// reshuffled each epoch, and smaller datasets are recycled. The epoch
/// ends before any dataset would repeat a tile beyond its recycle cycle.
std::vector<Batch> multi_dataset_batches(const std::vector<std::size_t>& tiles_per_dataset,
                                         const TrainConfig& config, std::mt19937_64& rng);

struct EpochStats {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_miou = -1;  // -1 when validation did not run this epoch
};

struct TrainResult {
    std::string best_checkpoint;  // serialized; best validation mIoU
    double best_val_miou = -1;
    int best_epoch = -1;
    std::vector<EpochStats> history;
};

/// Full training stack: CSF height normalization, normalization stats from
/// the training clouds, tiling, weighted CE, AdamW with cosine annealing,
/// multi-dataset batches. Deterministic given the seed (single worker).
TrainResult train(const std::vector<const PointCloud*>& train_clouds, const PointCloud& val_cloud,
                  ChannelSetConfig channel_set, ModelConfig model_config, TrainConfig config);

/// Tile a cloud (coverage mode), run the model, return per-point argmax
/// labels. Shared by validation, `predict` and `eval`.
std::vector<std::uint8_t> segment_cloud(const SegModel& model, ChannelSetConfig channel_set,
                                        const NormStats& stats, const PointCloud& cloud,
                                        const TrainConfig& tiling);

// template implementation

template <class T>
CeResult<T> weighted_cross_entropy(std::span<const T> logits, int classes,
                                   std::span<const std::uint8_t> labels, const ClassWeights& weights) {
    const std::size_t m = labels.size();
    if (logits.size() != m * static_cast<std::size_t>(classes)) {
        throw std::invalid_argument("weighted_cross_entropy: logits/labels size mismatch");
    }
    CeResult<T> res;
    res.dlogits.assign(logits.size(), T(0));
    double weight_sum = 0;
    double loss_sum = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= classes) continue;
        weight_sum += weights.w[labels[i]];
    }
    if (weight_sum == 0) {
        throw std::invalid_argument("weighted_cross_entropy: no labeled rows");
    }
    for (std::size_t i = 0; i < m; ++i) {
        const std::uint8_t y = labels[i];
        if (y >= classes) continue;
        const T* row = logits.data() + i * classes;
        T mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double denom = 0;
        for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
        const double log_denom = std::log(denom);
        const double wy = weights.w[y];
        loss_sum += wy * (log_denom - static_cast<double>(row[y] - mx));
        T* drow = res.dlogits.data() + i * classes;
        for (int c = 0; c < classes; ++c) {
            double p = std::exp(static_cast<double>(row[c] - mx)) / denom;
            double g = wy * (p - (c == y ? 1.0 : 0.0)) / weight_sum;
            drow[c] = static_cast<T>(g);
        }
    }
    res.loss = loss_sum / weight_sum;
    return res;
}

}  // namespace mspc
