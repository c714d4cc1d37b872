#include "mspc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mspc/preprocess.hpp"

namespace mspc {

std::vector<Tile> make_tiles(const PointCloud& cloud, const TrainConfig& config, bool training_mode,
                             int dataset_id) {
    if (cloud.empty()) throw std::invalid_argument("make_tiles: empty cloud");
    if (config.tile_size <= 0) throw std::invalid_argument("make_tiles: tile_size must be positive");

    BoundingBox b = cloud.bounds();
    const double ts = config.tile_size;
    const std::int64_t nx =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((b.max.x - b.min.x) / ts)));
    const std::int64_t ny =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((b.max.y - b.min.y) / ts)));

    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> grid;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        auto kx = static_cast<std::int64_t>(std::floor((cloud.x[i] - b.min.x) / ts));
        auto ky = static_cast<std::int64_t>(std::floor((cloud.y[i] - b.min.y) / ts));
        // Points exactly on the max edge fold into the last tile.
        kx = std::min(kx, nx - 1);
        ky = std::min(ky, ny - 1);
        grid[{kx, ky}].push_back(i);
    }

    std::mt19937_64 rng(config.seed ^ 0x7113a5d1u);
    std::vector<Tile> tiles;
    tiles.reserve(grid.size());
    for (auto& [key, indices] : grid) {
        Tile tile;
        tile.dataset_id = dataset_id;
        if (training_mode && indices.size() > static_cast<std::size_t>(config.max_points_per_tile)) {
            std::shuffle(indices.begin(), indices.end(), rng);
            indices.resize(config.max_points_per_tile);
            std::sort(indices.begin(), indices.end());
        }
        tile.indices = std::move(indices);
        for (std::size_t i : tile.indices) {
            if (cloud.label[i] < kNumClasses) ++tile.labeled_count;
        }
        if (training_mode && tile.labeled_count == 0) continue;
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

void fill_tile_inputs(std::vector<Tile>& tiles, const PointCloud& cloud, ChannelSetConfig channel_set,
                      const NormStats& stats, std::span<const double> height_above_ground) {
    if (height_above_ground.size() != cloud.size()) {
        throw std::invalid_argument("fill_tile_inputs: height vector size mismatch");
    }
    for (Tile& tile : tiles) {
        PointCloud sub = cloud.select(tile.indices);
        std::vector<double> heights(tile.indices.size());
        for (std::size_t j = 0; j < tile.indices.size(); ++j) {
            heights[j] = height_above_ground[tile.indices[j]];
        }
        tile.features = assemble(sub, channel_set, stats, heights);
        const std::size_t n = sub.size();
        const int dim = feature_dim(channel_set);
        tile.positions.resize(n * 3);
        for (std::size_t j = 0; j < n; ++j) {
            tile.positions[j * 3 + 0] = tile.features[j * dim + 0];
            tile.positions[j * 3 + 1] = tile.features[j * dim + 1];
            tile.positions[j * 3 + 2] = tile.features[j * dim + 2];
        }
        tile.labels = sub.label;
    }
}

ClassWeights compute_class_weights(
    const std::vector<std::array<std::uint64_t, kNumClasses>>& histograms) {
    std::array<std::uint64_t, kNumClasses> pooled{};
    for (const auto& h : histograms) {
        for (int c = 0; c < kNumClasses; ++c) pooled[c] += h[c];
    }
    std::uint64_t total = 0;
    for (std::uint64_t v : pooled) total += v;
    for (int c = 0; c < kNumClasses; ++c) {
        if (pooled[c] == 0) {
            throw std::invalid_argument(std::string("compute_class_weights: class '") +
                                        class_name(static_cast<LandCoverClass>(c)) +
                                        "' has zero count");
        }
    }
    ClassWeights cw;
    for (int c = 0; c < kNumClasses; ++c) {
        cw.w[c] = static_cast<double>(total) / (static_cast<double>(kNumClasses) * pooled[c]);
    }
    return cw;
}

void augment_positions(std::vector<float>& positions, const TrainConfig& config, std::mt19937_64& rng) {
    const std::size_t n = positions.size() / 3;
    if (n == 0) return;
    std::uniform_real_distribution<double> scale_dist(config.scale_min, config.scale_max);
    std::uniform_real_distribution<double> shift_dist(-config.translate_range, config.translate_range);
    const double s = scale_dist(rng);
    const double t[3] = {shift_dist(rng), shift_dist(rng), shift_dist(rng)};
    double c[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) c[a] += positions[i * 3 + a];
    }
    for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            double v = positions[i * 3 + a];
            positions[i * 3 + a] = static_cast<float>((v - c[a]) * s + c[a] + t[a]);
        }
    }
}

AdamState make_adam_state(const SegModel& model) {
    AdamState st;
    for (const auto& [name, var] : model.parameters()) {
        st.m.emplace_back(var.val->count(), 0.0f);
        st.v.emplace_back(var.val->count(), 0.0f);
    }
    return st;
}

void adamw_step(SegModel& model, AdamState& state, double lr_t, const TrainConfig& config) {
    auto params = model.parameters();
    if (params.size() != state.m.size()) throw std::invalid_argument("adamw_step: state mismatch");
    ++state.t;
    const double b1 = config.beta1, b2 = config.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& var = params[p].second;
        auto& m = state.m[p];
        auto& v = state.v[p];
        float* w = var.val->v.data();
        const float* g = var.grad->v.data();
        for (std::size_t i = 0; i < var.val->count(); ++i) {
            m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
            v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = static_cast<float>(
                w[i] - lr_t * (mhat / (std::sqrt(vhat) + config.adam_eps) + config.weight_decay * w[i]));
        }
    }
}

double cosine_lr(int epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) throw std::invalid_argument("cosine_lr: epoch out of range");
    if (config.epochs == 1) return config.lr;
    const double phase = std::numbers::pi * static_cast<double>(epoch) / (config.epochs - 1);
    return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + std::cos(phase));
}

std::vector<Batch> multi_dataset_batches(const std::vector<std::size_t>& tiles_per_dataset,
                                         const TrainConfig& config, std::mt19937_64& rng) {
    const int D = static_cast<int>(tiles_per_dataset.size());
    if (D == 0) throw std::invalid_argument("multi_dataset_batches: no datasets");
    const int B = config.batch_size;

    // Slots per batch per dataset: dataset 0 gets ceil(mix*B) when others
    // exist, the remainder is spread over the rest.
    std::vector<int> slots(D, 0);
    if (D == 1) {
        slots[0] = B;
    } else {
        slots[0] = static_cast<int>(std::ceil(config.dataset_mix * B));
        int rest = B - slots[0];
        if (slots[0] <= 0 || rest <= 0) {
            throw std::invalid_argument("multi_dataset_batches: mix leaves a dataset with no slots");
        }
        for (int d = 1; d < D; ++d) slots[d] = rest / (D - 1);
        for (int r = 0; r < rest % (D - 1); ++r) ++slots[1 + r];
    }
    for (int d = 0; d < D; ++d) {
        if (slots[d] > 0 && tiles_per_dataset[d] == 0) {
            throw std::invalid_argument("multi_dataset_batches: dataset " + std::to_string(d) +
                                        " has no tiles but the mix requires them");
        }
    }

    // Epoch length: the dataset with the most full passes available drives
    // it, so every tile of the largest dataset is used at most once.
    std::size_t nbatches = 0;
    for (int d = 0; d < D; ++d) {
        if (slots[d] > 0) nbatches = std::max(nbatches, tiles_per_dataset[d] / slots[d]);
    }
    nbatches = std::max<std::size_t>(nbatches, 1);

    std::vector<std::vector<std::size_t>> order(D);
    std::vector<std::size_t> cursor(D, 0);
    for (int d = 0; d < D; ++d) {
        order[d].resize(tiles_per_dataset[d]);
        for (std::size_t i = 0; i < order[d].size(); ++i) order[d][i] = i;
        std::shuffle(order[d].begin(), order[d].end(), rng);
    }

    std::vector<Batch> batches(nbatches);
    for (std::size_t bi = 0; bi < nbatches; ++bi) {
        Batch& batch = batches[bi];
        batch.reserve(B);
        for (int d = 0; d < D; ++d) {
            for (int s = 0; s < slots[d]; ++s) {
                if (cursor[d] == order[d].size()) {
                    std::shuffle(order[d].begin(), order[d].end(), rng);  // recycle smaller datasets
                    cursor[d] = 0;
                }
                batch.emplace_back(d, order[d][cursor[d]++]);
            }
        }
    }
    return batches;
}

namespace {

// Permissive weights for internal use: the strict operation requires all
// classes present; toy scenes may not have them. Missing classes never
// appear in the loss, their weight value is irrelevant.
ClassWeights weights_for_present(const std::array<std::uint64_t, kNumClasses>& pooled) {
    ClassWeights cw;
    std::uint64_t total = 0;
    int present = 0;
    for (std::uint64_t v : pooled) {
        total += v;
        if (v > 0) ++present;
    }
    for (int c = 0; c < kNumClasses; ++c) {
        cw.w[c] = pooled[c] > 0
                      ? static_cast<double>(total) / (static_cast<double>(present) * pooled[c])
                      : 1.0;
    }
    return cw;
}

ConfusionMatrix eval_tiles(const SegModel& model, const std::vector<Tile>& tiles) {
    ConfusionMatrix cm;
    for (const Tile& tile : tiles) {
        auto fwd = forward(model, tile.features, tile.positions, tile.size());
        const std::size_t n = tile.size();
        std::vector<std::uint8_t> pred(n);
        const int classes = model.config.num_classes;
        for (std::size_t i = 0; i < n; ++i) {
            const float* row = fwd.logits.val->row(i);
            int best = 0;
            for (int c = 1; c < classes; ++c) {
                if (row[c] > row[best]) best = c;
            }
            pred[i] = static_cast<std::uint8_t>(best);
        }
        cm += confusion(pred, tile.labels);
    }
    return cm;
}

}  // namespace

TrainResult train(const std::vector<const PointCloud*>& train_clouds, const PointCloud& val_cloud,
                  ChannelSetConfig channel_set, ModelConfig model_config, TrainConfig config) {
    if (train_clouds.empty()) throw std::invalid_argument("train: need at least one training dataset");
    model_config.input_dim = feature_dim(channel_set);
    model_config.validate();

    NormStats stats = compute_norm_stats(train_clouds);

    std::vector<std::size_t> tiles_per_dataset;
    std::vector<std::vector<Tile>> dataset_tiles;
    std::array<std::uint64_t, kNumClasses> pooled_hist{};
    for (std::size_t d = 0; d < train_clouds.size(); ++d) {
        const PointCloud& cloud = *train_clouds[d];
        CsfResult csf = csf_ground(cloud);
        auto tiles = make_tiles(cloud, config, /*training_mode=*/true, static_cast<int>(d));
        fill_tile_inputs(tiles, cloud, channel_set, stats, csf.height_above_cloth);
        auto hist = class_histogram(cloud);
        for (int c = 0; c < kNumClasses; ++c) pooled_hist[c] += hist[c];
        tiles_per_dataset.push_back(tiles.size());
        dataset_tiles.push_back(std::move(tiles));
    }
    ClassWeights weights = weights_for_present(pooled_hist);

    std::vector<Tile> val_tiles;
    {
        CsfResult csf = csf_ground(val_cloud);
        val_tiles = make_tiles(val_cloud, config, /*training_mode=*/false);
        fill_tile_inputs(val_tiles, val_cloud, channel_set, stats, csf.height_above_cloth);
    }

    SegModel model = build_model(model_config);
    AdamState adam = make_adam_state(model);
    std::mt19937_64 rng(config.seed);

    TrainResult result;
    const int classes = model_config.num_classes;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr_t = cosine_lr(epoch, config);
        auto batches = multi_dataset_batches(tiles_per_dataset, config, rng);

        double epoch_loss = 0;
        std::size_t batch_count = 0;
        for (const Batch& batch : batches) {
            model.zero_grads();
            double batch_loss = 0;
            for (const auto& [d, tidx] : batch) {
                const Tile& tile = dataset_tiles[d][tidx];
                std::vector<float> pos = tile.positions;
                augment_positions(pos, config, rng);
                std::vector<float> feats = tile.features;
                const int dim = model_config.input_dim;
                for (std::size_t i = 0; i < tile.size(); ++i) {
                    feats[i * dim + 0] = pos[i * 3 + 0];
                    feats[i * dim + 1] = pos[i * 3 + 1];
                    feats[i * dim + 2] = pos[i * 3 + 2];
                }
                auto fwd = forward(model, feats, pos, tile.size());
                auto ce = weighted_cross_entropy<float>(
                    std::span<const float>(fwd.logits.val->v), classes, tile.labels, weights);
                batch_loss += ce.loss;
                const float scale = 1.0f / static_cast<float>(batch.size());
                for (std::size_t i = 0; i < ce.dlogits.size(); ++i) {
                    fwd.logits.grad->v[i] = ce.dlogits[i] * scale;
                }
                fwd.tape.backward();
            }
            batch_loss /= static_cast<double>(batch.size());
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error("train: loss diverged (NaN/Inf) at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_count));
            }
            adamw_step(model, adam, lr_t, config);
            epoch_loss += batch_loss;
            ++batch_count;
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(batch_count, 1));

        EpochStats es;
        es.epoch = epoch;
        es.lr = lr_t;
        es.train_loss = epoch_loss;
        const bool run_val = ((epoch + 1) % std::max(config.val_every, 1) == 0) ||
                             epoch + 1 == config.epochs || config.stop_at_val_miou >= 0;
        if (run_val) {
            auto rep = report(eval_tiles(model, val_tiles));
            es.val_miou = rep.miou;
            if (rep.miou > result.best_val_miou) {
                result.best_val_miou = rep.miou;
                result.best_epoch = epoch;
                result.best_checkpoint = save_checkpoint(model, channel_set, stats);
            }
        }
        result.history.push_back(es);
        if (config.stop_at_val_miou >= 0 && es.val_miou >= config.stop_at_val_miou) break;
    }

    if (result.best_checkpoint.empty()) {
        // No validation pass ran (val_every > epochs); keep the final model.
        result.best_checkpoint = save_checkpoint(model, channel_set, stats);
        result.best_epoch = config.epochs - 1;
    }
    return result;
}

std::vector<std::uint8_t> segment_cloud(const SegModel& model, ChannelSetConfig channel_set,
                                        const NormStats& stats, const PointCloud& cloud,
                                        const TrainConfig& tiling) {
    CsfResult csf = csf_ground(cloud);
    auto tiles = make_tiles(cloud, tiling, /*training_mode=*/false);
    fill_tile_inputs(tiles, cloud, channel_set, stats, csf.height_above_cloth);
    std::vector<std::uint8_t> labels(cloud.size(), static_cast<std::uint8_t>(LandCoverClass::Unlabeled));
    const int classes = model.config.num_classes;
    for (const Tile& tile : tiles) {
        auto fwd = forward(model, tile.features, tile.positions, tile.size());
        for (std::size_t i = 0; i < tile.size(); ++i) {
            const float* row = fwd.logits.val->row(i);
            int best = 0;
            for (int c = 1; c < classes; ++c) {
                if (row[c] > row[best]) best = c;
            }
            labels[tile.indices[i]] = static_cast<std::uint8_t>(best);
        }
    }
    return labels;
}

}  // namespace mspc
