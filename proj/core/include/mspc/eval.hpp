#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mspc/core.hpp"

namespace mspc {

/// Rows are actual class, columns predicted. Unlabeled ground truth is
/// never counted.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

    std::uint64_t total() const;
    std::uint64_t tp(int c) const { return counts[c][c]; }
    std::uint64_t fp(int c) const;  // predicted c, actually something else
    std::uint64_t fn(int c) const;  // actually c, predicted something else

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual);

/// Per-class metric; nullopt when the 0/0 case makes it undefined (class
/// absent from both prediction and ground truth).
std::optional<double> iou(const ConfusionMatrix& cm, int c);
std::optional<double> accuracy(const ConfusionMatrix& cm, int c);   // recall
std::optional<double> precision(const ConfusionMatrix& cm, int c);

struct MetricsReport {
    std::array<std::optional<double>, kNumClasses> class_iou;
    std::array<std::optional<double>, kNumClasses> class_accuracy;
    std::array<std::optional<double>, kNumClasses> class_precision;
    double miou = 0.0;
    double macc = 0.0;
    double mprecision = 0.0;
    std::uint64_t evaluated_points = 0;
    std::array<std::uint64_t, kNumClasses> class_points{};  // ground-truth counts
};

/// Means are taken over classes present in ground truth or predictions;
/// fully absent classes are excluded rather than scored 0 or 1.
MetricsReport report(const ConfusionMatrix& cm);

/// Row-normalized matrix for display; zero rows render as zeros.
std::array<std::array<double, kNumClasses>, kNumClasses> row_normalized(const ConfusionMatrix& cm);

std::string confusion_csv(const ConfusionMatrix& cm);
std::string confusion_norm_csv(const ConfusionMatrix& cm);

/// Full-precision JSON document for the report (three-decimal rounding is
/// applied only in the human-readable text rendering).
std::string report_json(const MetricsReport& report);
std::string report_text(const MetricsReport& report);

}  // namespace mspc
