#include "mspc/eval.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mspc {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts) {
        for (std::uint64_t v : row) t += v;
    }
    return t;
}

std::uint64_t ConfusionMatrix::fp(int c) const {
    std::uint64_t v = 0;
    for (int a = 0; a < kNumClasses; ++a) {
        if (a != c) v += counts[a][c];
    }
    return v;
}

std::uint64_t ConfusionMatrix::fn(int c) const {
    std::uint64_t v = 0;
    for (int p = 0; p < kNumClasses; ++p) {
        if (p != c) v += counts[c][p];
    }
    return v;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (int a = 0; a < kNumClasses; ++a) {
        for (int p = 0; p < kNumClasses; ++p) counts[a][p] += other.counts[a][p];
    }
    return *this;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual) {
    if (predicted.size() != actual.size()) {
        throw std::invalid_argument("confusion: prediction/ground-truth length mismatch");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const std::uint8_t a = actual[i];
        if (a >= kNumClasses) continue;  // Unlabeled ground truth is skipped
        const std::uint8_t p = predicted[i];
        if (p >= kNumClasses) {
            throw std::invalid_argument("confusion: prediction holds an invalid class code");
        }
        ++cm.counts[a][p];
    }
    return cm;
}

std::optional<double> iou(const ConfusionMatrix& cm, int c) {
    const std::uint64_t denom = cm.tp(c) + cm.fp(c) + cm.fn(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(cm.tp(c)) / static_cast<double>(denom);
}

std::optional<double> accuracy(const ConfusionMatrix& cm, int c) {
    const std::uint64_t denom = cm.tp(c) + cm.fn(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(cm.tp(c)) / static_cast<double>(denom);
}

std::optional<double> precision(const ConfusionMatrix& cm, int c) {
    const std::uint64_t denom = cm.tp(c) + cm.fp(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(cm.tp(c)) / static_cast<double>(denom);
}

MetricsReport report(const ConfusionMatrix& cm) {
    MetricsReport rep;
    rep.evaluated_points = cm.total();
    double sum_iou = 0, sum_acc = 0, sum_prec = 0;
    int n_iou = 0, n_acc = 0, n_prec = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        for (int p = 0; p < kNumClasses; ++p) rep.class_points[c] += cm.counts[c][p];
        rep.class_iou[c] = iou(cm, c);
        rep.class_accuracy[c] = accuracy(cm, c);
        rep.class_precision[c] = precision(cm, c);
        if (rep.class_iou[c]) {
            sum_iou += *rep.class_iou[c];
            ++n_iou;
        }
        if (rep.class_accuracy[c]) {
            sum_acc += *rep.class_accuracy[c];
            ++n_acc;
        }
        if (rep.class_precision[c]) {
            sum_prec += *rep.class_precision[c];
            ++n_prec;
        }
    }
    rep.miou = n_iou ? sum_iou / n_iou : 0.0;
    rep.macc = n_acc ? sum_acc / n_acc : 0.0;
    rep.mprecision = n_prec ? sum_prec / n_prec : 0.0;
    return rep;
}

std::array<std::array<double, kNumClasses>, kNumClasses> row_normalized(const ConfusionMatrix& cm) {
    std::array<std::array<double, kNumClasses>, kNumClasses> out{};
    for (int a = 0; a < kNumClasses; ++a) {
        std::uint64_t row_total = 0;
        for (int p = 0; p < kNumClasses; ++p) row_total += cm.counts[a][p];
        if (row_total == 0) continue;
        for (int p = 0; p < kNumClasses; ++p) {
            out[a][p] = static_cast<double>(cm.counts[a][p]) / static_cast<double>(row_total);
        }
    }
    return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream os;
    os << "actual\\predicted";
    for (int p = 0; p < kNumClasses; ++p) os << ',' << class_name(static_cast<LandCoverClass>(p));
    os << '\n';
    for (int a = 0; a < kNumClasses; ++a) {
        os << class_name(static_cast<LandCoverClass>(a));
        for (int p = 0; p < kNumClasses; ++p) os << ',' << cm.counts[a][p];
        os << '\n';
    }
    return os.str();
}

std::string confusion_norm_csv(const ConfusionMatrix& cm) {
    auto norm = row_normalized(cm);
    std::ostringstream os;
    os.precision(17);
    os << "actual\\predicted";
    for (int p = 0; p < kNumClasses; ++p) os << ',' << class_name(static_cast<LandCoverClass>(p));
    os << '\n';
    for (int a = 0; a < kNumClasses; ++a) {
        os << class_name(static_cast<LandCoverClass>(a));
        for (int p = 0; p < kNumClasses; ++p) os << ',' << norm[a][p];
        os << '\n';
    }
    return os.str();
}

namespace {

void json_metric(std::ostringstream& os, const char* key,
                 const std::array<std::optional<double>, kNumClasses>& vals) {
    os << "  \"" << key << "\": {";
    bool first = true;
    for (int c = 0; c < kNumClasses; ++c) {
        if (!first) os << ", ";
        first = false;
        os << '"' << class_name(static_cast<LandCoverClass>(c)) << "\": ";
        if (vals[c]) {
            os << *vals[c];
        } else {
            os << "null";
        }
    }
    os << "}";
}

}  // namespace

std::string report_json(const MetricsReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "{\n";
    os << "  \"miou\": " << rep.miou << ",\n";
    os << "  \"macc\": " << rep.macc << ",\n";
    os << "  \"mprecision\": " << rep.mprecision << ",\n";
    os << "  \"evaluated_points\": " << rep.evaluated_points << ",\n";
    json_metric(os, "iou", rep.class_iou);
    os << ",\n";
    json_metric(os, "accuracy", rep.class_accuracy);
    os << ",\n";
    json_metric(os, "precision", rep.class_precision);
    os << ",\n";
    os << "  \"class_points\": {";
    for (int c = 0; c < kNumClasses; ++c) {
        if (c) os << ", ";
        os << '"' << class_name(static_cast<LandCoverClass>(c)) << "\": " << rep.class_points[c];
    }
    os << "}\n}\n";
    return os.str();
}

std::string report_text(const MetricsReport& rep) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "class              IoU    Acc   Prec  points\n";
    for (int c = 0; c < kNumClasses; ++c) {
        os.width(16);
        os << std::left << class_name(static_cast<LandCoverClass>(c)) << std::right << ' ';
        auto cell = [&](const std::optional<double>& v) {
            if (v) {
                os.width(6);
                os << *v;
            } else {
                os << "     -";
            }
            os << ' ';
        };
        cell(rep.class_iou[c]);
        cell(rep.class_accuracy[c]);
        cell(rep.class_precision[c]);
        os << rep.class_points[c] << '\n';
    }
    os << "mIoU " << rep.miou << "  mAcc " << rep.macc << "  mPrec " << rep.mprecision << '\n';
    return os.str();
}

}  // namespace mspc
