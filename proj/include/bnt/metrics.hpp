#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bnt/matrix.hpp"

namespace bnt {

/// Threshold metrics; a metric whose denominator is zero is std::nullopt.
struct EvalResult {
    std::optional<double> auroc;
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;

    friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

/// Mann-Whitney AUROC with midranks for ties. Throws std::invalid_argument
/// unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Positive iff score >= threshold. AUROC is filled when both classes occur.
EvalResult threshold_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Mean absolute entrywise difference of two K x V class-averaged assignments.
double difference_score(const Matrix& p_class0, const Matrix& p_class1);

/// "NA" for an undefined metric, otherwise %.17g.
std::string format_metric(const std::optional<double>& v);

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  ///< population standard deviation
    std::size_t count = 0;
};

/// Ignores undefined entries.
MeanStd mean_std(std::span<const std::optional<double>> values);

}  // namespace bnt
