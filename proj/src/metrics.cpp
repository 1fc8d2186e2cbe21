#include "bnt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace bnt {

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the midrank keeps tie ranks integral.
    std::vector<double> rank2(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) rank2[order[k]] = static_cast<double>(i + j + 1);
        i = j;
    }
    double n_pos = 0, n_neg = 0, rank_sum2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == 1) {
            n_pos += 1;
            rank_sum2 += rank2[i];
        } else if (labels[i] == 0) {
            n_neg += 1;
        } else {
            throw std::invalid_argument("auroc: labels must be 0 or 1");
        }
    }
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: need at least one positive and one negative");
    const double u = rank_sum2 / 2.0 - n_pos * (n_pos + 1) / 2.0;
    return u / (n_pos * n_neg);
}

EvalResult threshold_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size()) throw std::invalid_argument("threshold_metrics: length mismatch");
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1)
            (predicted ? tp : fn)++;
        else if (labels[i] == 0)
            (predicted ? fp : tn)++;
        else
            throw std::invalid_argument("threshold_metrics: labels must be 0 or 1");
    }
    EvalResult r;
    r.n_pos = tp + fn;
    r.n_neg = tn + fp;
    const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.accuracy = ratio(tp + tn, scores.size());
    r.sensitivity = ratio(tp, tp + fn);
    r.specificity = ratio(tn, tn + fp);
    if (r.n_pos > 0 && r.n_neg > 0) r.auroc = auroc(scores, labels);
    return r;
}

double difference_score(const Matrix& p_class0, const Matrix& p_class1) {
    if (p_class0.rows() != p_class1.rows() || p_class0.cols() != p_class1.cols())
        throw DimensionError("difference_score: " + shape_string(p_class0) + " vs " + shape_string(p_class1));
    if (p_class0.empty()) throw DimensionError("difference_score: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < p_class0.size(); ++i) total += std::abs(p_class0.data()[i] - p_class1.data()[i]);
    return total / static_cast<double>(p_class0.size());
}

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

MeanStd mean_std(std::span<const std::optional<double>> values) {
    MeanStd out;
    double sum = 0.0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++out.count;
        }
    if (out.count == 0) return out;
    out.mean = sum / static_cast<double>(out.count);
    double ss = 0.0;
    for (const auto& v : values)
        if (v) ss += (*v - out.mean) * (*v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(out.count));
    return out;
}

}  // namespace bnt
