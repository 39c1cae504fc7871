#include "sesim/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace sesim {

ConfusionCounts confusion_counts(const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred,
                                 int num_classes) {
    if (y_true.empty()) throw ArgumentError("confusion_counts: empty input");
    if (y_true.size() != y_pred.size())
        throw ArgumentError("confusion_counts: length mismatch");
    for (size_t i = 0; i < y_true.size(); ++i)
        if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 ||
            y_pred[i] >= num_classes)
            throw ArgumentError("confusion_counts: class index out of range");

    ConfusionCounts c;
    c.tp.assign(num_classes, 0);
    c.fp.assign(num_classes, 0);
    c.fn.assign(num_classes, 0);
    c.tn.assign(num_classes, 0);
    const long long total = static_cast<long long>(y_true.size());
    for (size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == y_pred[i])
            ++c.tp[y_true[i]];
        else {
            ++c.fp[y_pred[i]];
            ++c.fn[y_true[i]];
        }
    }
    for (int k = 0; k < num_classes; ++k)
        c.tn[k] = total - c.tp[k] - c.fp[k] - c.fn[k];
    return c;
}

double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                int num_classes) {
    const ConfusionCounts c = confusion_counts(y_true, y_pred, num_classes);
    double sum = 0.0;
    for (int k = 0; k < num_classes; ++k) {
        const double p_den = static_cast<double>(c.tp[k] + c.fp[k]);
        const double r_den = static_cast<double>(c.tp[k] + c.fn[k]);
        const double p = p_den > 0.0 ? c.tp[k] / p_den : 0.0;
        const double r = r_den > 0.0 ? c.tp[k] / r_den : 0.0;
        sum += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return sum / num_classes;
}

double micro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                int num_classes) {
    const ConfusionCounts c = confusion_counts(y_true, y_pred, num_classes);
    long long tp = 0, fp = 0, fn = 0;
    for (int k = 0; k < num_classes; ++k) {
        tp += c.tp[k];
        fp += c.fp[k];
        fn += c.fn[k];
    }
    const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw ArgumentError("auc: empty input");
    if (scores.size() != labels.size())
        throw ArgumentError("auc: length mismatch");
    long long n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ArgumentError("auc: labels must be 0/1");
        (y == 1 ? n_pos : n_neg) += 1;
    }
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("auc: needs both classes present");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Midranks over tie groups; the rank-sum of the positives yields the
    // Mann-Whitney statistic with ties worth one half.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]])
            ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

void write_report_json(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, double>>& kv) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "{";
    for (size_t i = 0; i < kv.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", kv[i].second);
        out << (i ? ", " : "") << '"' << kv[i].first << "\": " << buf;
    }
    out << "}\n";
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace sesim
