#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sesim/common.hpp"

namespace sesim {

struct ConfusionCounts {
    std::vector<long long> tp, fp, fn, tn;  // indexed by class
};

ConfusionCounts confusion_counts(const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred,
                                 int num_classes);

// Unweighted mean of per-class F1; a class with zero precision+recall
// denominator contributes 0 rather than being skipped.
double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                int num_classes);

// F1 of precision/recall pooled over summed per-class TP/FP/FN.
double micro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                int num_classes);

// Probability a random positive outscores a random negative; ties count
// one half. Midrank statistic, O(n log n).
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Ordered key/value pairs, values printed with six decimal places.
void write_report_json(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, double>>& kv);

}  // namespace sesim
