#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gem::eval {

// Rows are gold labels, columns are predictions.
struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<std::size_t>> counts;

    std::size_t total() const;
    std::size_t row_sum(std::size_t gold) const;
    std::size_t col_sum(std::size_t predicted) const;
};

struct ClassMetrics {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;    // gold count
    std::size_t predicted = 0;  // predicted count
    // Set when the denominator is zero; the value is then reported as 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
};

struct MetricsReport {
    std::vector<ClassMetrics> classes;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
    double micro_precision = 0.0, micro_recall = 0.0, micro_f1 = 0.0;
    double accuracy = 0.0;
    std::size_t total = 0;
    ConfusionMatrix confusion;
};

// Labels are class indices into class_names. Throws ValidationError on empty
// input, length mismatch, or an out-of-range label.
MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> golds,
                              const std::vector<std::string>& class_names);

double f1_score(double precision, double recall);

}  // namespace gem::eval
