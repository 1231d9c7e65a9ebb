#include "gem/metrics.hpp"

#include "gem/error.hpp"

namespace gem::eval {

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
        for (auto c : row) n += c;
    return n;
}

std::size_t ConfusionMatrix::row_sum(std::size_t gold) const {
    std::size_t n = 0;
    for (auto c : counts.at(gold)) n += c;
    return n;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
    std::size_t n = 0;
    for (const auto& row : counts) n += row.at(predicted);
    return n;
}

double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> golds,
                              const std::vector<std::string>& class_names) {
    if (predictions.empty()) throw ValidationError("compute_metrics: empty input");
    if (predictions.size() != golds.size())
        throw ValidationError("compute_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                              std::to_string(golds.size()) + " gold labels");
    const std::size_t C = class_names.size();
    if (C == 0) throw ValidationError("compute_metrics: empty class set");

    MetricsReport r;
    r.total = predictions.size();
    r.confusion.classes = class_names;
    r.confusion.counts.assign(C, std::vector<std::size_t>(C, 0));
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], g = golds[i];
        if (p < 0 || static_cast<std::size_t>(p) >= C || g < 0 || static_cast<std::size_t>(g) >= C)
            throw ValidationError("compute_metrics: label outside the class set at index " + std::to_string(i));
        ++r.confusion.counts[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    }

    std::size_t correct = 0;
    for (std::size_t c = 0; c < C; ++c) {
        ClassMetrics m;
        m.name = class_names[c];
        const std::size_t tp = r.confusion.counts[c][c];
        correct += tp;
        m.support = r.confusion.row_sum(c);
        m.predicted = r.confusion.col_sum(c);
        m.precision_undefined = m.predicted == 0;
        m.recall_undefined = m.support == 0;
        m.precision = m.predicted ? static_cast<double>(tp) / static_cast<double>(m.predicted) : 0.0;
        m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
        m.f1 = f1_score(m.precision, m.recall);
        r.classes.push_back(std::move(m));
    }

    const double n = static_cast<double>(r.total);
    for (const auto& m : r.classes) {
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
        const double w = static_cast<double>(m.support) / n;
        r.weighted_precision += w * m.precision;
        r.weighted_recall += w * m.recall;
        r.weighted_f1 += w * m.f1;
    }
    r.macro_precision /= static_cast<double>(C);
    r.macro_recall /= static_cast<double>(C);
    r.macro_f1 /= static_cast<double>(C);
    r.accuracy = static_cast<double>(correct) / n;
    std::size_t pooled_support = 0, pooled_predicted = 0;
    for (const auto& m : r.classes) {
        pooled_support += m.support;
        pooled_predicted += m.predicted;
    }
    r.micro_precision = static_cast<double>(correct) / static_cast<double>(pooled_predicted);
    r.micro_recall = static_cast<double>(correct) / static_cast<double>(pooled_support);
    r.micro_f1 = f1_score(r.micro_precision, r.micro_recall);
    return r;
}

}  // namespace gem::eval
