#include "gem/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gem/error.hpp"

namespace gem::eval {

std::string_view to_string(Alternative a) {
    switch (a) {
        case Alternative::two_sided:
            return "two_sided";
        case Alternative::less:
            return "less";
        case Alternative::greater:
            return "greater";
    }
    return "?";
}

Alternative parse_alternative(std::string_view s) {
    if (s == "two_sided" || s == "two-sided") return Alternative::two_sided;
    if (s == "less") return Alternative::less;
    if (s == "greater") return Alternative::greater;
    throw ConfigError("unknown alternative '" + std::string(s) + "' (expected two_sided, less or greater)");
}

std::string_view to_string(TestMethod m) { return m == TestMethod::exact ? "exact" : "normal_approximation"; }

namespace {

// Average ranks of |d|, 1-based.
std::vector<double> average_ranks(const std::vector<double>& abs_d) {
    const std::size_t n = abs_d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// Number of sign assignments per value of 2*W+ (ranks are multiples of 1/2).
std::vector<double> exact_counts(const std::vector<double>& ranks) {
    std::vector<long> doubled(ranks.size());
    long total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        doubled[i] = std::lround(2.0 * ranks[i]);
        total += doubled[i];
    }
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : doubled) {
        for (long s = reach; s >= 0; --s)
            if (counts[static_cast<std::size_t>(s)] != 0.0)
                counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
        reach += r;
    }
    return counts;
}

}  // namespace

SignificanceReport wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                        Alternative alternative) {
    if (x.size() != y.size())
        throw ValidationError("wilcoxon: sequences differ in length (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
    if (x.empty()) throw ValidationError("wilcoxon: empty sequences");

    std::vector<double> abs_d;
    std::vector<bool> positive;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (!std::isfinite(d)) throw ValidationError("wilcoxon: non-finite difference at index " + std::to_string(i));
        if (d == 0.0) continue;
        abs_d.push_back(std::fabs(d));
        positive.push_back(d > 0.0);
    }

    SignificanceReport r;
    r.alternative = alternative;
    r.n = abs_d.size();
    if (r.n == 0) {
        r.p_value = 1.0;
        r.method = TestMethod::exact;
        return r;
    }

    const auto ranks = average_ranks(abs_d);
    for (std::size_t i = 0; i < r.n; ++i) (positive[i] ? r.w_plus : r.w_minus) += ranks[i];
    r.statistic = alternative == Alternative::two_sided ? std::min(r.w_plus, r.w_minus) : r.w_plus;

    const double nn = static_cast<double>(r.n);
    if (r.n <= kExactWilcoxonLimit) {
        r.method = TestMethod::exact;
        const auto counts = exact_counts(ranks);
        const double all = std::ldexp(1.0, static_cast<int>(r.n));
        const long obs = std::lround(2.0 * r.w_plus);
        double upper = 0.0, lower = 0.0;  // P(W+ >= obs), P(W+ <= obs)
        for (std::size_t s = 0; s < counts.size(); ++s) {
            if (static_cast<long>(s) >= obs) upper += counts[s];
            if (static_cast<long>(s) <= obs) lower += counts[s];
        }
        upper /= all;
        lower /= all;
        switch (alternative) {
            case Alternative::greater:
                r.p_value = upper;
                break;
            case Alternative::less:
                r.p_value = lower;
                break;
            case Alternative::two_sided:
                r.p_value = std::min(1.0, 2.0 * std::min(upper, lower));
                break;
        }
        return r;
    }

    r.method = TestMethod::normal_approximation;
    const double mean = nn * (nn + 1.0) / 4.0;
    double tie_term = 0.0;
    {
        std::vector<double> sorted = ranks;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i);
            tie_term += t * t * t - t;
            i = j;
        }
    }
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double sd = std::sqrt(var);
    auto upper_tail = [](double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); };
    const double diff = r.w_plus - mean;
    switch (alternative) {
        case Alternative::greater:
            r.p_value = upper_tail((diff - 0.5) / sd);
            break;
        case Alternative::less:
            r.p_value = upper_tail((-diff - 0.5) / sd);
            break;
        case Alternative::two_sided:
            r.p_value = std::min(1.0, 2.0 * upper_tail((std::fabs(diff) - 0.5) / sd));
            break;
    }
    return r;
}

}  // namespace gem::eval
