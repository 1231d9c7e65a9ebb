#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace gem::eval {

enum class Alternative { two_sided, less, greater };
enum class TestMethod { exact, normal_approximation };

std::string_view to_string(Alternative a);
Alternative parse_alternative(std::string_view s);
std::string_view to_string(TestMethod m);

struct SignificanceReport {
    double statistic = 0.0;  // min(W+, W-) for two-sided, W+ otherwise
    double w_plus = 0.0;
    double w_minus = 0.0;
    std::size_t n = 0;       // nonzero differences
    double p_value = 1.0;
    TestMethod method = TestMethod::exact;
    Alternative alternative = Alternative::two_sided;
};

// Paired test on d = x - y. Zero differences are dropped and tied |d| share
// average ranks. "greater" tests whether x tends to exceed y. The exact null
// distribution is used for n <= 25, otherwise a normal approximation with tie
// and continuity corrections. If every difference is zero the result is
// p = 1, n = 0, method exact.
SignificanceReport wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                        Alternative alternative = Alternative::two_sided);

inline constexpr std::size_t kExactWilcoxonLimit = 25;

}  // namespace gem::eval
