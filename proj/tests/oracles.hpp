#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. They favour obviousness over speed.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "gem/knowledge.hpp"
#include "gem/stats.hpp"

namespace oracle {

using gem::eval::Alternative;
using gem::knowledge::LexiconEntry;
using gem::knowledge::Span;

inline bool word(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || static_cast<unsigned char>(c) >= 0x80;
}

inline std::string low(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Scan every word start, try every entry, keep the longest one that ends on a
// word boundary, then continue after it.
inline std::vector<Span> spans(const std::string& text, const std::vector<LexiconEntry>& entries) {
    std::vector<Span> out;
    const std::string t = low(text);
    std::size_t i = 0;
    while (i < t.size()) {
        if (!word(t[i]) || (i > 0 && word(t[i - 1]))) {
            ++i;
            continue;
        }
        const LexiconEntry* best = nullptr;
        for (const auto& e : entries) {
            const auto len = e.surface.size();
            if (t.compare(i, len, e.surface) != 0 || i + len > t.size()) continue;
            if (i + len < t.size() && word(t[i + len])) continue;
            if (!best || len > best->surface.size()) best = &e;
        }
        if (best) {
            out.push_back({i, i + best->surface.size(), best->tag});
            i += best->surface.size();
        } else {
            ++i;
        }
    }
    return out;
}

struct Metrics {
    std::vector<double> p, r, f;
    double macro_p = 0, macro_r = 0, macro_f = 0, weighted_f = 0, accuracy = 0, micro_f = 0;
};

inline Metrics metrics(const std::vector<int>& pred, const std::vector<int>& gold, int C) {
    Metrics o;
    const double n = static_cast<double>(gold.size());
    double correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) correct += pred[i] == gold[i];
    o.accuracy = correct / n;
    double tp_all = 0, fp_all = 0, fn_all = 0;
    for (int c = 0; c < C; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            tp += pred[i] == c && gold[i] == c;
            fp += pred[i] == c && gold[i] != c;
            fn += pred[i] != c && gold[i] == c;
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn;
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        o.p.push_back(p);
        o.r.push_back(r);
        o.f.push_back(f);
        o.macro_p += p / C;
        o.macro_r += r / C;
        o.macro_f += f / C;
        o.weighted_f += f * (tp + fn) / n;
    }
    const double mp = tp_all / (tp_all + fp_all), mr = tp_all / (tp_all + fn_all);
    o.micro_f = mp + mr > 0 ? 2 * mp * mr / (mp + mr) : 0.0;
    return o;
}

// Every sign pattern over the ranks of |d|, counting W+ at or beyond the observed.
inline double enumerate_p(std::vector<double> d, Alternative alt) {
    d.erase(std::remove(d.begin(), d.end(), 0.0), d.end());
    const std::size_t n = d.size();
    if (n == 0) return 1.0;
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            less += std::abs(d[j]) < std::abs(d[i]);
            equal += std::abs(d[j]) == std::abs(d[i]);
        }
        ranks[i] = less + (equal + 1) / 2.0;
    }
    double obs = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) obs += ranks[i];
    double ge = 0, le = 0;
    const std::size_t total = std::size_t{1} << n;
    for (std::size_t mask = 0; mask < total; ++mask) {
        double w = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) w += ranks[i];
        ge += w >= obs - 1e-9;
        le += w <= obs + 1e-9;
    }
    ge /= static_cast<double>(total);
    le /= static_cast<double>(total);
    if (alt == Alternative::greater) return ge;
    if (alt == Alternative::less) return le;
    return std::min(1.0, 2 * std::min(ge, le));
}

}  // namespace oracle
