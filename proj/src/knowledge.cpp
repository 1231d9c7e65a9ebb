#include "gem/knowledge.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "gem/error.hpp"
#include "gem/text.hpp"

namespace gem::knowledge {
namespace {

bool is_word_byte(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

unsigned char lower(unsigned char c) { return (c >= 'A' && c <= 'Z') ? static_cast<unsigned char>(c - 'A' + 'a') : c; }

std::string lowered(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(lower(static_cast<unsigned char>(c)));
    return out;
}

bool allowed_concept(Category c, std::string_view tag) {
    switch (c) {
        case Category::cvd:
            return tag == "<cvd>";
        case Category::symptom:
            return tag == "<depression>" || tag == "<anxiety>" || tag == "<bipolar>" ||
                   tag == "<ptsd>";
        case Category::gender:
            return tag == "<man>" || tag == "<woman>";
    }
    return false;
}

std::string where(const LexiconEntry& e) {
    return e.line ? "line " + std::to_string(e.line) : "entry '" + e.surface + "'";
}

void validate_entry(const LexiconEntry& e) {
    if (e.surface.empty()) throw ValidationError(where(e) + ": empty surface");
    if (!is_word_byte(static_cast<unsigned char>(e.surface.front())) ||
        !is_word_byte(static_cast<unsigned char>(e.surface.back())))
        throw ValidationError(where(e) + ": surface '" + e.surface + "' must start and end with a word character");
    if (e.surface.find("  ") != std::string::npos || e.surface.find('\t') != std::string::npos)
        throw ValidationError(where(e) + ": surface '" + e.surface + "' must use single spaces between words");
    const auto words = std::count(e.surface.begin(), e.surface.end(), ' ') + 1;
    if (words > 6) throw ValidationError(where(e) + ": surface '" + e.surface + "' has more than 6 words");
    if (text::is_concept_token(e.surface))
        throw ValidationError(where(e) + ": surface equals concept token " + e.surface);
    if (!allowed_concept(e.category, e.tag))
        throw ValidationError(where(e) + ": unknown concept token '" + e.tag + "' for category " +
                              std::string(to_string(e.category)));
}

// Marks bytes covered by concept tokens so that masking never re-enters them.
std::vector<std::uint8_t> protected_bytes(std::string_view text) {
    std::vector<std::uint8_t> prot(text.size(), 0);
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '<') continue;
        const auto close = text.find('>', i);
        if (close == std::string_view::npos) break;
        if (text::is_concept_token(lowered(text.substr(i, close - i + 1)))) {
            std::fill(prot.begin() + static_cast<std::ptrdiff_t>(i), prot.begin() + static_cast<std::ptrdiff_t>(close + 1), 1);
            i = close;
        }
    }
    return prot;
}

bool right_boundary(std::string_view text, std::size_t end) {
    return end == text.size() || !is_word_byte(static_cast<unsigned char>(text[end]));
}

// Age-gender shorthand starting at `i`: two digits then m/f ("29F"), or m/f then
// two digits ("F29"), as a whole word. Returns the span of the letter.
std::optional<Span> match_shorthand(std::string_view text, std::size_t i, const std::vector<std::uint8_t>& prot) {
    auto gender_of = [](unsigned char c) -> const char* {
        c = lower(c);
        if (c == 'm') return "<man>";
        if (c == 'f') return "<woman>";
        return nullptr;
    };
    const std::size_t n = text.size();
    auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
    if (i + 3 > n) return std::nullopt;
    for (std::size_t k = i; k < i + 3; ++k)
        if (prot[k]) return std::nullopt;
    if (is_digit(at(i)) && is_digit(at(i + 1)) && gender_of(at(i + 2)) && right_boundary(text, i + 3))
        return Span{i + 2, i + 3, gender_of(at(i + 2))};
    if (gender_of(at(i)) && is_digit(at(i + 1)) && is_digit(at(i + 2)) && right_boundary(text, i + 3))
        return Span{i, i + 1, gender_of(at(i))};
    return std::nullopt;
}

}  // namespace

std::string_view to_string(Category c) {
    switch (c) {
        case Category::cvd:
            return "cvd";
        case Category::symptom:
            return "symptom";
        case Category::gender:
            return "gender";
    }
    return "?";
}

std::optional<Category> parse_category(std::string_view s) {
    if (s == "cvd") return Category::cvd;
    if (s == "symptom") return Category::symptom;
    if (s == "gender") return Category::gender;
    return std::nullopt;
}

Lexicon Lexicon::from_entries(std::vector<LexiconEntry> entries, Category category) {
    Lexicon lex;
    lex.category_ = category;
    lex.trie_.emplace_back();
    std::unordered_map<std::string, std::size_t> seen;
    for (auto& e : entries) {
        e.surface = lowered(e.surface);
        if (e.category != category)
            throw ValidationError(where(e) + ": category " + std::string(to_string(e.category)) +
                                  " in a " + std::string(to_string(category)) + " lexicon");
        validate_entry(e);
        const auto [it, inserted] = seen.emplace(e.surface, lex.entries_.size());
        if (!inserted)
            throw ValidationError("duplicate surface '" + e.surface + "' at " + where(lex.entries_[it->second]) +
                                  " and " + where(e));
        int node = 0;
        for (unsigned char c : e.surface) {
            auto found = lex.trie_[static_cast<std::size_t>(node)].next.find(c);
            if (found == lex.trie_[static_cast<std::size_t>(node)].next.end()) {
                lex.trie_.emplace_back();
                const int child = static_cast<int>(lex.trie_.size() - 1);
                lex.trie_[static_cast<std::size_t>(node)].next.emplace(c, child);
                node = child;
            } else {
                node = found->second;
            }
        }
        lex.trie_[static_cast<std::size_t>(node)].entry = static_cast<int>(lex.entries_.size());
        lex.entries_.push_back(std::move(e));
    }
    return lex;
}

std::vector<Span> Lexicon::find_matches(std::string_view text) const {
    std::vector<Span> spans;
    if (trie_.empty() && category_ != Category::gender) return spans;
    const auto prot = protected_bytes(text);
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        const bool left_ok = i == 0 || !is_word_byte(static_cast<unsigned char>(text[i - 1]));
        if (prot[i] || !left_ok || !is_word_byte(c)) {
            ++i;
            continue;
        }
        // best_end is where the matched token ends; for shorthand that is past the span.
        std::optional<Span> best;
        std::size_t best_end = i;
        if (!trie_.empty()) {
            int node = 0;
            for (std::size_t k = i; k < n && !prot[k]; ++k) {
                const auto& next = trie_[static_cast<std::size_t>(node)].next;
                const auto it = next.find(lower(static_cast<unsigned char>(text[k])));
                if (it == next.end()) break;
                node = it->second;
                const int entry = trie_[static_cast<std::size_t>(node)].entry;
                if (entry >= 0 && right_boundary(text, k + 1)) {
                    best = Span{i, k + 1, entries_[static_cast<std::size_t>(entry)].tag};
                    best_end = k + 1;
                }
            }
        }
        if (category_ == Category::gender && best_end < i + 3) {
            if (auto sh = match_shorthand(text, i, prot)) {
                best = std::move(sh);
                best_end = i + 3;
            }
        }
        if (best) {
            spans.push_back(std::move(*best));
            i = best_end;
        } else {
            ++i;
        }
    }
    return spans;
}

std::vector<LexiconEntry> read_lexicon_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open lexicon " + path.string());
    std::vector<LexiconEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    std::unordered_map<std::string, std::size_t> seen;  // "category\tsurface" -> line
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> cols;
        std::size_t pos = 0;
        while (true) {
            const auto tab = line.find('\t', pos);
            cols.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        const std::string ctx = path.string() + ":" + std::to_string(lineno);
        if (cols.size() != 3) throw ValidationError(ctx + ": expected 3 tab-separated columns, got " + std::to_string(cols.size()));
        const auto category = parse_category(cols[2]);
        if (!category) throw ValidationError(ctx + ": unknown category '" + cols[2] + "'");
        LexiconEntry e{lowered(cols[0]), cols[1], *category, lineno};
        try {
            validate_entry(e);
        } catch (const ValidationError& err) {
            throw ValidationError(path.string() + ": " + err.what());
        }
        const auto key = cols[2] + "\t" + e.surface;
        const auto [it, inserted] = seen.emplace(key, lineno);
        if (!inserted)
            throw ValidationError(path.string() + ": duplicate surface '" + e.surface + "' at line " +
                                  std::to_string(it->second) + " and line " + std::to_string(lineno));
        entries.push_back(std::move(e));
    }
    return entries;
}

Lexicon load_lexicon(const std::filesystem::path& path, Category category) {
    auto all = read_lexicon_file(path);
    std::vector<LexiconEntry> selected;
    for (auto& e : all)
        if (e.category == category) selected.push_back(std::move(e));
    try {
        return Lexicon::from_entries(std::move(selected), category);
    } catch (const ValidationError& err) {
        throw ValidationError(path.string() + ": " + err.what());
    }
}

std::vector<Span> find_matches(std::string_view text, const Lexicon& lexicon) { return lexicon.find_matches(text); }

std::string apply_spans(std::string_view text, const std::vector<Span>& spans) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    for (const auto& s : spans) {
        out.append(text.substr(pos, s.start - pos));
        out.append(s.tag);
        pos = s.end;
    }
    out.append(text.substr(pos));
    return out;
}

std::string mask_symptoms(std::string_view text, const Lexicon& symptom_lexicon) {
    return apply_spans(text, symptom_lexicon.find_matches(text));
}

std::string mask_gender(std::string_view text, const Lexicon& gender_lexicon) {
    return apply_spans(text, gender_lexicon.find_matches(text));
}

MaskedViews build_views(std::string_view text, const Lexicon& symptom_lexicon, const Lexicon& gender_lexicon) {
    MaskedViews v;
    v.original = std::string(text);
    v.symptom_spans = symptom_lexicon.find_matches(text);
    v.gender_spans = gender_lexicon.find_matches(text);
    v.symptom_view = apply_spans(text, v.symptom_spans);
    v.gender_view = apply_spans(text, v.gender_spans);
    return v;
}

MaskedViews raw_views(std::string_view text) {
    MaskedViews v;
    v.original = std::string(text);
    v.symptom_view = v.original;
    v.gender_view = v.original;
    return v;
}

}  // namespace gem::knowledge
