#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gem::knowledge {

enum class Category { cvd, symptom, gender };

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view s);

struct LexiconEntry {
    std::string surface;  // lower-cased
    std::string tag;  // e.g. "<anxiety>"
    Category category = Category::cvd;
    std::size_t line = 0;  // 1-based source line, 0 when built in memory
};

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive byte offset
    std::string tag;
    friend bool operator==(const Span&, const Span&) = default;
};

// Surface-form lookup for one category. Matching is ASCII case-insensitive,
// word-bounded and leftmost-longest without overlaps. Concept tokens already
// present in a text are never matched inside. Gender lexicons additionally
// recognise age-gender shorthand ("29F", "F29"): the letter is the span, the
// digits stay in place.
class Lexicon {
public:
    Lexicon() = default;
    static Lexicon from_entries(std::vector<LexiconEntry> entries, Category category);

    Category category() const { return category_; }
    const std::vector<LexiconEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    std::vector<Span> find_matches(std::string_view text) const;

private:
    struct TrieNode {
        std::map<unsigned char, int> next;
        int entry = -1;
    };

    Category category_ = Category::cvd;
    std::vector<LexiconEntry> entries_;
    std::vector<TrieNode> trie_;
};

// Every entry of a lexicon file, validated. Used by `lexicon validate`.
std::vector<LexiconEntry> read_lexicon_file(const std::filesystem::path& path);

// Entries of `category` from the file; entries of other categories are ignored.
Lexicon load_lexicon(const std::filesystem::path& path, Category category);

std::vector<Span> find_matches(std::string_view text, const Lexicon& lexicon);

// Replaces each span of `text` by its concept token.
std::string apply_spans(std::string_view text, const std::vector<Span>& spans);

std::string mask_symptoms(std::string_view text, const Lexicon& symptom_lexicon);
std::string mask_gender(std::string_view text, const Lexicon& gender_lexicon);

struct MaskedViews {
    std::string original;
    std::string symptom_view;
    std::string gender_view;
    std::vector<Span> symptom_spans;
    std::vector<Span> gender_spans;
};

MaskedViews build_views(std::string_view text, const Lexicon& symptom_lexicon, const Lexicon& gender_lexicon);

// Views for the raw-text ablation: both views are the original text.
MaskedViews raw_views(std::string_view text);

}  // namespace gem::knowledge
