#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/knowledge.hpp"
#include "gem/labels.hpp"
#include "gem/text.hpp"

namespace gem::corpus {

enum class Kind { post, comment };
enum class Provenance { channel_label, weak_labeler, synthetic };

std::string_view to_string(Kind k);
std::string_view to_string(Provenance p);

struct RawItem {
    std::string id;
    std::string author_id;
    Kind kind = Kind::post;
    std::string source;
    std::string text;
    std::uint64_t upvotes = 0;
    std::int64_t created_at = 0;
    friend bool operator==(const RawItem&, const RawItem&) = default;
};

struct LabeledItem {
    RawItem item;
    std::optional<Symptom> symptom;
    std::optional<Gender> gender;
    std::optional<Provenance> provenance;  // absent for unlabeled crawl output
    friend bool operator==(const LabeledItem&, const LabeledItem&) = default;
};

// Throws ValidationError when the item breaks the provenance/label rules.
void validate(const LabeledItem& item);

struct GeneratorSpec {
    std::size_t n_items = 1000;
    std::array<double, kNumSymptoms> symptom_balance{0.25, 0.25, 0.25, 0.25};
    std::array<double, kNumGenders> gender_balance{0.5, 0.5};
    double cue_density = 1.0;     // probability an item carries its symptom cue
    bool interaction_mode = false;  // symptom label = f(symptom cue, gender cue)
    std::size_t noise_vocab_size = 300;
    std::uint64_t seed = 7;

    // Rendering knobs.
    std::size_t min_filler_sentences = 6;
    std::size_t max_filler_sentences = 9;
    double cue_zipf_exponent = 1.0;  // skew of surface choice within a concept
    double shorthand_rate = 0.15;    // gender cue rendered as "29F"-style shorthand
    double comment_fraction = 0.5;
    double off_topic_rate = 0.0;     // items rendered without any CVD term
    double gender_label_noise = 0.0;  // stored gender flipped relative to the cue (channel noise)
    bool gender_channels = false;    // sources are askmen/askwomen instead of MH channels
};

void validate(const GeneratorSpec& spec);

// The label stream drawn before any text is rendered: exact per-class quotas
// (largest remainder), shuffled with the spec seed.
std::vector<std::pair<Symptom, Gender>> synthetic_label_stream(const GeneratorSpec& spec);

// Under interaction mode the cue planted for label `s` depends on the gender.
Symptom interaction_cue(Symptom label, Gender gender);

struct GeneratorLexicons {
    const knowledge::Lexicon& cvd;
    const knowledge::Lexicon& symptom;
    const knowledge::Lexicon& gender;
};

std::vector<LabeledItem> generate_synthetic_corpus(const GeneratorSpec& spec, const GeneratorLexicons& lexicons);

// Items whose text has at least one CVD lexicon match; order preserved.
std::vector<RawItem> filter_cvd(std::span<const RawItem> items, const knowledge::Lexicon& cvd_lexicon);
std::vector<LabeledItem> filter_cvd(std::span<const LabeledItem> items, const knowledge::Lexicon& cvd_lexicon);

struct QualityThresholds {
    std::uint64_t min_upvotes = 10;  // strict: upvotes > min_upvotes
    std::size_t min_tokens = 50;     // inclusive: whitespace tokens >= min_tokens
};
struct QualityOptions {
    QualityThresholds post;
    QualityThresholds comment;
};

std::size_t whitespace_token_count(std::string_view text);
bool passes_quality(const RawItem& item, const QualityThresholds& t);
std::vector<RawItem> quality_filter(std::span<const RawItem> items, std::uint64_t min_upvotes = 10,
                                    std::size_t min_tokens = 50);
std::vector<LabeledItem> quality_filter(std::span<const LabeledItem> items, const QualityOptions& options);

// URLs become <url>; u/name, /u/name and @name mentions become <user>.
std::string anonymize(std::string_view text);

enum class StratifyBy { none, symptom, gender, both };

struct CorpusSplit {
    std::vector<LabeledItem> train;
    std::vector<LabeledItem> dev;
    std::vector<LabeledItem> test;
    std::array<double, 3> ratios{0.75, 0.05, 0.20};
};

// Deterministic per seed. Strata are the cross-product of the label families
// selected by stratify_by that are present on each item.
CorpusSplit split(std::span<const LabeledItem> items, std::array<double, 3> ratios, std::uint64_t seed,
                  StratifyBy stratify_by = StratifyBy::both);

// Exact largest-remainder allocation of n items over the ratios.
std::array<std::size_t, 3> allocate(std::size_t n, const std::array<double, 3>& ratios);

// Anything that can assign a gender to texts, e.g. a trained single-task model.
class GenderClassifier {
public:
    virtual ~GenderClassifier() = default;
    virtual std::vector<Gender> classify(std::span<const std::string> texts) const = 0;
    virtual const text::Vocabulary& vocabulary() const = 0;
};

// Rejects labelers whose vocabulary covers less than (1 - max_unknown_rate) of
// the items' tokens.
std::vector<LabeledItem> weak_label_gender(const GenderClassifier& labeler, std::span<const LabeledItem> items,
                                           double max_unknown_rate = 0.5);

// Newline-delimited records behind a version header line.
void save_corpus(const std::filesystem::path& path, std::span<const LabeledItem> items);
std::vector<LabeledItem> load_corpus(const std::filesystem::path& path);
std::string serialize_item(const LabeledItem& item);
LabeledItem parse_item(std::string_view line);
std::vector<RawItem> raw_items(std::span<const LabeledItem> items);

// Table-1-style counts: items per (class, kind) and distinct authors per kind.
struct CorpusStats {
    std::map<std::string, std::array<std::size_t, 2>> per_class;  // class -> {posts, comments}
    std::array<std::size_t, 2> totals{0, 0};
    std::array<std::size_t, 2> users{0, 0};
};
CorpusStats corpus_stats(std::span<const LabeledItem> items);

}  // namespace gem::corpus
