#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gem::text {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kMask = 4;

// [PAD] [UNK] [CLS] [SEP] [MASK], in id order.
const std::vector<std::string>& special_tokens();
// Knowledge tokens that must survive tokenization as single entries.
const std::vector<std::string>& concept_tokens();
bool is_concept_token(std::string_view tok);

// Lower-cased words split on whitespace and punctuation. Word characters are
// ASCII alphanumerics, '_' and any byte >= 0x80; each other non-space byte is
// its own token. Concept tokens such as "<woman>" stay whole.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
public:
    Vocabulary() = default;

    // Content tokens with frequency >= min_freq, ordered by frequency desc then
    // lexicographically, after the fixed special and concept block.
    static Vocabulary build(std::span<const std::string> texts, int min_freq = 2);
    static Vocabulary from_tokens(std::vector<std::string> tokens);
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    int id(std::string_view token) const;  // kUnk when absent
    bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool is_special(int id) const { return id >= 0 && id < static_cast<int>(special_tokens().size()); }
    bool is_concept(int id) const {
        return id >= first_concept_id() && id < first_content_id();
    }
    static int first_concept_id() { return static_cast<int>(special_tokens().size()); }
    static int first_content_id() {
        return static_cast<int>(special_tokens().size() + concept_tokens().size());
    }

    std::uint64_t hash() const;

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
    std::vector<int> ids;
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// [CLS] + tokens + [SEP], head-truncated so the total never exceeds max_len.
TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len);
// Space-joined tokens; special tokens are skipped.
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);

struct Batch {
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<int> ids;                // B*T, row-major
    std::vector<std::uint8_t> pad_mask;  // B*T, 1 = real token
    std::optional<std::vector<int>> symptom_labels;
    std::optional<std::vector<int>> gender_labels;
};

// Right-pads with [PAD] to the longest sequence, or to pad_to when given.
Batch make_batch(std::span<const TokenSequence> sequences, std::optional<std::size_t> pad_to = std::nullopt);
std::vector<TokenSequence> unbatch(const Batch& batch);

// Symptom-view and gender-view batches padded to a common length.
struct PairedBatch {
    Batch symptom;
    Batch gender;
};
PairedBatch make_paired_batch(std::span<const TokenSequence> symptom_views,
                              std::span<const TokenSequence> gender_views);

}  // namespace gem::text
