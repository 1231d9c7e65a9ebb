#include "gem/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "gem/error.hpp"
#include "gem/rng.hpp"

namespace gem::text {
namespace {

bool is_word_byte(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return tokens;
}

const std::vector<std::string>& concept_tokens() {
    static const std::vector<std::string> tokens{"<depression>", "<anxiety>", "<bipolar>", "<ptsd>", "<man>",
                                                 "<woman>",      "<cvd>",     "<url>",     "<user>"};
    return tokens;
}

bool is_concept_token(std::string_view tok) {
    const auto& c = concept_tokens();
    return std::find(c.begin(), c.end(), tok) != c.end();
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (c == '<') {
            const auto close = text.find('>', i);
            if (close != std::string_view::npos) {
                std::string candidate(text.substr(i, close - i + 1));
                std::transform(candidate.begin(), candidate.end(), candidate.begin(), lower);
                if (is_concept_token(candidate)) {
                    out.push_back(std::move(candidate));
                    i = close + 1;
                    continue;
                }
            }
        }
        if (is_word_byte(c)) {
            std::size_t j = i;
            while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            std::string word(text.substr(i, j - i));
            std::transform(word.begin(), word.end(), word.begin(), lower);
            out.push_back(std::move(word));
            i = j;
            continue;
        }
        out.emplace_back(1, static_cast<char>(c));
        ++i;
    }
    return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, int min_freq) {
    if (texts.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::size_t> freq;
    for (const auto& t : texts)
        for (auto& tok : tokenize(t)) ++freq[std::move(tok)];

    std::vector<std::pair<std::string, std::size_t>> content;
    for (auto& [tok, count] : freq) {
        if (static_cast<long long>(count) < min_freq) continue;
        if (is_concept_token(tok)) continue;
        if (std::find(special_tokens().begin(), special_tokens().end(), tok) != special_tokens().end()) continue;
        content.emplace_back(tok, count);
    }
    std::stable_sort(content.begin(), content.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> tokens = special_tokens();
    tokens.insert(tokens.end(), concept_tokens().begin(), concept_tokens().end());
    for (auto& [tok, count] : content) tokens.push_back(tok);
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    const auto& sp = special_tokens();
    const auto& cp = concept_tokens();
    if (tokens.size() < sp.size() + cp.size())
        throw ValidationError("vocabulary is missing its special/concept block");
    for (std::size_t i = 0; i < sp.size(); ++i)
        if (tokens[i] != sp[i]) throw ValidationError("vocabulary id " + std::to_string(i) + " must be " + sp[i]);
    for (std::size_t i = 0; i < cp.size(); ++i)
        if (tokens[sp.size() + i] != cp[i])
            throw ValidationError("vocabulary id " + std::to_string(sp.size() + i) + " must be " + cp[i]);

    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        const auto& tok = v.tokens_[i];
        if (tok.empty()) throw ValidationError("empty token at id " + std::to_string(i));
        if (!v.index_.emplace(tok, static_cast<int>(i)).second)
            throw ValidationError("duplicate token '" + tok + "' at id " + std::to_string(i));
    }
    return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = fnv1a("gem-vocab");
    for (const auto& t : tokens_) h = fnv1a(t + '\n', h);
    return h;
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 3) throw ConfigError("max_len must be at least 3, got " + std::to_string(max_len));
    const auto toks = tokenize(text);
    const std::size_t keep = std::min(toks.size(), max_len - 2);
    TokenSequence seq;
    seq.ids.reserve(keep + 2);
    seq.ids.push_back(kCls);
    for (std::size_t i = 0; i < keep; ++i) seq.ids.push_back(vocab.id(toks[i]));
    seq.ids.push_back(kSep);
    return seq;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (int id : seq.ids) {
        if (vocab.is_special(id)) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

Batch make_batch(std::span<const TokenSequence> sequences, std::optional<std::size_t> pad_to) {
    if (sequences.empty()) throw ValidationError("make_batch: no sequences");
    std::size_t longest = 0;
    for (const auto& s : sequences) longest = std::max(longest, s.ids.size());
    const std::size_t T = pad_to.value_or(longest);
    if (longest > T)
        throw ValidationError("make_batch: sequence of length " + std::to_string(longest) + " exceeds pad_to " +
                              std::to_string(T));
    Batch b;
    b.batch_size = sequences.size();
    b.seq_len = T;
    b.ids.assign(b.batch_size * T, kPad);
    b.pad_mask.assign(b.batch_size * T, 0);
    for (std::size_t r = 0; r < sequences.size(); ++r) {
        const auto& ids = sequences[r].ids;
        if (ids.empty()) throw ValidationError("make_batch: empty sequence at row " + std::to_string(r));
        std::copy(ids.begin(), ids.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * T));
        std::fill_n(b.pad_mask.begin() + static_cast<std::ptrdiff_t>(r * T), ids.size(), 1);
    }
    return b;
}

std::vector<TokenSequence> unbatch(const Batch& batch) {
    std::vector<TokenSequence> out(batch.batch_size);
    for (std::size_t r = 0; r < batch.batch_size; ++r)
        for (std::size_t t = 0; t < batch.seq_len; ++t)
            if (batch.pad_mask[r * batch.seq_len + t]) out[r].ids.push_back(batch.ids[r * batch.seq_len + t]);
    return out;
}

PairedBatch make_paired_batch(std::span<const TokenSequence> symptom_views,
                              std::span<const TokenSequence> gender_views) {
    if (symptom_views.size() != gender_views.size())
        throw ValidationError("paired batch: view counts differ");
    std::size_t T = 0;
    for (const auto& s : symptom_views) T = std::max(T, s.ids.size());
    for (const auto& s : gender_views) T = std::max(T, s.ids.size());
    return {make_batch(symptom_views, T), make_batch(gender_views, T)};
}

}  // namespace gem::text
