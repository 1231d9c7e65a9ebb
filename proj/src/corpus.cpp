#include "gem/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "gem/error.hpp"
#include "gem/rng.hpp"

namespace gem::corpus {
namespace {

using knowledge::Lexicon;

constexpr std::string_view kCorpusHeader = R"({"format":"gem-corpus","version":1})";

bool is_word_byte(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Largest-remainder quotas for a discrete distribution.
template <std::size_t N>
std::array<std::size_t, N> quotas(std::size_t n, const std::array<double, N>& fractions) {
    std::array<std::size_t, N> out{};
    std::array<double, N> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double exact = fractions[i] * static_cast<double>(n);
        out[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = exact - static_cast<double>(out[i]);
        assigned += out[i];
    }
    std::array<std::size_t, N> order{};
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++out[order[k % N]];
    return out;
}

template <std::size_t N>
void check_fractions(const std::array<double, N>& f, const char* what) {
    double total = 0.0;
    for (double v : f) {
        if (!(v >= 0.0) || v > 1.0) throw ConfigError(std::string(what) + " fractions must lie in [0, 1]");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(what) + " fractions must sum to 1");
}

// Zipf-weighted choice over a list ordered by prominence.
class ZipfPicker {
public:
    ZipfPicker(std::size_t n, double exponent) : cdf_(n) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
            cdf_[r] = acc;
        }
        for (double& c : cdf_) c /= acc;
    }
    std::size_t pick(Rng& rng) const {
        const double u = rng.uniform();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    }

private:
    std::vector<double> cdf_;
};

template <typename T>
const T& choose(const std::vector<T>& v, Rng& rng) {
    return v[rng.below(v.size())];
}

const std::vector<std::string> kFunctionWords{"the", "and", "to", "of", "it", "was", "that", "for", "with",
                                              "on",  "at",  "but", "so", "just", "really", "then", "also",
                                              "very", "about", "after", "before", "some", "this", "today"};

std::vector<std::string> make_noise_vocab(std::size_t size, std::initializer_list<const Lexicon*> lexicons) {
    static const std::string consonants = "bdfgklnprstvz";
    static const std::string vowels = "aeiou";
    Rng rng(0x5eed0fa11ULL);
    std::set<std::string> seen(kFunctionWords.begin(), kFunctionWords.end());
    std::vector<std::string> out;
    std::size_t attempts = 0;
    while (out.size() < size) {
        if (++attempts > size * 1000 + 10000) throw ConfigError("cannot build a noise vocabulary of the requested size");
        const std::size_t syllables = 2 + rng.below(2);
        std::string w;
        for (std::size_t s = 0; s < syllables; ++s) {
            w += consonants[rng.below(consonants.size())];
            w += vowels[rng.below(vowels.size())];
        }
        if (seen.count(w)) continue;
        bool clash = false;
        for (const Lexicon* lex : lexicons)
            if (!lex->find_matches(w).empty()) clash = true;
        if (clash) continue;
        seen.insert(w);
        out.push_back(std::move(w));
    }
    return out;
}

std::string capitalize(std::string s) {
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

std::string upper(std::string s) {
    for (auto& c : s)
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    return s;
}

std::string fill(std::string_view tmpl, std::string_view value) {
    std::string out(tmpl);
    const auto pos = out.find("{}");
    out.replace(pos, 2, value);
    return out;
}

const std::vector<std::string> kCvdTemplates{"had a {} last year", "the {} changed everything",
                                             "my doctor talked about {} again", "{} runs in the family",
                                             "still recovering from the {}", "they found {} during the checkup"};
const std::vector<std::string> kSymptomTemplates{"lately it is {} again", "{} keeps coming back",
                                                 "the {} got worse this month", "i am dealing with {}",
                                                 "still {} most days", "nobody sees the {}"};
const std::vector<std::string> kGenderTemplates{"{} noticed it first", "talked with {} about it",
                                                "{} drove me to the clinic", "{} keeps asking how i am",
                                                "{} sat with me at the hospital"};

}  // namespace

std::string_view to_string(Kind k) { return k == Kind::post ? "post" : "comment"; }

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::channel_label:
            return "channel_label";
        case Provenance::weak_labeler:
            return "weak_labeler";
        case Provenance::synthetic:
            return "synthetic";
    }
    return "?";
}

void validate(const LabeledItem& li) {
    const auto trimmed_empty = std::all_of(li.item.text.begin(), li.item.text.end(),
                                           [](char c) { return is_space(static_cast<unsigned char>(c)); });
    if (li.item.id.empty()) throw ValidationError("item with empty id");
    if (trimmed_empty) throw ValidationError("item " + li.item.id + ": empty text");
    if (!li.provenance) return;
    switch (*li.provenance) {
        case Provenance::channel_label:
            if (!li.symptom) throw ValidationError("item " + li.item.id + ": channel_label item without symptom");
            break;
        case Provenance::weak_labeler:
            if (!li.gender) throw ValidationError("item " + li.item.id + ": weak_labeler item without gender");
            break;
        case Provenance::synthetic:
            if (!li.symptom || !li.gender)
                throw ValidationError("item " + li.item.id + ": synthetic item must carry both labels");
            break;
    }
}

void validate(const GeneratorSpec& spec) {
    if (spec.n_items == 0) throw ConfigError("n_items must be positive");
    check_fractions(spec.symptom_balance, "symptom balance");
    check_fractions(spec.gender_balance, "gender balance");
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
    };
    unit(spec.cue_density, "cue_density");
    unit(spec.shorthand_rate, "shorthand_rate");
    unit(spec.comment_fraction, "comment_fraction");
    unit(spec.off_topic_rate, "off_topic_rate");
    unit(spec.gender_label_noise, "gender_label_noise");
    if (spec.noise_vocab_size == 0) throw ConfigError("noise_vocab_size must be positive");
    if (spec.min_filler_sentences > spec.max_filler_sentences)
        throw ConfigError("min_filler_sentences exceeds max_filler_sentences");
}

std::vector<std::pair<Symptom, Gender>> synthetic_label_stream(const GeneratorSpec& spec) {
    validate(spec);
    const auto sq = quotas(spec.n_items, spec.symptom_balance);
    const auto gq = quotas(spec.n_items, spec.gender_balance);
    std::vector<Symptom> symptoms;
    std::vector<Gender> genders;
    for (std::size_t c = 0; c < kNumSymptoms; ++c) symptoms.insert(symptoms.end(), sq[c], static_cast<Symptom>(c));
    for (std::size_t c = 0; c < kNumGenders; ++c) genders.insert(genders.end(), gq[c], static_cast<Gender>(c));
    Rng rng(mix_seed(spec.seed, 1));
    rng.shuffle(symptoms);
    rng.shuffle(genders);
    std::vector<std::pair<Symptom, Gender>> out(spec.n_items);
    for (std::size_t i = 0; i < spec.n_items; ++i) out[i] = {symptoms[i], genders[i]};
    return out;
}

Symptom interaction_cue(Symptom label, Gender gender) {
    if (gender == Gender::woman) return label;
    switch (label) {
        case Symptom::depression:
            return Symptom::anxiety;
        case Symptom::anxiety:
            return Symptom::depression;
        case Symptom::bipolar:
            return Symptom::ptsd;
        case Symptom::ptsd:
            return Symptom::bipolar;
    }
    return label;
}

std::vector<LabeledItem> generate_synthetic_corpus(const GeneratorSpec& spec, const GeneratorLexicons& lex) {
    const auto labels = synthetic_label_stream(spec);
    if (lex.cvd.empty() || lex.symptom.empty() || lex.gender.empty())
        throw ConfigError("generator needs non-empty cvd, symptom and gender lexicons");

    std::array<std::vector<std::string>, kNumSymptoms> symptom_pool;
    for (const auto& e : lex.symptom.entries())
        for (std::size_t c = 0; c < kNumSymptoms; ++c)
            if (e.tag == concept_token(static_cast<Symptom>(c))) symptom_pool[c].push_back(e.surface);
    std::array<std::vector<std::string>, kNumGenders> gender_pool;
    for (const auto& e : lex.gender.entries())
        for (std::size_t c = 0; c < kNumGenders; ++c)
            if (e.tag == concept_token(static_cast<Gender>(c))) gender_pool[c].push_back(e.surface);
    for (const auto& p : symptom_pool)
        if (p.empty()) throw ConfigError("symptom lexicon lacks surfaces for some class");
    for (const auto& p : gender_pool)
        if (p.empty()) throw ConfigError("gender lexicon lacks surfaces for some class");
    std::vector<std::string> cvd_pool;
    for (const auto& e : lex.cvd.entries()) cvd_pool.push_back(e.surface);

    const auto noise = make_noise_vocab(spec.noise_vocab_size, {&lex.cvd, &lex.symptom, &lex.gender});

    Rng rng(mix_seed(spec.seed, 2));
    std::vector<LabeledItem> out;
    out.reserve(spec.n_items);
    for (std::size_t i = 0; i < spec.n_items; ++i) {
        const auto [symptom, cue_gender] = labels[i];
        Gender stored_gender = cue_gender;
        if (rng.bernoulli(spec.gender_label_noise))
            stored_gender = cue_gender == Gender::man ? Gender::woman : Gender::man;
        const Symptom cue = spec.interaction_mode ? interaction_cue(symptom, cue_gender) : symptom;

        std::vector<std::string> sentences;
        if (!rng.bernoulli(spec.off_topic_rate)) {
            std::string term = choose(cvd_pool, rng);
            if (term.size() <= 4 && term.find(' ') == std::string::npos && rng.bernoulli(0.7)) term = upper(term);
            sentences.push_back(fill(choose(kCvdTemplates, rng), term));
        }
        if (rng.bernoulli(spec.cue_density)) {
            const auto& pool = symptom_pool[static_cast<std::size_t>(cue)];
            const ZipfPicker picker(pool.size(), spec.cue_zipf_exponent);
            sentences.push_back(fill(choose(kSymptomTemplates, rng), pool[picker.pick(rng)]));
        }
        if (spec.interaction_mode || rng.bernoulli(spec.cue_density)) {
            if (rng.bernoulli(spec.shorthand_rate)) {
                const std::string age = std::to_string(18 + rng.below(52));
                std::string letter = cue_gender == Gender::man ? "M" : "F";
                if (rng.bernoulli(0.3)) letter = letter == "M" ? "m" : "f";
                switch (rng.below(3)) {
                    case 0:
                        sentences.push_back("i am " + age + letter);
                        break;
                    case 1:
                        sentences.push_back("[" + age + letter + "] here");
                        break;
                    default:
                        sentences.push_back(letter + age + " here");
                        break;
                }
            } else {
                const auto& pool = gender_pool[static_cast<std::size_t>(cue_gender)];
                const ZipfPicker picker(pool.size(), spec.cue_zipf_exponent);
                sentences.push_back(fill(choose(kGenderTemplates, rng), pool[picker.pick(rng)]));
            }
        }
        const std::size_t fillers =
            spec.min_filler_sentences + rng.below(spec.max_filler_sentences - spec.min_filler_sentences + 1);
        for (std::size_t f = 0; f < fillers; ++f) {
            const std::size_t words = 5 + rng.below(5);
            std::string s;
            for (std::size_t w = 0; w < words; ++w) {
                if (w) s += ' ';
                s += rng.bernoulli(0.35) ? choose(kFunctionWords, rng) : choose(noise, rng);
            }
            sentences.push_back(std::move(s));
        }
        rng.shuffle(sentences);

        std::string body;
        for (const auto& s : sentences) {
            if (!body.empty()) body += ' ';
            body += capitalize(s);
            body += '.';
        }

        LabeledItem li;
        li.item.id = "syn" + std::to_string(spec.seed) + "-" + std::to_string(i);
        li.item.author_id = "a" + std::to_string(rng.below(std::max<std::size_t>(1, spec.n_items / 3)));
        li.item.kind = rng.bernoulli(spec.comment_fraction) ? Kind::comment : Kind::post;
        li.item.source = spec.gender_channels ? (stored_gender == Gender::man ? "askmen" : "askwomen")
                                              : std::string(to_string(symptom));
        li.item.text = std::move(body);
        li.item.upvotes = static_cast<std::uint64_t>(std::floor(std::exp(rng.uniform() * std::log(300.0)))) - 1;
        li.item.created_at = 1577836800 + static_cast<std::int64_t>(rng.below(2 * 365 * 86400));
        li.symptom = symptom;
        li.gender = stored_gender;
        li.provenance = Provenance::synthetic;
        out.push_back(std::move(li));
    }
    return out;
}

std::vector<RawItem> filter_cvd(std::span<const RawItem> items, const knowledge::Lexicon& cvd_lexicon) {
    if (cvd_lexicon.empty()) throw ConfigError("CVD lexicon is empty");
    if (cvd_lexicon.category() != knowledge::Category::cvd) throw ConfigError("filter_cvd needs a cvd lexicon");
    std::vector<RawItem> out;
    for (const auto& it : items)
        if (!cvd_lexicon.find_matches(it.text).empty()) out.push_back(it);
    return out;
}

std::vector<LabeledItem> filter_cvd(std::span<const LabeledItem> items, const knowledge::Lexicon& cvd_lexicon) {
    if (cvd_lexicon.empty()) throw ConfigError("CVD lexicon is empty");
    if (cvd_lexicon.category() != knowledge::Category::cvd) throw ConfigError("filter_cvd needs a cvd lexicon");
    std::vector<LabeledItem> out;
    for (const auto& it : items)
        if (!cvd_lexicon.find_matches(it.item.text).empty()) out.push_back(it);
    return out;
}

std::size_t whitespace_token_count(std::string_view text) {
    std::size_t count = 0;
    bool in_token = false;
    for (char c : text) {
        const bool space = is_space(static_cast<unsigned char>(c));
        if (!space && !in_token) ++count;
        in_token = !space;
    }
    return count;
}

bool passes_quality(const RawItem& item, const QualityThresholds& t) {
    return item.upvotes > t.min_upvotes && whitespace_token_count(item.text) >= t.min_tokens;
}

std::vector<RawItem> quality_filter(std::span<const RawItem> items, std::uint64_t min_upvotes,
                                    std::size_t min_tokens) {
    const QualityThresholds t{min_upvotes, min_tokens};
    std::vector<RawItem> out;
    for (const auto& it : items)
        if (passes_quality(it, t)) out.push_back(it);
    return out;
}

std::vector<LabeledItem> quality_filter(std::span<const LabeledItem> items, const QualityOptions& options) {
    std::vector<LabeledItem> out;
    for (const auto& it : items)
        if (passes_quality(it.item, it.item.kind == Kind::post ? options.post : options.comment)) out.push_back(it);
    return out;
}

std::string anonymize(std::string_view text) {
    const std::size_t n = text.size();
    auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
    auto lower = [](unsigned char c) { return (c >= 'A' && c <= 'Z') ? static_cast<unsigned char>(c - 'A' + 'a') : c; };
    auto alpha = [](unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); };
    auto name_char = [](unsigned char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    };
    // End of a URL body: stops at whitespace or '<', then drops trailing punctuation.
    auto url_end = [&](std::size_t k) {
        while (k < n && !is_space(at(k)) && at(k) != '<') ++k;
        static const std::string_view trailing = ".,!?;:)]}'\"";
        while (k > 0 && trailing.find(static_cast<char>(at(k - 1))) != std::string_view::npos) --k;
        return k;
    };

    std::string out;
    out.reserve(n);
    std::size_t i = 0;
    while (i < n) {
        // '>' blocks like a word character so text following an inserted token never
        // becomes a new match on a second pass.
        const bool left_ok = i == 0 || (!is_word_byte(at(i - 1)) && at(i - 1) != '>');
        if (left_ok && alpha(at(i))) {
            // scheme://
            std::size_t k = i + 1;
            while (k < n && (is_word_byte(at(k)) || at(k) == '+' || at(k) == '.' || at(k) == '-') && at(k) < 0x80) ++k;
            if (k + 3 < n && text.substr(k, 3) == "://" && !is_space(at(k + 3)) && at(k + 3) != '<') {
                const std::size_t end = url_end(k + 3);
                if (end > k + 3) {
                    out += "<url>";
                    i = end;
                    continue;
                }
            }
            // www.
            if (i + 4 < n && lower(at(i)) == 'w' && lower(at(i + 1)) == 'w' && lower(at(i + 2)) == 'w' &&
                at(i + 3) == '.' && !is_space(at(i + 4)) && at(i + 4) != '<') {
                const std::size_t end = url_end(i + 4);
                if (end > i + 4) {
                    out += "<url>";
                    i = end;
                    continue;
                }
            }
        }
        // u/name or /u/name
        {
            std::size_t k = i;
            bool mention = false;
            if (at(k) == '/' && left_ok && k + 1 < n && lower(at(k + 1)) == 'u' && k + 2 < n && at(k + 2) == '/') {
                k += 3;
                mention = true;
            } else if (lower(at(k)) == 'u' && k + 1 < n && at(k + 1) == '/' && left_ok && (i == 0 || at(i - 1) != '/')) {
                k += 2;
                mention = true;
            }
            if (mention) {
                std::size_t e = k;
                while (e < n && name_char(at(e))) ++e;
                if (e > k) {
                    out += "<user>";
                    i = e;
                    continue;
                }
            }
        }
        // @name
        if (at(i) == '@' && left_ok) {
            std::size_t e = i + 1;
            while (e < n && name_char(at(e))) ++e;
            if (e > i + 1) {
                out += "<user>";
                i = e;
                continue;
            }
        }
        out += text[i];
        ++i;
    }
    return out;
}

std::array<std::size_t, 3> allocate(std::size_t n, const std::array<double, 3>& ratios) {
    return quotas(n, ratios);
}

CorpusSplit split(std::span<const LabeledItem> items, std::array<double, 3> ratios, std::uint64_t seed,
                  StratifyBy stratify_by) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

    auto stratum_of = [&](const LabeledItem& li) {
        std::string key;
        const bool by_s = stratify_by == StratifyBy::symptom || stratify_by == StratifyBy::both;
        const bool by_g = stratify_by == StratifyBy::gender || stratify_by == StratifyBy::both;
        if (by_s && li.symptom) key += std::string(gem::to_string(*li.symptom));
        if (by_g && li.gender) key += (key.empty() ? "" : "/") + std::string(gem::to_string(*li.gender));
        return key.empty() ? std::string("unlabeled") : key;
    };

    std::map<std::string, std::vector<std::size_t>> strata;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!ids.insert(items[i].item.id).second) throw ValidationError("duplicate item id " + items[i].item.id);
        strata[stratum_of(items[i])].push_back(i);
    }

    std::vector<int> part(items.size(), 0);
    std::uint64_t tag = 0;
    for (auto& [name, members] : strata) {
        if (members.size() < 3)
            throw StratificationError("stratum '" + name + "' has " + std::to_string(members.size()) +
                                      " items; at least 3 are needed");
        Rng rng(mix_seed(seed, fnv1a(name) + tag++));
        rng.shuffle(members);
        const auto sizes = allocate(members.size(), ratios);
        for (std::size_t k = 0; k < members.size(); ++k)
            part[members[k]] = k < sizes[0] ? 0 : (k < sizes[0] + sizes[1] ? 1 : 2);
    }

    CorpusSplit out;
    out.ratios = ratios;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& dst = part[i] == 0 ? out.train : (part[i] == 1 ? out.dev : out.test);
        dst.push_back(items[i]);
    }
    return out;
}

std::vector<LabeledItem> weak_label_gender(const GenderClassifier& labeler, std::span<const LabeledItem> items,
                                           double max_unknown_rate) {
    std::vector<std::string> texts;
    std::size_t tokens = 0, unknown = 0;
    for (const auto& li : items) {
        if (li.gender) throw ValidationError("item " + li.item.id + " already has a gender label");
        for (const auto& tok : text::tokenize(li.item.text)) {
            ++tokens;
            if (!labeler.vocabulary().contains(tok)) ++unknown;
        }
        texts.push_back(li.item.text);
    }
    if (tokens > 0 && static_cast<double>(unknown) / static_cast<double>(tokens) > max_unknown_rate)
        throw IncompatibilityError("labeler vocabulary covers only " +
                                   std::to_string(100.0 * (1.0 - static_cast<double>(unknown) / tokens)) +
                                   "% of item tokens");
    const auto genders = labeler.classify(texts);
    if (genders.size() != items.size()) throw ValidationError("labeler returned a wrong number of labels");
    std::vector<LabeledItem> out(items.begin(), items.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].gender = genders[i];
        out[i].provenance = Provenance::weak_labeler;
    }
    return out;
}

std::string serialize_item(const LabeledItem& li) {
    nlohmann::ordered_json j;
    j["id"] = li.item.id;
    j["author_id"] = li.item.author_id;
    j["kind"] = to_string(li.item.kind);
    j["source"] = li.item.source;
    j["text"] = li.item.text;
    j["upvotes"] = li.item.upvotes;
    j["created_at"] = li.item.created_at;
    if (li.symptom) j["symptom"] = gem::to_string(*li.symptom);
    if (li.gender) j["gender"] = gem::to_string(*li.gender);
    if (li.provenance) j["provenance"] = to_string(*li.provenance);
    return j.dump();
}

LabeledItem parse_item(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("record is not an object");
    static const std::set<std::string> known{"id",         "author_id", "kind",   "source",    "text",
                                             "upvotes",    "created_at", "symptom", "gender", "provenance"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ParseError("unknown field '" + it.key() + "'");
    LabeledItem li;
    try {
        li.item.id = j.at("id").get<std::string>();
        li.item.author_id = j.at("author_id").get<std::string>();
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "post")
            li.item.kind = Kind::post;
        else if (kind == "comment")
            li.item.kind = Kind::comment;
        else
            throw ParseError("unknown kind '" + kind + "'");
        li.item.source = j.at("source").get<std::string>();
        li.item.text = j.at("text").get<std::string>();
        if (!j.at("upvotes").is_number_unsigned()) throw ParseError("upvotes must be a non-negative integer");
        li.item.upvotes = j.at("upvotes").get<std::uint64_t>();
        if (!j.at("created_at").is_number_integer()) throw ParseError("created_at must be an integer");
        li.item.created_at = j.at("created_at").get<std::int64_t>();
        if (j.contains("symptom")) {
            li.symptom = gem::parse_symptom(j["symptom"].get<std::string>());
            if (!li.symptom) throw ParseError("unknown symptom '" + j["symptom"].get<std::string>() + "'");
        }
        if (j.contains("gender")) {
            li.gender = gem::parse_gender(j["gender"].get<std::string>());
            if (!li.gender) throw ParseError("unknown gender '" + j["gender"].get<std::string>() + "'");
        }
        if (j.contains("provenance")) {
            const auto p = j["provenance"].get<std::string>();
            if (p == "channel_label")
                li.provenance = Provenance::channel_label;
            else if (p == "weak_labeler")
                li.provenance = Provenance::weak_labeler;
            else if (p == "synthetic")
                li.provenance = Provenance::synthetic;
            else
                throw ParseError("unknown provenance '" + p + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad record field: ") + e.what());
    }
    try {
        validate(li);
    } catch (const ValidationError& e) {
        throw ParseError(e.what());
    }
    return li;
}

void save_corpus(const std::filesystem::path& path, std::span<const LabeledItem> items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write corpus " + path.string());
    out << kCorpusHeader << '\n';
    for (const auto& li : items) out << serialize_item(li) << '\n';
}

std::vector<LabeledItem> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCorpusHeader)
        throw ParseError(path.string() + ":1: missing or unsupported corpus header");
    std::vector<LabeledItem> items;
    std::set<std::string> ids;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            items.push_back(parse_item(line));
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!ids.insert(items.back().item.id).second)
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": duplicate id " + items.back().item.id);
    }
    return items;
}

std::vector<RawItem> raw_items(std::span<const LabeledItem> items) {
    std::vector<RawItem> out;
    out.reserve(items.size());
    for (const auto& li : items) out.push_back(li.item);
    return out;
}

CorpusStats corpus_stats(std::span<const LabeledItem> items) {
    CorpusStats s;
    std::array<std::set<std::string>, 2> authors;
    for (const auto& li : items) {
        const std::size_t k = li.item.kind == Kind::post ? 0 : 1;
        const std::string cls = li.symptom ? std::string(gem::to_string(*li.symptom)) : "unlabeled";
        ++s.per_class[cls][k];
        ++s.totals[k];
        authors[k].insert(li.item.author_id);
    }
    s.users = {authors[0].size(), authors[1].size()};
    return s;
}

}  // namespace gem::corpus
