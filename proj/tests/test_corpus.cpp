#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "gem/corpus.hpp"
#include "gem/error.hpp"
#include "gem/knowledge.hpp"
#include "gem/rng.hpp"
#include "gem/text.hpp"

using namespace gem;
using namespace gem::corpus;

namespace {

const std::string kData = std::string(GEM_SOURCE_DIR) + "/data/lexicons/";

struct Lex {
    knowledge::Lexicon cvd = knowledge::load_lexicon(kData + "cvd.tsv", knowledge::Category::cvd);
    knowledge::Lexicon symptom = knowledge::load_lexicon(kData + "symptom.tsv", knowledge::Category::symptom);
    knowledge::Lexicon gender = knowledge::load_lexicon(kData + "gender.tsv", knowledge::Category::gender);
    GeneratorLexicons view() const { return {cvd, symptom, gender}; }
};

const Lex& lex() {
    static const Lex l;
    return l;
}

RawItem raw(std::uint64_t upvotes, std::size_t tokens, Kind kind = Kind::post) {
    RawItem r;
    r.id = "q" + std::to_string(upvotes) + "_" + std::to_string(tokens);
    r.author_id = "a";
    r.kind = kind;
    r.upvotes = upvotes;
    for (std::size_t i = 0; i < tokens; ++i) r.text += (i ? " w" : "w");
    return r;
}

std::filesystem::path tmp(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("gem_test_corpus_" + name);
}

}  // namespace

TEST_CASE("quality filter on the boundary grid") {
    std::vector<RawItem> items;
    for (std::uint64_t u : {9, 10, 11})
        for (std::size_t t : {49, 50, 51}) items.push_back(raw(u, t));
    const auto kept = quality_filter(items);
    std::set<std::string> ids;
    for (const auto& r : kept) ids.insert(r.id);
    for (const auto& r : items) {
        const bool want = r.upvotes > 10 && whitespace_token_count(r.text) >= 50;
        CHECK_MESSAGE(ids.count(r.id) == (want ? 1u : 0u), r.id);
    }
    CHECK(kept.size() == 2);
}

TEST_CASE("whitespace token count") {
    CHECK(whitespace_token_count("") == 0);
    CHECK(whitespace_token_count("  a \t b\nc  ") == 3);
}

TEST_CASE("label stream meets the exact quotas") {
    GeneratorSpec spec;
    spec.n_items = 1000;
    for (std::uint64_t seed : {1, 2, 3}) {
        spec.seed = seed;
        std::array<std::size_t, 4> s{};
        std::array<std::size_t, 2> g{};
        for (const auto& [sy, ge] : synthetic_label_stream(spec)) {
            ++s[static_cast<std::size_t>(sy)];
            ++g[static_cast<std::size_t>(ge)];
        }
        for (auto c : s) {
            CHECK(c >= 240);
            CHECK(c <= 260);
        }
        CHECK(g[0] == 500);
    }
}

TEST_CASE("generated corpus is deterministic, valid and CVD related") {
    GeneratorSpec spec;
    spec.n_items = 200;
    const auto a = generate_synthetic_corpus(spec, lex().view());
    const auto b = generate_synthetic_corpus(spec, lex().view());
    CHECK(a == b);
    spec.seed = 8;
    CHECK_FALSE(generate_synthetic_corpus(spec, lex().view()) == a);
    for (const auto& li : a) CHECK_NOTHROW(validate(li));
    CHECK(filter_cvd(a, lex().cvd).size() == a.size());
}

TEST_CASE("interaction mode plants the gender-dependent cue") {
    GeneratorSpec spec;
    spec.n_items = 100;
    spec.interaction_mode = true;
    spec.min_filler_sentences = 1;
    spec.max_filler_sentences = 2;
    for (const auto& li : generate_synthetic_corpus(spec, lex().view())) {
        const auto cue = concept_token(interaction_cue(*li.symptom, *li.gender));
        const auto spans = lex().symptom.find_matches(li.item.text);
        bool found = false;
        for (const auto& s : spans) found |= s.tag == cue;
        CHECK_MESSAGE(found, li.item.text);
    }
}

TEST_CASE("off-topic items are removed by the CVD filter") {
    GeneratorSpec spec;
    spec.n_items = 300;
    spec.off_topic_rate = 0.3;
    const auto items = generate_synthetic_corpus(spec, lex().view());
    const auto kept = filter_cvd(items, lex().cvd);
    CHECK(kept.size() < items.size());
    CHECK(kept.size() > items.size() / 2);
}

TEST_CASE("allocation is exact and within one of the ideal share") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = rng.below(500);
        std::array<double, 3> r{rng.uniform() + 0.01, rng.uniform(), rng.uniform()};
        const double s = r[0] + r[1] + r[2];
        for (auto& x : r) x /= s;
        const auto a = allocate(n, r);
        CHECK(a[0] + a[1] + a[2] == n);
        for (int k = 0; k < 3; ++k) CHECK(std::abs(static_cast<double>(a[k]) - r[k] * n) < 1.0);
    }
}

TEST_CASE("split is stratified, disjoint and deterministic") {
    GeneratorSpec spec;
    spec.n_items = 400;
    const auto items = generate_synthetic_corpus(spec, lex().view());
    const auto s = split(items, {0.75, 0.05, 0.20}, 3);
    CHECK(s.train.size() + s.dev.size() + s.test.size() == items.size());
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.dev, &s.test})
        for (const auto& li : *part) CHECK(ids.insert(li.item.id).second);
    std::map<std::string, std::size_t> per;
    for (const auto& li : s.test) ++per[std::string(to_string(*li.symptom)) + std::string(to_string(*li.gender))];
    for (const auto& [k, v] : per) CHECK(v == doctest::Approx(10.0).epsilon(0.2));
    const auto again = split(items, {0.75, 0.05, 0.20}, 3);
    CHECK(again.test == s.test);
    CHECK_FALSE(split(items, {0.75, 0.05, 0.20}, 4).test == s.test);
}

TEST_CASE("split refuses tiny strata and bad ratios") {
    GeneratorSpec spec;
    spec.n_items = 40;
    auto items = generate_synthetic_corpus(spec, lex().view());
    items.resize(5);
    CHECK_THROWS_AS(split(items, {0.75, 0.05, 0.20}, 1), StratificationError);
    CHECK_THROWS_AS(split(items, {0.5, 0.5, 0.5}, 1), ConfigError);
}

TEST_CASE("anonymization") {
    CHECK(anonymize("see https://example.com/x?y=1. thanks") == "see <url>. thanks");
    CHECK(anonymize("ask u/some_one or /u/Other-1 and @handle") == "ask <user> or <user> and <user>");
    CHECK(anonymize("www.test.org") == "<url>");
    CHECK(anonymize("email me at a@b") == "email me at a@b");
    const std::string t = "go to http://a.b/c and u/x";
    CHECK(anonymize(anonymize(t)) == anonymize(t));
}

TEST_CASE("corpus round trip and parse errors") {
    GeneratorSpec spec;
    spec.n_items = 50;
    const auto items = generate_synthetic_corpus(spec, lex().view());
    const auto p = tmp("rt.jsonl");
    save_corpus(p, items);
    CHECK(load_corpus(p) == items);

    CHECK_THROWS_AS(parse_item(R"({"id":"a","text":"x","extra":1})"), ParseError);
    CHECK_THROWS_AS(parse_item("not json"), ParseError);
    {
        std::ofstream out(p);
        out << "no header\n";
    }
    CHECK_THROWS_AS(load_corpus(p), ParseError);
    CHECK_THROWS_AS(load_corpus(tmp("missing.jsonl")), IoError);
    std::filesystem::remove(p);
}

TEST_CASE("corpus stats count posts, comments and authors") {
    GeneratorSpec spec;
    spec.n_items = 120;
    const auto items = generate_synthetic_corpus(spec, lex().view());
    const auto st = corpus_stats(items);
    std::size_t posts = 0, comments = 0;
    std::set<std::string> post_authors;
    for (const auto& li : items) {
        (li.item.kind == Kind::post ? posts : comments)++;
        if (li.item.kind == Kind::post) post_authors.insert(li.item.author_id);
    }
    CHECK(st.totals[0] == posts);
    CHECK(st.totals[1] == comments);
    CHECK(st.users[0] == post_authors.size());
    std::size_t sum = 0;
    for (const auto& [k, v] : st.per_class) sum += v[0] + v[1];
    CHECK(sum == items.size());
}

namespace {

struct FixedLabeler : GenderClassifier {
    text::Vocabulary vocab;
    std::vector<Gender> classify(std::span<const std::string> texts) const override {
        return std::vector<Gender>(texts.size(), Gender::woman);
    }
    const text::Vocabulary& vocabulary() const override { return vocab; }
};

}  // namespace

TEST_CASE("weak labeling rejects a labeler with poor vocabulary coverage") {
    std::vector<LabeledItem> items(2);
    items[0].item.id = "a";
    items[0].item.text = "alpha beta gamma";
    items[1].item.id = "b";
    items[1].item.text = "alpha delta";
    FixedLabeler good;
    const std::vector<std::string> known{"alpha beta gamma"};
    good.vocab = text::Vocabulary::build(known, 1);
    const auto out = weak_label_gender(good, items);
    CHECK(out[0].gender == Gender::woman);
    CHECK(out[1].provenance == Provenance::weak_labeler);
    FixedLabeler bad;
    const std::vector<std::string> other{"zeta"};
    bad.vocab = text::Vocabulary::build(other, 1);
    CHECK_THROWS_AS(weak_label_gender(bad, items), IncompatibilityError);
}
