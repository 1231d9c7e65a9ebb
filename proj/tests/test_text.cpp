#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gem/error.hpp"
#include "gem/text.hpp"

using namespace gem;
using namespace gem::text;

TEST_CASE("tokenizer keeps concept tokens whole and splits punctuation") {
    const std::vector<std::string> want{"i", "'", "m", "a", "<woman>", ",", "29", "!"};
    CHECK(tokenize("I'm a <woman>, 29!") == want);
    CHECK(tokenize("  ") == std::vector<std::string>{});
    CHECK(tokenize("<notaconcept>") == std::vector<std::string>{"<", "notaconcept", ">"});
}

TEST_CASE("vocabulary layout: specials, concepts, then content by frequency") {
    const std::vector<std::string> texts{"b a a", "c b a", "d"};
    const auto v = Vocabulary::build(texts, 2);
    CHECK(v.token(kPad) == "[PAD]");
    CHECK(v.token(kMask) == "[MASK]");
    CHECK(Vocabulary::first_content_id() == 14);
    CHECK(v.token(Vocabulary::first_concept_id()) == "<depression>");
    CHECK(v.token(14) == "a");
    CHECK(v.token(15) == "b");
    CHECK(v.size() == 16);
    CHECK(v.id("d") == kUnk);
    CHECK(v.is_concept(v.id("<woman>")));
}

TEST_CASE("vocabulary save/load keeps ids and hash") {
    const std::vector<std::string> texts{"x y z x y x"};
    const auto v = Vocabulary::build(texts, 1);
    const auto p = std::filesystem::temp_directory_path() / "gem_test_vocab.txt";
    v.save(p);
    const auto w = Vocabulary::load(p);
    CHECK(w == v);
    CHECK(w.hash() == v.hash());
    const std::vector<std::string> other{"x y q"};
    CHECK(Vocabulary::build(other, 1).hash() != v.hash());
    {
        std::ofstream out(p);
        out << "[UNK]\n[PAD]\n";
    }
    CHECK_THROWS_AS(Vocabulary::load(p), gem::Error);
    std::filesystem::remove(p);
}

TEST_CASE("encode wraps with CLS/SEP and truncates the tail") {
    const std::vector<std::string> texts{"a b c d e"};
    const auto v = Vocabulary::build(texts, 1);
    const auto s = encode("a b c d e", v, 5);
    REQUIRE(s.ids.size() == 5);
    CHECK(s.ids.front() == kCls);
    CHECK(s.ids.back() == kSep);
    CHECK(decode(s, v) == "a b c");
    CHECK(encode("a b c d e", v, 64).ids.size() == 7);
    CHECK_THROWS_AS(encode("a", v, 2), ConfigError);
}

TEST_CASE("batching pads on the right and masks padding") {
    std::vector<TokenSequence> seqs{{{2, 20, 3}}, {{2, 3}}};
    const auto b = make_batch(seqs);
    CHECK(b.batch_size == 2);
    CHECK(b.seq_len == 3);
    CHECK(b.ids == std::vector<int>{2, 20, 3, 2, 3, kPad});
    CHECK(b.pad_mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0});
    CHECK(unbatch(b) == seqs);
    const auto p = make_paired_batch(seqs, std::vector<TokenSequence>{{{2, 3}}, {{2, 21, 22, 3}}});
    CHECK(p.symptom.seq_len == 4);
    CHECK(p.gender.seq_len == 4);
}
