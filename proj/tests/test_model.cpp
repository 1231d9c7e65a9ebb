#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gem/error.hpp"
#include "gem/model.hpp"
#include "gem/rng.hpp"

using namespace gem;
using namespace gem::model;
using nn::Tensor;

namespace {

ModelConfig tiny(Variant v) {
    ModelConfig c;
    c.n_layers = 1;
    c.d = 8;
    c.n_heads = 2;
    c.d_ffn = 16;
    c.vocab_size = 30;
    c.max_len = 6;
    c.dropout_p = 0.0;
    c.variant = v;
    return c;
}

text::PairedBatch random_batch(Rng& rng, std::size_t B, std::size_t vocab, std::size_t T) {
    std::vector<text::TokenSequence> s, g;
    for (std::size_t b = 0; b < B; ++b) {
        for (auto* out : {&s, &g}) {
            text::TokenSequence seq;
            seq.ids.push_back(text::kCls);
            const auto n = 1 + rng.below(T - 2);
            for (std::size_t i = 0; i < n; ++i) seq.ids.push_back(static_cast<int>(5 + rng.below(vocab - 5)));
            seq.ids.push_back(text::kSep);
            out->push_back(seq);
        }
    }
    auto p = text::make_paired_batch(s, g);
    std::vector<int> sl, gl;
    for (std::size_t b = 0; b < B; ++b) {
        sl.push_back(static_cast<int>(rng.below(4)));
        gl.push_back(static_cast<int>(rng.below(2)));
    }
    p.symptom.symptom_labels = sl;
    p.symptom.gender_labels = gl;
    return p;
}

Tensor loss_of(const GemModel& m, const text::PairedBatch& b) {
    const auto pred = m.predict(b, {});
    Tensor loss;
    if (pred.has_symptom()) loss = nn::cross_entropy(pred.symptom_logits(), *b.symptom.symptom_labels);
    if (pred.has_gender()) {
        auto g = nn::cross_entropy(pred.gender_logits(), *b.symptom.gender_labels);
        loss = loss.defined() ? nn::add(loss, g) : g;
    }
    return loss;
}

}  // namespace

TEST_CASE("fusion worked example in two dimensions") {
    auto e_g = Tensor::from({1, 1, 2}, {1.0, 0.0});
    auto e_s = Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    std::vector<std::uint8_t> mask{1, 1};
    const auto f = fuse(e_s, mask, e_g, FusionValueSource::symptom);
    const double s = 1.0 / std::sqrt(2.0);
    const double w0 = std::exp(s) / (std::exp(s) + 1.0);
    CHECK(std::abs(f.attn_weights.at(0) - w0) < 1e-12);
    CHECK(std::abs(f.attn_weights.at(0) - 0.6698) < 1e-4);
    CHECK(std::abs(f.attn_weights.at(1) - 0.3302) < 1e-4);
    CHECK(std::abs(f.a.at(0) - w0) < 1e-12);
    CHECK(std::abs(f.a.at(1) - (1.0 - w0)) < 1e-12);
    CHECK(std::abs(f.h_g.at(0) - (1.0 + w0)) < 1e-12);
    CHECK(std::abs(f.h_g.at(1) - (1.0 - w0)) < 1e-12);
}

TEST_CASE("fusion rows sum to one, ignore pad keys, and h_g is exactly e_g + a") {
    Rng rng(5);
    const std::size_t B = 3, Tg = 4, Ts = 5, d = 6;
    std::vector<double> gv(B * Tg * d), sv(B * Ts * d);
    for (auto& x : gv) x = rng.normal();
    for (auto& x : sv) x = rng.normal();
    auto e_g = Tensor::from({B, Tg, d}, gv);
    auto e_s = Tensor::from({B, Ts, d}, sv);
    std::vector<std::uint8_t> mask{1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    const auto f = fuse(e_s, mask, e_g, FusionValueSource::symptom);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Tg; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < Ts; ++j) {
                const double w = f.attn_weights.at((b * Tg + i) * Ts + j);
                if (!mask[b * Ts + j]) CHECK(w == 0.0);
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    for (std::size_t k = 0; k < e_g.numel(); ++k) CHECK(f.h_g.at(k) == e_g.at(k) + f.a.at(k));
}

TEST_CASE("gender-valued fusion needs equal lengths") {
    auto e_g = Tensor::zeros({1, 2, 4});
    auto e_s = Tensor::zeros({1, 3, 4});
    std::vector<std::uint8_t> mask{1, 1, 1};
    CHECK_THROWS_AS(fuse(e_s, mask, e_g, FusionValueSource::gender), ShapeError);
}

TEST_CASE("full-model gradients match finite differences for every variant") {
    for (Variant v : {Variant::gem, Variant::concat_ablation, Variant::stl_symptom, Variant::stl_gender,
                      Variant::mtl_shared}) {
        CAPTURE(to_string(v));
        const GemModel m(tiny(v), 3);
        Rng rng(8);
        const auto batch = random_batch(rng, 3, 30, 6);
        auto params = m.parameters();
        const auto report = nn::finite_diff_check([&] { return loss_of(m, batch); }, params);
        CHECK(report.max_rel_error() <= 1e-5);
    }
}

TEST_CASE("gender-valued fusion gradients") {
    auto cfg = tiny(Variant::gem);
    cfg.fusion_value_source = FusionValueSource::gender;
    cfg.symptom_head_input = SymptomHeadInput::encoder;
    const GemModel m(cfg, 4);
    Rng rng(9);
    const auto batch = random_batch(rng, 2, 30, 6);
    auto params = m.parameters();
    CHECK(nn::finite_diff_check([&] { return loss_of(m, batch); }, params).max_rel_error() <= 1e-5);
}

TEST_CASE("extra padding does not change predictions") {
    auto cfg = tiny(Variant::gem);
    cfg.max_len = 12;
    const GemModel m(cfg, 5);
    Rng rng(10);
    const auto a = random_batch(rng, 4, 30, 6);
    text::PairedBatch b;
    b.symptom = text::make_batch(text::unbatch(a.symptom), 12);
    b.gender = text::make_batch(text::unbatch(a.gender), 12);
    nn::NoGradGuard ng;
    const auto pa = m.predict(a, {});
    const auto pb = m.predict(b, {});
    for (std::size_t k = 0; k < pa.symptom_logits().numel(); ++k)
        CHECK(pa.symptom_logits().at(k) == doctest::Approx(pb.symptom_logits().at(k)).epsilon(1e-12));
    for (std::size_t k = 0; k < pa.gender_logits().numel(); ++k)
        CHECK(pa.gender_logits().at(k) == doctest::Approx(pb.gender_logits().at(k)).epsilon(1e-12));
}

TEST_CASE("initialization is seeded and shared between the full and concat models") {
    const GemModel a(tiny(Variant::gem), 11), b(tiny(Variant::gem), 11), c(tiny(Variant::gem), 12);
    CHECK(a.state() == b.state());
    CHECK_FALSE(a.state() == c.state());
    const GemModel cat(tiny(Variant::concat_ablation), 11);
    const auto sa = a.state(), sc = cat.state();
    for (const auto& [name, values] : sa)
        if (name.find("_encoder.") != std::string::npos) CHECK(sc.at(name) == values);
    CHECK(sc.at("symptom_head.weight").size() == 2 * 8 * 4);
}

TEST_CASE("variant parameter sets") {
    auto names = [](const GemModel& m) {
        std::set<std::string> s;
        for (const auto& p : m.parameters()) CHECK(s.insert(p.name).second);
        return s;
    };
    const auto gem_names = names(GemModel(tiny(Variant::gem), 1));
    CHECK(gem_names.count("s_encoder.tok_emb"));
    CHECK(gem_names.count("g_encoder.layer0.attn.wq"));
    const auto stl = names(GemModel(tiny(Variant::stl_gender), 1));
    CHECK(stl.count("gender_head.weight"));
    CHECK_FALSE(stl.count("symptom_head.weight"));
    CHECK_FALSE(stl.count("s_encoder.tok_emb"));
    GemModel shared(tiny(Variant::mtl_shared), 1);
    CHECK(&shared.encoder(EncoderRole::symptom) == &shared.encoder(EncoderRole::gender));
    GemModel stl_s(tiny(Variant::stl_symptom), 1);
    CHECK_FALSE(stl_s.has_encoder(EncoderRole::gender));
    CHECK_THROWS(stl_s.encoder(EncoderRole::gender));
}

TEST_CASE("clone is deep and load_state restores values") {
    GemModel m(tiny(Variant::gem), 2);
    auto c = m.clone();
    CHECK(c.state() == m.state());
    auto p = c.parameters().front().tensor;
    p.mutable_values()[0] += 1.0;
    CHECK_FALSE(c.state() == m.state());
    c.load_state(m.state());
    CHECK(c.state() == m.state());
    auto partial = m.state();
    partial.erase(partial.begin());
    CHECK_THROWS(c.load_state(partial));
}

TEST_CASE("configuration and input validation") {
    auto cfg = tiny(Variant::gem);
    cfg.n_heads = 3;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = tiny(Variant::gem);
    cfg.dropout_p = 1.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    const GemModel m(tiny(Variant::gem), 1);
    std::vector<text::TokenSequence> longs{{{2, 5, 6, 7, 8, 9, 10, 3}}};
    CHECK_THROWS_AS(m.predict(text::make_paired_batch(longs, longs), {}), ShapeError);
    std::vector<text::TokenSequence> bad{{{2, 99, 3}}};
    CHECK_THROWS_AS(m.predict(text::make_paired_batch(bad, bad), {}), ShapeError);
    CHECK(parse_variant("concat_ablation") == Variant::concat_ablation);
    CHECK_THROWS(parse_variant("nope"));
}
