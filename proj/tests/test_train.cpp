#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gem/corpus.hpp"
#include "gem/error.hpp"
#include "gem/knowledge.hpp"
#include "gem/train.hpp"

using namespace gem;
using namespace gem::train;

namespace {

const std::string kData = std::string(GEM_SOURCE_DIR) + "/data/lexicons/";

struct Fixture {
    knowledge::Lexicon cvd = knowledge::load_lexicon(kData + "cvd.tsv", knowledge::Category::cvd);
    knowledge::Lexicon symptom = knowledge::load_lexicon(kData + "symptom.tsv", knowledge::Category::symptom);
    knowledge::Lexicon gender = knowledge::load_lexicon(kData + "gender.tsv", knowledge::Category::gender);
    Lexicons lex{&symptom, &gender};
    std::vector<corpus::LabeledItem> items;
    text::Vocabulary vocab;
    EncodedSet train, dev;
    model::ModelConfig mc;

    Fixture() {
        corpus::GeneratorSpec spec;
        spec.n_items = 96;
        spec.min_filler_sentences = 1;
        spec.max_filler_sentences = 2;
        items = corpus::generate_synthetic_corpus(spec, {cvd, symptom, gender});
        vocab = build_vocabulary(items, lex, ViewMode::masked, 2);
        const std::span<const corpus::LabeledItem> all(items);
        train = encode_items(all.subspan(0, 80), lex, ViewMode::masked, vocab, 32);
        dev = encode_items(all.subspan(80), lex, ViewMode::masked, vocab, 32);
        mc.n_layers = 1;
        mc.d = 16;
        mc.n_heads = 2;
        mc.d_ffn = 32;
        mc.max_len = 32;
        mc.dropout_p = 0.1;
        mc.vocab_size = vocab.size();
    }
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

TrainConfig small_cfg(std::size_t epochs) {
    TrainConfig c = finetune_preset("desk");
    c.epochs = epochs;
    c.batch_size = 16;
    c.seed = 5;
    return c;
}

std::string bytes_of(const TrainState& s, const TrainConfig& c) {
    return serialize_checkpoint(make_checkpoint(s, c, fx().vocab.hash()));
}

}  // namespace

TEST_CASE("Adam follows the bias-corrected recurrence") {
    auto x = nn::Tensor::from({2}, {1.0, -2.0}, true);
    std::vector<nn::Parameter> params{{"x", x}};
    AdamState st;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double w[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
    const double grads[3][2] = {{0.5, -1.0}, {0.25, 2.0}, {-3.0, 0.0}};
    for (int t = 1; t <= 3; ++t) {
        x.zero_grad();
        const auto c = nn::Tensor::from({2}, {grads[t - 1][0], grads[t - 1][1]});
        nn::backward(nn::sum(nn::mul(x, c)));
        adam_step(params, st, lr, b1, b2, eps);
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            m[i] = b1 * m[i] + (1 - b1) * g;
            v[i] = b2 * v[i] + (1 - b2) * g * g;
            w[i] -= lr * (m[i] / (1 - std::pow(b1, t))) / (std::sqrt(v[i] / (1 - std::pow(b2, t))) + eps);
            CHECK(x.at(i) == doctest::Approx(w[i]).epsilon(1e-14));
        }
    }
    CHECK(st.t == 3);
}

TEST_CASE("Adam rejects a non-finite gradient before touching anything") {
    auto x = nn::Tensor::from({2}, {1.0, 2.0}, true);
    auto y = nn::Tensor::from({1}, {3.0}, true);
    std::vector<nn::Parameter> params{{"x", x}, {"y", y}};
    const auto c = nn::Tensor::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    nn::backward(nn::add(nn::sum(nn::mul(x, c)), nn::sum(y)));
    AdamState st;
    CHECK_THROWS_WITH_AS(adam_step(params, st, 0.1, 0.9, 0.999, 1e-8), doctest::Contains("x"), NumericError);
    CHECK(x.at(0) == 1.0);
    CHECK(y.at(0) == 3.0);
    CHECK(st.t == 0);
}

TEST_CASE("MLM corruption rates stay within three standard deviations") {
    std::vector<text::TokenSequence> seqs;
    for (int b = 0; b < 50; ++b) {
        text::TokenSequence s;
        s.ids.push_back(text::kCls);
        for (int i = 0; i < 60; ++i) s.ids.push_back(14 + (b * 7 + i) % 80);
        s.ids.push_back(6);  // concept token, never selected
        s.ids.push_back(text::kSep);
        seqs.push_back(s);
    }
    seqs.push_back({{text::kCls, text::kSep}});
    const auto batch = text::make_batch(seqs);
    const auto c = mlm_corrupt(batch, 0.15, {0.8, 0.1, 0.1}, 100, 99);
    const double n = 50 * 60;
    const double k = static_cast<double>(c.positions.size());
    CHECK(std::abs(k - 0.15 * n) <= 3 * std::sqrt(n * 0.15 * 0.85));
    const double pm = 0.8, pr = 0.1;
    CHECK(std::abs(c.category_counts[0] - pm * k) <= 3 * std::sqrt(k * pm * (1 - pm)));
    CHECK(std::abs(c.category_counts[1] - pr * k) <= 3 * std::sqrt(k * pr * (1 - pr)));
    CHECK(c.category_counts[0] + c.category_counts[1] + c.category_counts[2] == c.positions.size());
    for (std::size_t j = 0; j < c.positions.size(); ++j) {
        const auto p = c.positions[j];
        CHECK(batch.pad_mask[p] == 1);
        CHECK(c.targets[j] >= 14);
        CHECK(c.targets[j] == batch.ids[p]);
    }
    const auto again = mlm_corrupt(batch, 0.15, {0.8, 0.1, 0.1}, 100, 99);
    CHECK(again.batch.ids == c.batch.ids);
    CHECK(mlm_corrupt(batch, 0.0, {0.8, 0.1, 0.1}, 100, 1).positions.empty());
}

TEST_CASE("pretraining lowers the masked-token loss") {
    model::GemModel m(fx().mc, 3);
    auto cfg = pretrain_preset("desk");
    cfg.epochs = 4;
    cfg.batch_size = 16;
    const auto res = pretrain_model(m, fx().train, cfg);
    REQUIRE(res.count("s_encoder"));
    REQUIRE(res.count("g_encoder"));
    const auto& l = res.at("s_encoder").epoch_losses;
    CHECK(l.back() < l.front());
}

TEST_CASE("same seed gives bitwise-identical checkpoints") {
    const auto cfg = small_cfg(2);
    TrainState a(model::GemModel(fx().mc, 1)), b(model::GemModel(fx().mc, 1));
    mtl_finetune(a, fx().train, fx().dev, cfg);
    mtl_finetune(b, fx().train, fx().dev, cfg);
    CHECK(bytes_of(a, cfg) == bytes_of(b, cfg));
    auto other = cfg;
    other.seed = 6;
    TrainState c(model::GemModel(fx().mc, 1));
    mtl_finetune(c, fx().train, fx().dev, other);
    CHECK(bytes_of(c, cfg) != bytes_of(a, cfg));
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run") {
    const auto full = small_cfg(4);
    TrainState a(model::GemModel(fx().mc, 2));
    const auto trace_a = mtl_finetune(a, fx().train, fx().dev, full);

    TrainState b(model::GemModel(fx().mc, 2));
    mtl_finetune(b, fx().train, fx().dev, small_cfg(2));
    const auto path = std::filesystem::temp_directory_path() / "gem_test_resume.ckpt";
    save_checkpoint(path, b, full, fx().vocab.hash());
    auto c = restore_state(load_checkpoint(path), fx().vocab.hash());
    const auto trace_c = mtl_finetune(c, fx().train, fx().dev, full);
    REQUIRE(trace_c.size() == 2);
    CHECK(trace_c.back().train_loss == trace_a.back().train_loss);
    CHECK(bytes_of(a, full) == bytes_of(c, full));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint save and load are bit exact") {
    const auto cfg = small_cfg(1);
    TrainState s(model::GemModel(fx().mc, 3));
    mtl_finetune(s, fx().train, fx().dev, cfg);
    const auto ck = make_checkpoint(s, cfg, fx().vocab.hash());
    const auto bytes = serialize_checkpoint(ck);
    const auto back = parse_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.params == ck.params);
    CHECK(back.adam_m == ck.adam_m);
    CHECK(back.best_score == ck.best_score);
    const auto restored = restore_state(back, fx().vocab.hash());
    CHECK(restored.model.state() == s.model.state());
    CHECK(restored.step == s.step);
}

TEST_CASE("a fresh state with no best score survives the round trip") {
    TrainState s(model::GemModel(fx().mc, 3));
    const auto back = parse_checkpoint(serialize_checkpoint(make_checkpoint(s, small_cfg(1), 7)));
    CHECK(std::isinf(back.best_score));
    CHECK(back.best_score < 0);
}

TEST_CASE("corrupted or mismatched checkpoints are rejected") {
    TrainState s(model::GemModel(fx().mc, 3));
    const auto bytes = serialize_checkpoint(make_checkpoint(s, small_cfg(1), fx().vocab.hash()));
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(parse_checkpoint(flipped), ParseError);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 10)), ParseError);
    CHECK_THROWS_AS(parse_checkpoint("GEM-CHECKPOINT v9\n"), ParseError);
    const auto ck = parse_checkpoint(bytes);
    CHECK_THROWS_AS(restore_state(ck, fx().vocab.hash() + 1), IncompatibilityError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), gem::Error);
}

TEST_CASE("training stops with the step number when the loss is not finite") {
    TrainState s(model::GemModel(fx().mc, 4));
    auto p = s.model.parameters();
    for (auto& param : p)
        if (param.name == "symptom_head.bias") param.tensor.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(mtl_finetune(s, fx().train, fx().dev, small_cfg(1)), doctest::Contains("step"),
                         NumericError);
}

TEST_CASE("metrics log holds one record per epoch and split") {
    std::ostringstream log;
    FinetuneOptions opt;
    opt.metrics_log = &log;
    std::size_t calls = 0;
    opt.on_epoch = [&](const EpochRecord&) { return ++calls < 2; };
    TrainState s(model::GemModel(fx().mc, 4));
    const auto trace = mtl_finetune(s, fx().train, fx().dev, small_cfg(5), opt);
    CHECK(trace.size() == 2);
    std::size_t lines = 0;
    for (char ch : log.str()) lines += ch == '\n';
    CHECK(lines == 4);
    CHECK(s.best_epoch >= 1);
    CHECK_FALSE(s.best_params.empty());
}

TEST_CASE("training config validation") {
    auto c = small_cfg(1);
    c.lr = -1;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = small_cfg(1);
    c.mlm_split = {0.5, 0.1, 0.1};
    CHECK_THROWS_AS(validate(c), ConfigError);
    CHECK(finetune_preset("paper").lr == 1e-5);
    CHECK_THROWS(finetune_preset("other"));
}
