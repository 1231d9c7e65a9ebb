// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "gem/corpus.hpp"
#include "gem/error.hpp"
#include "gem/eval.hpp"
#include "gem/knowledge.hpp"
#include "gem/metrics.hpp"
#include "gem/model.hpp"
#include "gem/platform.hpp"
#include "gem/rng.hpp"
#include "gem/stats.hpp"
#include "gem/train.hpp"
#include "oracles.hpp"

using namespace gem;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 60;
constexpr double kRowSumTol = 1e-12;
constexpr double kWorkedTol = 1e-6;
constexpr double kPrintedTol = 5e-5;  // published values carry four decimals
constexpr std::size_t kSpanCases = 500;
constexpr std::size_t kIdempotenceTexts = 1000;
constexpr double kOverfitAcc = 0.99;
constexpr std::size_t kOverfitEpochs = 300;
constexpr double kOverfitSeconds = 120;
constexpr double kAblationMinGap = 0.02;  // two macro-F1 points
constexpr double kAblationSeconds = 600;
constexpr double kMetricTol = 1e-12;
constexpr std::size_t kMetricCases = 1000;
constexpr double kWilcoxonTol = 1e-12;
constexpr std::size_t kWilcoxonSamples = 100;
constexpr double kWeakF1 = 0.85;
constexpr double kWeakSeconds = 180;
constexpr double kQuickstartSeconds = 900;

const std::string kLex = std::string(GEM_SOURCE_DIR) + "/data/lexicons/";

double since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Lex {
    knowledge::Lexicon cvd = knowledge::load_lexicon(kLex + "cvd.tsv", knowledge::Category::cvd);
    knowledge::Lexicon symptom = knowledge::load_lexicon(kLex + "symptom.tsv", knowledge::Category::symptom);
    knowledge::Lexicon gender = knowledge::load_lexicon(kLex + "gender.tsv", knowledge::Category::gender);
    train::Lexicons views{&symptom, &gender};
    corpus::GeneratorLexicons gen{cvd, symptom, gender};
};

const Lex& lex() {
    static const Lex l;
    return l;
}

corpus::GeneratorSpec short_spec(std::size_t n, std::uint64_t seed) {
    corpus::GeneratorSpec s;
    s.n_items = n;
    s.seed = seed;
    s.min_filler_sentences = 1;
    s.max_filler_sentences = 2;
    return s;
}

model::ModelConfig small_model(std::size_t d, std::size_t vocab) {
    model::ModelConfig m;
    m.n_layers = 1;
    m.d = d;
    m.n_heads = 2;
    m.d_ffn = 2 * d;
    m.max_len = 64;
    m.dropout_p = 0.1;
    m.vocab_size = vocab;
    return m;
}

// 1 -------------------------------------------------------------------------

Outcome grad_check() {
    const auto t0 = clk::now();
    model::ModelConfig c;
    c.n_layers = 1;
    c.d = 8;
    c.n_heads = 2;
    c.d_ffn = 16;
    c.vocab_size = 30;
    c.max_len = 6;
    c.dropout_p = 0.0;
    const model::GemModel m(c, 3);

    Rng rng(8);
    std::vector<text::TokenSequence> s, g;
    std::vector<int> sl, gl;
    for (std::size_t b = 0; b < 3; ++b) {
        for (auto* out : {&s, &g}) {
            text::TokenSequence seq;
            seq.ids.push_back(text::kCls);
            const auto n = 1 + rng.below(4);
            for (std::size_t i = 0; i < n; ++i) seq.ids.push_back(static_cast<int>(14 + rng.below(16)));
            seq.ids.push_back(text::kSep);
            out->push_back(seq);
        }
        sl.push_back(static_cast<int>(rng.below(4)));
        gl.push_back(static_cast<int>(rng.below(2)));
    }
    auto batch = text::make_paired_batch(s, g);
    batch.symptom.symptom_labels = sl;
    batch.symptom.gender_labels = gl;

    auto params = m.parameters();
    const auto report = nn::finite_diff_check(
        [&] {
            const auto p = m.predict(batch, {});
            return nn::add(nn::cross_entropy(p.symptom_logits(), sl), nn::cross_entropy(p.gender_logits(), gl));
        },
        params);
    const double err = report.max_rel_error();
    const double secs = since(t0);
    return {err <= kGradTol && secs < kGradSeconds,
            fmt::format("max rel error {:.2e} (<= {:.0e}), {:.1f}s", err, kGradTol, secs)};
}

// 2 -------------------------------------------------------------------------

Outcome fusion() {
    bool ok = true;
    std::string why;

    Rng rng(5);
    const std::size_t B = 3, Tg = 4, Ts = 5, d = 6;
    std::vector<double> gv(B * Tg * d), sv(B * Ts * d);
    for (auto& x : gv) x = rng.normal();
    for (auto& x : sv) x = rng.normal();
    const auto e_g = nn::Tensor::from({B, Tg, d}, gv);
    const auto e_s = nn::Tensor::from({B, Ts, d}, sv);
    const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    const auto f = model::fuse(e_s, mask, e_g, model::FusionValueSource::symptom);
    double worst_row = 0, pad_mass = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Tg; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < Ts; ++j) {
                const double w = f.attn_weights.at((b * Tg + i) * Ts + j);
                if (!mask[b * Ts + j]) pad_mass += std::abs(w);
                sum += w;
            }
            worst_row = std::max(worst_row, std::abs(sum - 1.0));
        }
    if (worst_row > kRowSumTol || pad_mass != 0.0) ok = false, why += " rows/pad";
    bool residual = true;
    for (std::size_t k = 0; k < e_g.numel(); ++k) residual &= f.h_g.at(k) == e_g.at(k) + f.a.at(k);
    if (!residual) ok = false, why += " residual";

    // d = 2 worked example against its closed form and the printed values.
    const auto wg = nn::Tensor::from({1, 1, 2}, {1.0, 0.0});
    const auto ws = nn::Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    const std::vector<std::uint8_t> full{1, 1};
    const auto w = model::fuse(ws, full, wg, model::FusionValueSource::symptom);
    const double s0 = 1.0 / std::sqrt(2.0), s1 = 0.0;
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), w1 = 1.0 - w0;
    const double got[6] = {w.attn_weights.at(0), w.attn_weights.at(1), w.a.at(0), w.a.at(1), w.h_g.at(0), w.h_g.at(1)};
    const double closed[6] = {w0, w1, w0, w1, 1.0 + w0, w1};
    const double printed[6] = {0.6698, 0.3302, 0.6698, 0.3302, 1.6698, 0.3302};
    double worst_closed = 0, worst_printed = 0;
    for (int k = 0; k < 6; ++k) {
        worst_closed = std::max(worst_closed, std::abs(got[k] - closed[k]));
        worst_printed = std::max(worst_printed, std::abs(got[k] - printed[k]));
    }
    // Scores implied by the weights: log(w0 / w1) equals s0 - s1.
    const double implied = std::log(got[0] / got[1]);
    const bool scores_ok = std::abs(implied - (s0 - s1)) <= kWorkedTol && std::abs(s0 - 0.7071) <= kPrintedTol;
    if (worst_closed > kWorkedTol || worst_printed > kPrintedTol || !scores_ok) ok = false, why += " worked example";
    return {ok, fmt::format("row err {:.1e}, pad mass {}, h_g == e_g + a {}, worked example closed-form err {:.1e}, "
                            "printed err {:.1e}{}",
                            worst_row, pad_mass, residual ? "yes" : "no", worst_closed, worst_printed, why)};
}

// 3 -------------------------------------------------------------------------

std::string random_word(Rng& rng) {
    static const char* letters = "abAB";
    std::string w;
    const auto n = 1 + rng.below(3);
    for (std::size_t i = 0; i < n; ++i) w += letters[rng.below(4)];
    return w;
}

Outcome masking() {
    const auto& L = lex();
    bool ok = knowledge::mask_gender("a bachelorette", L.gender) == "a <woman>" &&
              knowledge::mask_gender("a bachelor", L.gender) == "a <man>";
    std::size_t tag_misses = 0;
    for (const auto& e : L.symptom.entries())
        tag_misses += knowledge::mask_symptoms("x " + e.surface + " y", L.symptom) != "x " + e.tag + " y";
    ok &= tag_misses == 0;

    Rng rng(2025);
    const std::vector<std::string> tags{"<depression>", "<anxiety>", "<bipolar>", "<ptsd>"};
    const char* seps[] = {" ", " ", " ", ". ", "-", ","};
    std::size_t disagreements = 0;
    for (std::size_t trial = 0; trial < kSpanCases; ++trial) {
        std::vector<knowledge::LexiconEntry> entries;
        std::set<std::string> seen;
        const auto n_entries = 1 + rng.below(6);
        while (entries.size() < n_entries) {
            std::string s = oracle::low(random_word(rng));
            const auto extra = rng.below(3);
            for (std::size_t k = 0; k < extra; ++k) s += " " + oracle::low(random_word(rng));
            if (seen.insert(s).second) entries.push_back({s, tags[rng.below(4)], knowledge::Category::symptom, 0});
        }
        std::string text;
        const auto n_words = rng.below(15);
        for (std::size_t k = 0; k < n_words; ++k) text += random_word(rng) + seps[rng.below(6)];
        const auto lx = knowledge::Lexicon::from_entries(entries, knowledge::Category::symptom);
        disagreements += lx.find_matches(text) != oracle::spans(text, entries);
    }
    ok &= disagreements == 0;

    std::vector<std::string> pool;
    for (const auto& e : L.symptom.entries()) pool.push_back(e.surface);
    for (const auto& e : L.gender.entries()) pool.push_back(e.surface);
    for (const char* w : {"the", "I", "felt", "29F", "M40", "today", "<woman>", "Panic", "!"}) pool.push_back(w);
    std::size_t unstable = 0;
    for (std::size_t trial = 0; trial < kIdempotenceTexts; ++trial) {
        std::string text;
        const auto n = 1 + rng.below(12);
        for (std::size_t k = 0; k < n; ++k) text += pool[rng.below(pool.size())] + (rng.bernoulli(0.2) ? ", " : " ");
        const auto sv = knowledge::mask_symptoms(text, L.symptom);
        const auto gv = knowledge::mask_gender(text, L.gender);
        unstable += knowledge::mask_symptoms(sv, L.symptom) != sv || knowledge::mask_gender(gv, L.gender) != gv;
    }
    ok &= unstable == 0;
    return {ok, fmt::format("bachelor(ette) ok, {} symptom tag misses, {} / {} span disagreements, "
                            "{} / {} non-idempotent texts",
                            tag_misses, disagreements, kSpanCases, unstable, kIdempotenceTexts)};
}

// 4 -------------------------------------------------------------------------

Outcome quality_grid() {
    std::size_t wrong = 0;
    for (std::uint64_t up : {9, 10, 11})
        for (std::size_t tok : {49, 50, 51}) {
            corpus::RawItem r;
            r.upvotes = up;
            for (std::size_t k = 0; k < tok; ++k) r.text += k ? " w" : "w";
            const bool want = up > 10 && tok >= 50;
            wrong += corpus::passes_quality(r, {}) != want;
            const auto kept = corpus::quality_filter(std::vector<corpus::RawItem>{r});
            wrong += kept.empty() == want;
        }
    return {wrong == 0, fmt::format("{} wrong decisions over the 3x3 grid", wrong)};
}

// 5 -------------------------------------------------------------------------

Outcome overfit() {
    const auto t0 = clk::now();
    const auto& L = lex();
    auto spec = short_spec(64, 3);
    spec.interaction_mode = true;
    const auto items = corpus::generate_synthetic_corpus(spec, L.gen);
    const auto vocab = train::build_vocabulary(items, L.views, train::ViewMode::masked, 1);
    const auto set = train::encode_items(items, L.views, train::ViewMode::masked, vocab, 64);
    model::ModelConfig mc;  // desk model
    mc.vocab_size = vocab.size();
    auto fc = train::finetune_preset("desk");
    fc.epochs = kOverfitEpochs;
    train::TrainState st(model::GemModel(mc, 1));
    std::size_t reached = 0;
    double sa = 0, ga = 0;
    train::FinetuneOptions opt;
    opt.on_epoch = [&](const train::EpochRecord& r) {
        const auto m = train::evaluate_set(st.model, set, fc);
        sa = m.symptom->accuracy;
        ga = m.gender->accuracy;
        if (sa >= kOverfitAcc && ga >= kOverfitAcc) {
            reached = r.epoch;
            return false;
        }
        return true;
    };
    train::mtl_finetune(st, set, {}, fc, opt);
    const double secs = since(t0);
    return {reached > 0 && secs < kOverfitSeconds,
            fmt::format("train acc symptom {:.3f} gender {:.3f} at epoch {} (budget {}), {:.1f}s", sa, ga,
                        reached ? reached : kOverfitEpochs, kOverfitEpochs, secs)};
}

// 6, 7 ----------------------------------------------------------------------

const eval::AblationReport& ablation(double* seconds) {
    static double secs = 0;
    static const eval::AblationReport report = [] {
        const auto t0 = clk::now();
        const auto& L = lex();
        auto spec = short_spec(2700, 101);
        spec.interaction_mode = true;
        const auto items = corpus::generate_synthetic_corpus(spec, L.gen);
        const auto split = corpus::split(items, {2000.0 / 2700, 200.0 / 2700, 500.0 / 2700}, 1);
        eval::AblationSettings s;
        s.model = small_model(32, 0);
        s.finetune = train::finetune_preset("desk");
        s.finetune.epochs = 5;
        s.finetune.lr = 1e-3;
        s.pretrain = train::pretrain_preset("desk");
        s.pretrain.epochs = 2;
        s.seeds = {1, 2, 3, 4, 5};
        auto r = eval::run_ablation(s, split, L.views);
        secs = since(t0);
        std::cerr << eval::format_ablation(r, eval::Format::table);
        return r;
    }();
    *seconds = secs;
    return report;
}

Outcome ablation_gaps() {
    double secs = 0;
    const auto& r = ablation(&secs);
    const double full = r.row(eval::AblationArm::full).symptom.f1;
    const double no_a = r.row(eval::AblationArm::minus_attention).symptom.f1;
    const double no_em = r.row(eval::AblationArm::minus_entity_masking).symptom.f1;
    std::size_t failures = 0;
    for (const auto& row : r.rows) failures += row.failures;
    const bool ok = failures == 0 && full >= no_a && full >= no_em && full - no_em >= kAblationMinGap &&
                    secs < kAblationSeconds;
    return {ok, fmt::format("median SI macro-F1 full {:.2f}, -A {:.2f}, -EM {:.2f} (gap {:.2f}, need {:.0f}), "
                            "{} failed runs, {:.0f}s",
                            100 * full, 100 * no_a, 100 * no_em, 100 * (full - no_em), 100 * kAblationMinGap,
                            failures, secs)};
}

Outcome tapt_loss() {
    double secs = 0;
    const auto& r = ablation(&secs);
    const double with = r.row(eval::AblationArm::full).median_first_epoch_dev_loss;
    const double without = r.row(eval::AblationArm::minus_task_adaptation).median_first_epoch_dev_loss;
    return {with < without,
            fmt::format("median first-epoch dev loss with TAPT {:.4f}, random init {:.4f}", with, without)};
}

// 8 -------------------------------------------------------------------------

Outcome metrics() {
    std::size_t bad = 0;
    const std::vector<std::string> k3{"a", "b", "c"};
    auto near = [](double a, double b) { return std::abs(a - b) <= kMetricTol; };
    {
        const std::vector<int> gold{0, 0, 1, 1, 2, 2}, pred{0, 1, 1, 1, 0, 2};
        const auto m = eval::compute_metrics(pred, gold, k3);
        bad += !near(m.macro_f1, (0.5 + 0.8 + 2.0 / 3.0) / 3.0) || !near(m.accuracy, 4.0 / 6.0) ||
               !near(m.macro_precision, (0.5 + 2.0 / 3.0 + 1.0) / 3.0);
    }
    {
        const std::vector<int> y{0, 1, 2, 2, 1};
        const auto m = eval::compute_metrics(y, y, k3);
        bad += !near(m.macro_f1, 1.0) || !near(m.weighted_f1, 1.0) || !near(m.accuracy, 1.0);
    }
    {
        const std::vector<int> gold{0, 1, 2}, pred{0, 0, 0};
        const auto m = eval::compute_metrics(pred, gold, k3);
        bad += !near(m.macro_f1, 0.5 / 3.0) || m.classes[1].f1 != 0.0 || !m.classes[1].precision_undefined;
    }
    const std::size_t crafted_bad = bad;

    Rng rng(131);
    std::size_t random_bad = 0, micro_bad = 0;
    for (std::size_t trial = 0; trial < kMetricCases; ++trial) {
        const int C = 2 + static_cast<int>(rng.below(4));
        const std::size_t n = 1 + rng.below(60);
        std::vector<int> gold(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            gold[i] = static_cast<int>(rng.below(C));
            pred[i] = rng.bernoulli(0.5) ? gold[i] : static_cast<int>(rng.below(C));
        }
        std::vector<std::string> names;
        for (int c = 0; c < C; ++c) names.push_back(std::to_string(c));
        const auto m = eval::compute_metrics(pred, gold, names);
        const auto o = oracle::metrics(pred, gold, C);
        bool same = near(m.macro_precision, o.macro_p) && near(m.macro_recall, o.macro_r) &&
                    near(m.macro_f1, o.macro_f) && near(m.weighted_f1, o.weighted_f) && near(m.micro_f1, o.micro_f) &&
                    near(m.accuracy, o.accuracy);
        for (int c = 0; c < C; ++c)
            same &= near(m.classes[c].precision, o.p[c]) && near(m.classes[c].recall, o.r[c]) &&
                    near(m.classes[c].f1, o.f[c]);
        random_bad += !same;
        micro_bad += !near(m.micro_recall, m.accuracy);
    }
    return {crafted_bad + random_bad + micro_bad == 0,
            fmt::format("{} / 3 crafted cases off, {} / {} random cases off the oracle, {} micro-recall != accuracy",
                        crafted_bad, random_bad, kMetricCases, micro_bad)};
}

// 9 -------------------------------------------------------------------------

Outcome wilcoxon() {
    using eval::Alternative;
    Rng rng(141);
    double worst = 0;
    for (std::size_t trial = 0; trial < kWilcoxonSamples; ++trial) {
        const std::size_t n = 1 + rng.below(12);
        std::vector<double> x(n), y(n), d(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng.below(7));
            y[i] = static_cast<double>(rng.below(7));
            d[i] = x[i] - y[i];
        }
        for (Alternative alt : {Alternative::two_sided, Alternative::less, Alternative::greater})
            worst = std::max(worst, std::abs(eval::wilcoxon_signed_rank(x, y, alt).p_value - oracle::enumerate_p(d, alt)));
    }
    const std::vector<double> a{1, 2, 3}, z{0, 0, 0};
    const double same = eval::wilcoxon_signed_rank(a, a).p_value;
    const double g = eval::wilcoxon_signed_rank(a, z, Alternative::greater).p_value;
    const bool ok = worst <= kWilcoxonTol && same == 1.0 && std::abs(g - 0.125) <= kWilcoxonTol;
    return {ok, fmt::format("max |p - enumeration| {:.1e} over {} samples, p(x=y) {}, p([1,2,3] > 0) {}", worst,
                            kWilcoxonSamples, same, g)};
}

// 10 ------------------------------------------------------------------------

Outcome weak_labeler() {
    const auto t0 = clk::now();
    const auto& L = lex();
    auto spec = short_spec(2500, 11);
    spec.gender_channels = true;
    spec.gender_label_noise = 0.07;
    const auto items = corpus::generate_synthetic_corpus(spec, L.gen);
    const std::vector<corpus::LabeledItem> tr(items.begin(), items.begin() + 2000), te(items.begin() + 2000, items.end());
    const auto vocab = train::build_vocabulary(tr, L.views, train::ViewMode::masked);
    const auto trs = train::encode_items(tr, L.views, train::ViewMode::masked, vocab, 64);
    auto mc = small_model(32, vocab.size());
    mc.variant = model::Variant::stl_gender;
    auto fc = train::finetune_preset("desk");
    fc.epochs = 3;
    train::TrainState st(model::GemModel(mc, 1));
    train::mtl_finetune(st, trs, {}, fc);

    const train::ModelGenderClassifier labeler(st.model, vocab, L.views);
    std::vector<corpus::LabeledItem> unlabeled = te;
    for (auto& li : unlabeled) {
        li.gender.reset();
        li.provenance.reset();
    }
    const auto labeled = corpus::weak_label_gender(labeler, unlabeled);
    std::vector<int> pred, gold;
    for (std::size_t i = 0; i < te.size(); ++i) {
        pred.push_back(static_cast<int>(*labeled[i].gender));
        gold.push_back(static_cast<int>(*te[i].gender));
    }
    const auto m = eval::compute_metrics(pred, gold, {"man", "woman"});
    const double secs = since(t0);
    return {m.macro_f1 >= kWeakF1 && secs < kWeakSeconds,
            fmt::format("held-out gender macro-F1 {:.3f} (>= {}) on {} items, {:.1f}s", m.macro_f1, kWeakF1, te.size(),
                        secs)};
}

// 11 ------------------------------------------------------------------------

Outcome determinism() {
    const auto& L = lex();
    const auto items = corpus::generate_synthetic_corpus(short_spec(120, 21), L.gen);
    const auto vocab = train::build_vocabulary(items, L.views, train::ViewMode::masked);
    const std::span<const corpus::LabeledItem> all(items);
    const auto tr = train::encode_items(all.subspan(0, 100), L.views, train::ViewMode::masked, vocab, 64);
    const auto dv = train::encode_items(all.subspan(100), L.views, train::ViewMode::masked, vocab, 64);
    const auto mc = small_model(16, vocab.size());
    auto cfg = [](std::size_t epochs) {
        auto c = train::finetune_preset("desk");
        c.epochs = epochs;
        c.batch_size = 16;
        c.seed = 9;
        return c;
    };
    auto bytes = [&](const train::TrainState& s) {
        return train::serialize_checkpoint(train::make_checkpoint(s, cfg(4), vocab.hash()));
    };

    train::TrainState a(model::GemModel(mc, 2)), b(model::GemModel(mc, 2));
    train::mtl_finetune(a, tr, dv, cfg(4));
    train::mtl_finetune(b, tr, dv, cfg(4));
    const bool same_seed = bytes(a) == bytes(b);

    train::TrainState c(model::GemModel(mc, 2));
    train::mtl_finetune(c, tr, dv, cfg(2));
    const auto path = fs::temp_directory_path() / "gem_acceptance_resume.ckpt";
    train::save_checkpoint(path, c, cfg(4), vocab.hash());
    const auto loaded = train::load_checkpoint(path);
    fs::remove(path);
    auto resumed = train::restore_state(loaded, vocab.hash());
    const bool load_exact = resumed.model.state() == c.model.state() &&
                            train::serialize_checkpoint(loaded) == bytes(c);
    train::mtl_finetune(resumed, tr, dv, cfg(4));
    const bool resume_exact = bytes(resumed) == bytes(a);
    return {same_seed && resume_exact && load_exact,
            fmt::format("same seed identical {}, 4 == 2 + resume 2 {}, save/load exact {}", same_seed ? "yes" : "no",
                        resume_exact ? "yes" : "no", load_exact ? "yes" : "no")};
}

// 12 ------------------------------------------------------------------------

Outcome quickstart() {
    const auto t0 = clk::now();
    const auto work = fs::temp_directory_path() / "gem_acceptance_quickstart";
    const auto log = fs::temp_directory_path() / "gem_acceptance_quickstart.log";
    const std::string cmd = fmt::format("GEM='{}' bash '{}/scripts/quickstart.sh' '{}' > '{}' 2>&1", GEM_CLI_PATH,
                                        GEM_SOURCE_DIR, work.string(), log.string());
    const int rc = std::system(cmd.c_str());
    const double secs = since(t0);
    const bool ok = rc == 0 && secs < kQuickstartSeconds;
    if (ok) fs::remove_all(work);
    return {ok, fmt::format("exit status {}, {:.0f}s (log {})", rc, secs, log.string())};
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, grad_check}, {2, fusion},   {3, masking},       {4, quality_grid}, {5, overfit},      {6, ablation_gaps},
        {7, tapt_loss},  {8, metrics},  {9, wilcoxon},      {10, weak_labeler}, {11, determinism}, {12, quickstart}};
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& [n, fn] : criteria) {
        if (!only.empty() && !only.count(n)) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << fmt::format("criterion {}: {} {}", n, o.pass ? "PASS" : "FAIL", o.detail) << std::endl;
    }
    return failed ? 1 : 0;
}
