#include "gem/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "gem/error.hpp"
#include "gem/labels.hpp"

namespace gem::eval {
namespace {

using json = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> symptom_display_names() { return {kSymptomDisplay.begin(), kSymptomDisplay.end()}; }
std::vector<std::string> gender_names() { return {kGenderNames.begin(), kGenderNames.end()}; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json class_record(const ClassMetrics& m) {
    json j;
    j["class"] = m.name;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["support"] = m.support;
    j["precision_undefined"] = m.precision_undefined;
    j["recall_undefined"] = m.recall_undefined;
    return j;
}

std::string pct(double v) { return std::isfinite(v) ? fmt::format("{:6.2f}", 100.0 * v) : fmt::format("{:>6}", "nan"); }

void append_class_rows(std::string& out, const MetricsReport& r) {
    for (const auto& m : r.classes) {
        std::string flag;
        if (m.support == 0) flag = "  (undefined: no gold items)";
        else if (m.precision_undefined) flag = "  (precision undefined: never predicted)";
        out += fmt::format("{:<12} {} {} {} {:>8}{}\n", m.name, pct(m.precision), pct(m.recall), pct(m.f1),
                           m.support, flag);
    }
}

struct PreparedData {
    text::Vocabulary vocab;
    train::EncodedSet train, dev, test;
    std::uint64_t split_hash = 0;
};

PreparedData prepare(const corpus::CorpusSplit& split, const train::Lexicons& lexicons, train::ViewMode mode,
                     int min_freq, std::size_t max_len) {
    PreparedData d;
    d.vocab = train::build_vocabulary(split.train, lexicons, mode, min_freq);
    d.train = train::encode_items(split.train, lexicons, mode, d.vocab, max_len);
    d.dev = train::encode_items(split.dev, lexicons, mode, d.vocab, max_len);
    d.test = train::encode_items(split.test, lexicons, mode, d.vocab, max_len);
    d.split_hash = split_id_hash(split);
    return d;
}

MetricTriple median_triple(const std::vector<const MetricsReport*>& reports) {
    std::vector<double> p, r, f;
    for (const auto* m : reports) {
        p.push_back(m->macro_precision);
        r.push_back(m->macro_recall);
        f.push_back(m->macro_f1);
    }
    return {median(p), median(r), median(f)};
}

}  // namespace

Format parse_format(std::string_view s) {
    if (s == "table") return Format::table;
    if (s == "records") return Format::records;
    throw ConfigError("unknown format '" + std::string(s) + "' (expected table or records)");
}

double median(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("cosine_similarity: vectors differ in length");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<ClasswiseTable> classwise_report(const model::GemModel& model, const train::EncodedSet& test) {
    const auto pred = train::predict_set(model, test);
    std::vector<ClasswiseTable> out;
    for (const char* stream : {"all", "posts", "comments"}) {
        ClasswiseTable t;
        t.stream = stream;
        std::vector<int> sp, sg, gp, gg;
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto& e = test[i];
            if (t.stream == "posts" && e.kind != corpus::Kind::post) continue;
            if (t.stream == "comments" && e.kind != corpus::Kind::comment) continue;
            ++t.items;
            if (!pred.symptom.empty() && e.symptom) {
                sp.push_back(pred.symptom[i]);
                sg.push_back(*e.symptom);
            }
            if (!pred.gender.empty() && e.gender) {
                gp.push_back(pred.gender[i]);
                gg.push_back(*e.gender);
            }
        }
        if (!sp.empty()) t.symptom = compute_metrics(sp, sg, symptom_display_names());
        if (!gp.empty()) t.gender = compute_metrics(gp, gg, gender_names());
        out.push_back(std::move(t));
    }
    return out;
}

std::string format_classwise(const std::vector<ClasswiseTable>& tables, Format format) {
    std::string out;
    if (format == Format::records) {
        for (const auto& t : tables) {
            for (const auto* rep : {&t.symptom, &t.gender}) {
                if (!*rep) continue;
                for (const auto& m : (*rep)->classes) {
                    json j;
                    j["stream"] = t.stream;
                    j["task"] = rep == &t.symptom ? "symptom" : "gender";
                    j.update(class_record(m));
                    out += j.dump() + "\n";
                }
                json j;
                j["stream"] = t.stream;
                j["task"] = rep == &t.symptom ? "symptom" : "gender";
                j["class"] = "macro";
                j["precision"] = (*rep)->macro_precision;
                j["recall"] = (*rep)->macro_recall;
                j["f1"] = (*rep)->macro_f1;
                j["support"] = (*rep)->total;
                out += j.dump() + "\n";
            }
        }
        return out;
    }
    for (const auto& t : tables) {
        out += fmt::format("== {} ({} items) ==\n", t.stream, t.items);
        if (t.items == 0) {
            out += "(empty)\n\n";
            continue;
        }
        out += fmt::format("{:<12} {:>6} {:>6} {:>6} {:>8}\n", "class", "P", "R", "F1", "support");
        if (t.symptom) append_class_rows(out, *t.symptom);
        if (t.gender) append_class_rows(out, *t.gender);
        if (t.symptom)
            out += fmt::format("{:<12} {} {} {}\n", "SI macro", pct(t.symptom->macro_precision),
                               pct(t.symptom->macro_recall), pct(t.symptom->macro_f1));
        if (t.gender)
            out += fmt::format("{:<12} {} {} {}\n", "GI macro", pct(t.gender->macro_precision),
                               pct(t.gender->macro_recall), pct(t.gender->macro_f1));
        out += "\n";
    }
    return out;
}

std::string_view to_string(AblationArm arm) {
    switch (arm) {
        case AblationArm::full:
            return "full";
        case AblationArm::minus_attention:
            return "minus_attention";
        case AblationArm::minus_entity_masking:
            return "minus_entity_masking";
        case AblationArm::minus_task_adaptation:
            return "minus_task_adaptation";
    }
    return "?";
}

std::string_view display_name(AblationArm arm) {
    switch (arm) {
        case AblationArm::full:
            return "GeM";
        case AblationArm::minus_attention:
            return "-A";
        case AblationArm::minus_entity_masking:
            return "-EM";
        case AblationArm::minus_task_adaptation:
            return "-TA";
    }
    return "?";
}

const AblationRow& AblationReport::row(AblationArm arm) const {
    for (const auto& r : rows)
        if (r.arm == arm) return r;
    throw ConfigError("ablation report has no row " + std::string(to_string(arm)));
}

std::uint64_t split_id_hash(const corpus::CorpusSplit& split) {
    std::uint64_t h = fnv1a("split");
    for (const auto* part : {&split.train, &split.dev, &split.test}) {
        for (const auto& it : *part) h = fnv1a(it.item.id + "\n", h);
        h = fnv1a("|", h);
    }
    return h;
}

AblationReport run_ablation(const AblationSettings& s, const corpus::CorpusSplit& split,
                            const train::Lexicons& lexicons) {
    if (s.seeds.size() < 3) throw ConfigError("ablation needs at least 3 seeds, got " + std::to_string(s.seeds.size()));
    if (s.arms.empty()) throw ConfigError("ablation needs at least one arm");
    if (split.train.empty() || split.test.empty()) throw ValidationError("ablation needs non-empty train and test sets");

    const auto uses = [&](AblationArm a) { return std::find(s.arms.begin(), s.arms.end(), a) != s.arms.end(); };
    const bool need_masked = uses(AblationArm::full) || uses(AblationArm::minus_attention) ||
                             uses(AblationArm::minus_task_adaptation);
    std::optional<PreparedData> masked, raw;
    if (need_masked) masked = prepare(split, lexicons, train::ViewMode::masked, s.min_freq, s.model.max_len);
    if (uses(AblationArm::minus_entity_masking))
        raw = prepare(split, lexicons, train::ViewMode::raw, s.min_freq, s.model.max_len);

    AblationReport report;
    report.seeds = s.seeds;
    report.split_hash = split_id_hash(split);
    std::map<AblationArm, std::vector<AblationRun>> runs;

    for (const auto seed : s.seeds) {
        // Pretrained bi-encoder values on the masked views, shared by full and -A.
        std::optional<std::map<std::string, std::vector<double>>> pretrained;
        for (const auto arm : s.arms) {
            const auto t0 = std::chrono::steady_clock::now();
            AblationRun run;
            run.arm = arm;
            run.seed = seed;
            const PreparedData& data = arm == AblationArm::minus_entity_masking ? *raw : *masked;
            run.split_hash = data.split_hash;
            try {
                model::ModelConfig mc = s.model;
                mc.vocab_size = data.vocab.size();
                mc.variant = arm == AblationArm::minus_attention ? model::Variant::concat_ablation : model::Variant::gem;
                train::TrainConfig ft = s.finetune;
                ft.seed = mix_seed(seed, 0x4654);
                train::TrainConfig pt = s.pretrain;
                pt.seed = mix_seed(seed, 0x5054);

                train::TrainState state(model::GemModel(mc, seed));
                const bool tapt = arm != AblationArm::minus_task_adaptation && pt.epochs > 0;
                if (tapt) {
                    const bool shareable = arm == AblationArm::full || arm == AblationArm::minus_attention;
                    if (shareable && pretrained) {
                        for (auto role : {model::EncoderRole::symptom, model::EncoderRole::gender}) {
                            auto& enc = state.model.encoder(role);
                            std::map<std::string, std::vector<double>> subset;
                            for (const auto& p : enc.parameters()) subset.emplace(p.name, pretrained->at(p.name));
                            state.model.load_state(subset, false);
                        }
                    } else {
                        train::pretrain_model(state.model, data.train, pt);
                        if (shareable) {
                            pretrained.emplace();
                            for (auto role : {model::EncoderRole::symptom, model::EncoderRole::gender})
                                for (const auto& p : state.model.encoder(role).parameters())
                                    pretrained->emplace(p.name, std::vector<double>(p.tensor.values().begin(),
                                                                                    p.tensor.values().end()));
                        }
                    }
                }
                const auto trace = train::mtl_finetune(state, data.train, data.dev, ft);
                if (!trace.empty()) run.first_epoch_dev_loss = trace.front().dev.loss;
                train::restore_best(state);
                const auto m = train::evaluate_set(state.model, data.test, ft);
                run.symptom = m.symptom;
                run.gender = m.gender;
            } catch (const NumericError& e) {
                run.failed = true;
                run.error = e.what();
            }
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (run.split_hash != report.split_hash)
                throw ValidationError("ablation arm " + std::string(to_string(arm)) + " saw a different split");
            if (s.log) {
                json j;
                j["arm"] = std::string(to_string(arm));
                j["seed"] = seed;
                j["failed"] = run.failed;
                if (run.failed) j["error"] = run.error;
                if (run.symptom) j["symptom_f1"] = run.symptom->macro_f1;
                if (run.gender) j["gender_f1"] = run.gender->macro_f1;
                j["first_epoch_dev_loss"] = number_or_null(run.failed ? kNaN : run.first_epoch_dev_loss);
                j["seconds"] = run.seconds;
                *s.log << j.dump() << std::endl;
            }
            runs[arm].push_back(std::move(run));
        }
    }

    for (const auto arm : s.arms) {
        AblationRow row;
        row.arm = arm;
        row.runs = std::move(runs[arm]);
        std::vector<const MetricsReport*> sym, gen;
        std::vector<double> losses;
        for (const auto& r : row.runs) {
            if (r.failed) {
                ++row.failures;
                continue;
            }
            if (r.symptom) sym.push_back(&*r.symptom);
            if (r.gender) gen.push_back(&*r.gender);
            losses.push_back(r.first_epoch_dev_loss);
        }
        row.symptom = sym.empty() ? MetricTriple{kNaN, kNaN, kNaN} : median_triple(sym);
        row.gender = gen.empty() ? MetricTriple{kNaN, kNaN, kNaN} : median_triple(gen);
        row.median_first_epoch_dev_loss = median(losses);
        report.rows.push_back(std::move(row));
    }

    if (uses(AblationArm::full)) {
        const auto& full = report.row(AblationArm::full);
        for (const auto& row : report.rows) {
            if (row.arm == AblationArm::full) continue;
            std::vector<double> x, y;
            for (std::size_t i = 0; i < full.runs.size(); ++i) {
                const auto& a = full.runs[i];
                const auto& b = row.runs[i];
                if (a.failed || b.failed || !a.symptom || !b.symptom) continue;
                x.push_back(a.symptom->macro_f1);
                y.push_back(b.symptom->macro_f1);
            }
            if (!x.empty()) report.significance.emplace_back(row.arm, wilcoxon_signed_rank(x, y, Alternative::greater));
        }
    }
    return report;
}

std::string format_ablation(const AblationReport& r, Format format) {
    std::string out;
    if (format == Format::records) {
        for (const auto& row : r.rows) {
            json j;
            j["arm"] = std::string(to_string(row.arm));
            j["name"] = std::string(display_name(row.arm));
            j["symptom"] = {{"precision", number_or_null(row.symptom.precision)},
                            {"recall", number_or_null(row.symptom.recall)},
                            {"f1", number_or_null(row.symptom.f1)}};
            j["gender"] = {{"precision", number_or_null(row.gender.precision)},
                           {"recall", number_or_null(row.gender.recall)},
                           {"f1", number_or_null(row.gender.f1)}};
            j["first_epoch_dev_loss"] = number_or_null(row.median_first_epoch_dev_loss);
            j["seeds"] = r.seeds;
            j["failures"] = row.failures;
            json per_seed = json::array();
            for (const auto& run : row.runs)
                per_seed.push_back(run.failed || !run.symptom ? json(nullptr) : json(run.symptom->macro_f1));
            j["symptom_f1_per_seed"] = per_seed;
            out += j.dump() + "\n";
        }
        for (const auto& [arm, sig] : r.significance) {
            json j;
            j["test"] = "wilcoxon";
            j["comparison"] = "full_vs_" + std::string(to_string(arm));
            j["alternative"] = std::string(to_string(sig.alternative));
            j["n"] = sig.n;
            j["statistic"] = sig.statistic;
            j["p_value"] = sig.p_value;
            out += j.dump() + "\n";
        }
        return out;
    }
    out += fmt::format("Median over {} seeds (symptom task, macro, %)\n", r.seeds.size());
    out += fmt::format("{:<6} {:>6} {:>6} {:>6}   {:>9} {:>8}\n", "Model", "P", "R", "F1", "GI F1", "failures");
    for (const auto& row : r.rows)
        out += fmt::format("{:<6} {} {} {}   {:>9} {:>8}\n", display_name(row.arm), pct(row.symptom.precision),
                           pct(row.symptom.recall), pct(row.symptom.f1), pct(row.gender.f1), row.failures);
    for (const auto& [arm, sig] : r.significance)
        out += fmt::format("GeM > {:<4} Wilcoxon (per-seed F1, one-sided): n={} W+={} p={:.4g}\n", display_name(arm),
                           sig.n, sig.w_plus, sig.p_value);
    return out;
}

SimilarityReport gender_presence_similarity(const model::GemModel& model, std::span<const corpus::LabeledItem> items,
                                            const train::Lexicons& lexicons, const text::Vocabulary& vocab,
                                            train::ViewMode mode, Alternative alternative) {
    if (!lexicons.gender) throw ConfigError("gender-presence analysis needs the gender lexicon");
    if (!model.has_encoder(model::EncoderRole::symptom))
        throw ConfigError("gender-presence analysis needs a model with a symptom encoder");

    std::vector<corpus::LabeledItem> labeled;
    for (const auto& it : items)
        if (it.symptom) labeled.push_back(it);
    const auto encoded = train::encode_items(labeled, lexicons, mode, vocab, model.config().max_len);

    std::vector<bool> present(labeled.size());
    std::size_t n_present = 0;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        present[i] = !lexicons.gender->find_matches(labeled[i].item.text).empty();
        n_present += present[i];
    }
    const std::size_t n_absent = labeled.size() - n_present;
    if (n_present == 0) throw ValidationError("gender-presence analysis: the gender-present partition is empty");
    if (n_absent == 0) throw ValidationError("gender-presence analysis: the gender-absent partition is empty");

    // S-encoder [CLS] vectors.
    const std::size_t d = model.config().d;
    std::vector<std::vector<double>> cls(labeled.size());
    {
        nn::NoGradGuard guard;
        const std::size_t bs = 64;
        for (std::size_t start = 0; start < encoded.size(); start += bs) {
            const std::size_t end = std::min(encoded.size(), start + bs);
            std::vector<text::TokenSequence> sv, gv;
            for (std::size_t i = start; i < end; ++i) {
                sv.push_back(encoded[i].symptom_view);
                gv.push_back(encoded[i].gender_view);
            }
            const auto pred = model.predict(text::make_paired_batch(sv, gv), model::ForwardContext{});
            const auto& v = pred.symptom_cls()->values();
            for (std::size_t i = start; i < end; ++i)
                cls[i].assign(v.begin() + static_cast<std::ptrdiff_t>((i - start) * d),
                              v.begin() + static_cast<std::ptrdiff_t>((i - start + 1) * d));
        }
    }

    std::vector<std::vector<double>> centroid(kNumSymptoms, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(kNumSymptoms, 0);
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        const auto c = static_cast<std::size_t>(*labeled[i].symptom);
        for (std::size_t k = 0; k < d; ++k) centroid[c][k] += cls[i][k];
        ++count[c];
    }
    for (std::size_t c = 0; c < kNumSymptoms; ++c)
        if (count[c])
            for (double& x : centroid[c]) x /= static_cast<double>(count[c]);

    std::vector<double> sim(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i)
        sim[i] = cosine_similarity(cls[i], centroid[static_cast<std::size_t>(*labeled[i].symptom)]);

    SimilarityReport r;
    r.n_present = n_present;
    r.n_absent = n_absent;
    std::vector<double> all_present, all_absent;
    for (std::size_t i = 0; i < labeled.size(); ++i) (present[i] ? all_present : all_absent).push_back(sim[i]);
    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    r.mean_present = mean(all_present);
    r.mean_absent = mean(all_absent);
    r.median_present = median(all_present);
    r.median_absent = median(all_absent);

    // Greedy pairing in item order: same class, nearest token length, lowest index on ties.
    std::vector<bool> used(labeled.size(), false);
    std::vector<double> x, y;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        if (!present[i]) continue;
        const auto len_i = static_cast<long>(encoded[i].symptom_view.ids.size());
        std::optional<std::size_t> best;
        long best_gap = 0;
        for (std::size_t j = 0; j < labeled.size(); ++j) {
            if (present[j] || used[j] || *labeled[j].symptom != *labeled[i].symptom) continue;
            const long gap = std::labs(static_cast<long>(encoded[j].symptom_view.ids.size()) - len_i);
            if (!best || gap < best_gap) {
                best = j;
                best_gap = gap;
            }
        }
        if (!best) continue;
        used[*best] = true;
        x.push_back(sim[i]);
        y.push_back(sim[*best]);
    }
    r.n_pairs = x.size();
    if (x.empty()) throw ValidationError("gender-presence analysis: no same-class pairs could be formed");
    r.test = wilcoxon_signed_rank(x, y, alternative);
    return r;
}

std::string format_significance(const SignificanceReport& s, Format format) {
    if (format == Format::records) {
        json j;
        j["test"] = "wilcoxon";
        j["statistic"] = s.statistic;
        j["w_plus"] = s.w_plus;
        j["w_minus"] = s.w_minus;
        j["n"] = s.n;
        j["p_value"] = s.p_value;
        j["method"] = std::string(to_string(s.method));
        j["alternative"] = std::string(to_string(s.alternative));
        return j.dump() + "\n";
    }
    return fmt::format("Wilcoxon signed-rank ({}, {})\n  n = {}\n  W = {}  (W+ = {}, W- = {})\n  p = {:.6g}\n",
                       to_string(s.alternative), to_string(s.method), s.n, s.statistic, s.w_plus, s.w_minus,
                       s.p_value);
}

std::string format_similarity(const SimilarityReport& r, Format format) {
    if (format == Format::records) {
        json j;
        j["analysis"] = "gender_presence_similarity";
        j["n_present"] = r.n_present;
        j["n_absent"] = r.n_absent;
        j["n_pairs"] = r.n_pairs;
        j["mean_present"] = number_or_null(r.mean_present);
        j["mean_absent"] = number_or_null(r.mean_absent);
        j["median_present"] = number_or_null(r.median_present);
        j["median_absent"] = number_or_null(r.median_absent);
        j["p_value"] = r.test.p_value;
        j["alternative"] = std::string(to_string(r.test.alternative));
        j["method"] = std::string(to_string(r.test.method));
        return j.dump() + "\n";
    }
    std::string out = fmt::format(
        "Centroid cosine similarity of symptom encodings\n"
        "  gender present: {} items, mean {:.4f}, median {:.4f}\n"
        "  gender absent:  {} items, mean {:.4f}, median {:.4f}\n"
        "  matched pairs:  {}\n",
        r.n_present, r.mean_present, r.median_present, r.n_absent, r.mean_absent, r.median_absent, r.n_pairs);
    return out + format_significance(r.test, format);
}

}  // namespace gem::eval
