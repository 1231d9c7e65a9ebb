#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "gem/config.hpp"
#include "gem/corpus.hpp"
#include "gem/error.hpp"
#include "gem/eval.hpp"
#include "gem/knowledge.hpp"
#include "gem/platform.hpp"
#include "gem/stats.hpp"
#include "gem/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gem;

namespace {

// Flags shared by every command.
struct Common {
    std::optional<std::uint64_t> seed;
    std::string format = "table";
    std::string out;
    std::string config_path;
    std::string preset = "desk";

    eval::Format fmt() const { return eval::parse_format(format); }
};

void add_common(CLI::App* cmd, Common& c, bool with_config = false) {
    cmd->add_option("--seed", c.seed, "Random seed (overrides the configuration)");
    cmd->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"table", "records"}));
    cmd->add_option("--out", c.out, "Output file or directory");
    if (with_config) {
        cmd->add_option("--config", c.config_path, "Run configuration file (INI)");
        cmd->add_option("--preset", c.preset, "Base preset")->check(CLI::IsMember({"desk", "paper"}));
    }
}

config::RunConfig run_config(const Common& c) {
    auto cfg = config::preset(c.preset);
    if (!c.config_path.empty()) cfg = config::load_run_config(c.config_path, cfg);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

void emit(const Common&, const std::string& text) {
    std::cout << text;
    std::cout.flush();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

fs::path require_out(const Common& c, const std::string& what) {
    if (c.out.empty()) throw ConfigError(what + " needs --out");
    return c.out;
}

struct LoadedLexicons {
    knowledge::Lexicon cvd, symptom, gender;
};

LoadedLexicons load_lexicons(const config::RunConfig& cfg) {
    return {knowledge::load_lexicon(cfg.cvd_lexicon, knowledge::Category::cvd),
            knowledge::load_lexicon(cfg.symptom_lexicon, knowledge::Category::symptom),
            knowledge::load_lexicon(cfg.gender_lexicon, knowledge::Category::gender)};
}

std::string stats_text(const corpus::CorpusStats& s, eval::Format f) {
    if (f == eval::Format::records) {
        std::string out;
        for (const auto& [cls, counts] : s.per_class) {
            json j;
            j["class"] = cls;
            j["posts"] = counts[0];
            j["comments"] = counts[1];
            out += j.dump() + "\n";
        }
        json t;
        t["class"] = "total";
        t["posts"] = s.totals[0];
        t["comments"] = s.totals[1];
        t["post_users"] = s.users[0];
        t["comment_users"] = s.users[1];
        return out + t.dump() + "\n";
    }
    std::string out = fmt::format("{:<12} {:>8} {:>9}\n", "class", "posts", "comments");
    for (const auto& [cls, counts] : s.per_class) out += fmt::format("{:<12} {:>8} {:>9}\n", cls, counts[0], counts[1]);
    out += fmt::format("{:<12} {:>8} {:>9}\n", "total", s.totals[0], s.totals[1]);
    out += fmt::format("{:<12} {:>8} {:>9}\n", "users", s.users[0], s.users[1]);
    return out;
}

std::vector<double> parse_ratios(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            out.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw ConfigError("--ratios: '" + part + "' is not a number");
        }
    }
    if (out.size() != 3) throw ConfigError("--ratios needs three comma-separated values");
    double sum = 0.0;
    for (double r : out) {
        if (!(r >= 0.0)) throw ConfigError("--ratios must be non-negative");
        sum += r;
    }
    if (!(sum > 0.0)) throw ConfigError("--ratios must not all be zero");
    for (double& r : out) r /= sum;
    return out;
}

corpus::StratifyBy parse_stratify(const std::string& s) {
    if (s == "none") return corpus::StratifyBy::none;
    if (s == "symptom") return corpus::StratifyBy::symptom;
    if (s == "gender") return corpus::StratifyBy::gender;
    if (s == "both") return corpus::StratifyBy::both;
    throw ConfigError("unknown --stratify value '" + s + "'");
}

json spans_json(const std::vector<knowledge::Span>& spans) {
    json a = json::array();
    for (const auto& s : spans) a.push_back({s.start, s.end, s.tag});
    return a;
}

train::ViewMode view_mode(bool no_masking) { return no_masking ? train::ViewMode::raw : train::ViewMode::masked; }

// Loads the encoder parameters of a pretraining checkpoint into the model.
void load_pretrained(train::TrainState& state, const train::Checkpoint& ck) {
    std::map<std::string, std::vector<double>> encoders;
    for (const auto& [name, values] : ck.params)
        if (name.rfind("symptom_head.", 0) != 0 && name.rfind("gender_head.", 0) != 0) encoders.emplace(name, values);
    const auto own = state.model.state();
    std::size_t matched = 0;
    for (const auto& [name, values] : encoders) matched += own.count(name);
    if (matched == 0) throw IncompatibilityError("pretrained checkpoint shares no encoder parameters with this variant");
    std::map<std::string, std::vector<double>> subset;
    for (const auto& [name, values] : encoders)
        if (own.count(name)) subset.emplace(name, values);
    state.model.load_state(subset, false);
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"GeM: knowledge-assisted bi-encoder for symptom and gender identification"};
    app.require_subcommand(1);

    // ---- corpus ----------------------------------------------------------
    auto* corpus_cmd = app.add_subcommand("corpus", "Generate, filter, split and describe corpora");
    corpus_cmd->require_subcommand(1);

    Common gen_c;
    std::size_t gen_n = 0;
    bool gen_interaction = false, gen_channels = false;
    std::optional<double> gen_noise, gen_cue_density;
    auto* gen_cmd = corpus_cmd->add_subcommand("generate", "Write a deterministic synthetic corpus");
    add_common(gen_cmd, gen_c, true);
    gen_cmd->add_option("--n", gen_n, "Number of items (default from configuration)");
    gen_cmd->add_flag("--interaction", gen_interaction, "Symptom label depends on symptom and gender cues");
    gen_cmd->add_flag("--gender-channels", gen_channels, "Label items by askmen/askwomen-style channel");
    gen_cmd->add_option("--gender-noise", gen_noise, "Fraction of channel labels that disagree with the text");
    gen_cmd->add_option("--cue-density", gen_cue_density, "Probability an item carries its cues");

    Common filt_c;
    std::string filt_in, filt_lexicon;
    bool filt_quality = false, filt_anonymize = false;
    std::uint64_t filt_min_upvotes = 10;
    std::size_t filt_min_tokens = 50;
    auto* filt_cmd = corpus_cmd->add_subcommand("filter", "Keep CVD-related items; optional quality filter and anonymization");
    add_common(filt_cmd, filt_c);
    filt_cmd->add_option("--in", filt_in, "Input corpus")->required();
    filt_cmd->add_option("--lexicon", filt_lexicon, "CVD lexicon file")->required();
    filt_cmd->add_flag("--quality", filt_quality, "Also apply the upvote/length filter");
    filt_cmd->add_option("--min-upvotes", filt_min_upvotes, "Keep items with more upvotes than this");
    filt_cmd->add_option("--min-tokens", filt_min_tokens, "Keep items with at least this many tokens");
    filt_cmd->add_flag("--anonymize", filt_anonymize, "Replace URLs and user mentions");

    Common split_c;
    std::string split_in, split_ratios = "75,5,20", split_stratify = "both";
    auto* split_cmd = corpus_cmd->add_subcommand("split", "Stratified train/dev/test split");
    add_common(split_cmd, split_c);
    split_cmd->add_option("--in", split_in, "Input corpus")->required();
    split_cmd->add_option("--ratios", split_ratios, "Train,dev,test proportions");
    split_cmd->add_option("--stratify", split_stratify, "none|symptom|gender|both");

    Common cstats_c;
    std::string cstats_in;
    auto* cstats_cmd = corpus_cmd->add_subcommand("stats", "Per-class post/comment counts");
    add_common(cstats_cmd, cstats_c);
    cstats_cmd->add_option("--in", cstats_in, "Input corpus")->required();

    // ---- lexicon ---------------------------------------------------------
    auto* lex_cmd = app.add_subcommand("lexicon", "Lexicon utilities");
    lex_cmd->require_subcommand(1);
    Common lexv_c;
    std::vector<std::string> lexv_files;
    auto* lexv_cmd = lex_cmd->add_subcommand("validate", "Check lexicon files");
    add_common(lexv_cmd, lexv_c);
    lexv_cmd->add_option("files", lexv_files, "Lexicon files")->required();

    // ---- mask ------------------------------------------------------------
    Common mask_c;
    std::string mask_in, mask_sym, mask_gen;
    auto* mask_cmd = app.add_subcommand("mask", "Write symptom and gender views for every item");
    add_common(mask_cmd, mask_c);
    mask_cmd->add_option("--in", mask_in, "Input corpus")->required();
    mask_cmd->add_option("--symptom-lexicon", mask_sym, "Symptom lexicon")->required();
    mask_cmd->add_option("--gender-lexicon", mask_gen, "Gender lexicon")->required();

    // ---- pretrain --------------------------------------------------------
    Common pre_c;
    std::string pre_train, pre_variant = "gem";
    bool pre_raw = false;
    std::optional<std::size_t> pre_epochs;
    auto* pre_cmd = app.add_subcommand("pretrain", "Masked-language-model pretraining of the encoders");
    add_common(pre_cmd, pre_c, true);
    pre_cmd->add_option("--train", pre_train, "Training corpus")->required();
    pre_cmd->add_option("--variant", pre_variant, "Model variant");
    pre_cmd->add_flag("--no-masking", pre_raw, "Use raw text for both views");
    pre_cmd->add_option("--epochs", pre_epochs, "Pretraining epochs");

    // ---- train -----------------------------------------------------------
    Common tr_c;
    std::string tr_train, tr_dev, tr_variant = "gem", tr_init, tr_resume, tr_vocab;
    bool tr_raw = false;
    std::optional<std::size_t> tr_epochs;
    std::optional<double> tr_lr;
    auto* tr_cmd = app.add_subcommand("train", "Multi-task fine-tuning");
    add_common(tr_cmd, tr_c, true);
    tr_cmd->add_option("--train", tr_train, "Training corpus")->required();
    tr_cmd->add_option("--dev", tr_dev, "Development corpus");
    tr_cmd->add_option("--variant", tr_variant, "gem|stl_symptom|stl_gender|mtl_shared|concat_ablation");
    tr_cmd->add_option("--init", tr_init, "Pretraining checkpoint to start from");
    tr_cmd->add_option("--resume", tr_resume, "Training checkpoint to resume");
    tr_cmd->add_option("--vocab", tr_vocab, "Vocabulary file (default: built from --train)");
    tr_cmd->add_flag("--no-masking", tr_raw, "Use raw text for both views");
    tr_cmd->add_option("--epochs", tr_epochs, "Total epochs");
    tr_cmd->add_option("--lr", tr_lr, "Learning rate");

    // ---- eval ------------------------------------------------------------
    Common ev_c;
    std::string ev_ckpt, ev_vocab, ev_test;
    bool ev_raw = false, ev_last = false;
    auto* ev_cmd = app.add_subcommand("eval", "Class-wise report on a test corpus");
    add_common(ev_cmd, ev_c, true);
    ev_cmd->add_option("--checkpoint", ev_ckpt, "Training checkpoint")->required();
    ev_cmd->add_option("--vocab", ev_vocab, "Vocabulary file")->required();
    ev_cmd->add_option("--test", ev_test, "Test corpus")->required();
    ev_cmd->add_flag("--no-masking", ev_raw, "Use raw text for both views");
    ev_cmd->add_flag("--last", ev_last, "Evaluate the final parameters instead of the best-dev ones");

    // ---- ablate ----------------------------------------------------------
    Common ab_c;
    std::string ab_train, ab_dev, ab_test;
    std::size_t ab_seeds = 5;
    auto* ab_cmd = app.add_subcommand("ablate", "Full model against -A, -EM and -TA over several seeds");
    add_common(ab_cmd, ab_c, true);
    ab_cmd->add_option("--train", ab_train, "Training corpus")->required();
    ab_cmd->add_option("--dev", ab_dev, "Development corpus")->required();
    ab_cmd->add_option("--test", ab_test, "Test corpus")->required();
    ab_cmd->add_option("--seeds", ab_seeds, "Number of seeds (at least 3)");

    // ---- stats -----------------------------------------------------------
    auto* st_cmd = app.add_subcommand("stats", "Significance tests");
    st_cmd->require_subcommand(1);
    Common wx_c;
    std::string wx_in, wx_alt = "two_sided";
    std::size_t wx_x = 1, wx_y = 2;
    auto* wx_cmd = st_cmd->add_subcommand("wilcoxon", "Signed-rank test on two numeric columns");
    add_common(wx_cmd, wx_c);
    wx_cmd->add_option("--in", wx_in, "Whitespace- or comma-separated file")->required();
    wx_cmd->add_option("--x", wx_x, "1-based column of x");
    wx_cmd->add_option("--y", wx_y, "1-based column of y");
    wx_cmd->add_option("--alternative", wx_alt, "two_sided|less|greater");

    Common gp_c;
    std::string gp_ckpt, gp_vocab, gp_in, gp_alt = "less";
    bool gp_raw = false;
    auto* gp_cmd = st_cmd->add_subcommand("gender-presence", "Centroid similarity with and without gender terms");
    add_common(gp_cmd, gp_c, true);
    gp_cmd->add_option("--checkpoint", gp_ckpt, "Training checkpoint")->required();
    gp_cmd->add_option("--vocab", gp_vocab, "Vocabulary file")->required();
    gp_cmd->add_option("--in", gp_in, "Items")->required();
    gp_cmd->add_option("--alternative", gp_alt, "two_sided|less|greater");
    gp_cmd->add_flag("--no-masking", gp_raw, "Use raw text for both views");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen_cmd) {
            auto cfg = run_config(gen_c);
            auto spec = cfg.generator;
            if (gen_n) spec.n_items = gen_n;
            spec.seed = gen_c.seed ? *gen_c.seed : spec.seed;
            if (gen_interaction) spec.interaction_mode = true;
            if (gen_channels) spec.gender_channels = true;
            if (gen_noise) spec.gender_label_noise = *gen_noise;
            if (gen_cue_density) spec.cue_density = *gen_cue_density;
            const auto lex = load_lexicons(cfg);
            const auto items = corpus::generate_synthetic_corpus(spec, {lex.cvd, lex.symptom, lex.gender});
            corpus::save_corpus(require_out(gen_c, "corpus generate"), items);
            emit(gen_c, stats_text(corpus::corpus_stats(items), gen_c.fmt()));
        } else if (*filt_cmd) {
            const auto cvd = knowledge::load_lexicon(filt_lexicon, knowledge::Category::cvd);
            auto items = corpus::load_corpus(filt_in);
            const std::size_t before = items.size();
            items = corpus::filter_cvd(items, cvd);
            const std::size_t after_cvd = items.size();
            if (filt_quality) {
                corpus::QualityOptions q;
                q.post = q.comment = corpus::QualityThresholds{filt_min_upvotes, filt_min_tokens};
                items = corpus::quality_filter(items, q);
            }
            if (filt_anonymize)
                for (auto& it : items) it.item.text = corpus::anonymize(it.item.text);
            corpus::save_corpus(require_out(filt_c, "corpus filter"), items);
            if (filt_c.fmt() == eval::Format::records) {
                json j{{"input", before}, {"cvd", after_cvd}, {"kept", items.size()}};
                emit(filt_c, j.dump() + "\n");
            } else {
                emit(filt_c, fmt::format("input {}\nafter CVD filter {}\nkept {}\n", before, after_cvd, items.size()));
            }
        } else if (*split_cmd) {
            const auto r = parse_ratios(split_ratios);
            const auto items = corpus::load_corpus(split_in);
            const auto s = corpus::split(items, {r[0], r[1], r[2]}, split_c.seed.value_or(7), parse_stratify(split_stratify));
            const fs::path dir = require_out(split_c, "corpus split");
            fs::create_directories(dir);
            corpus::save_corpus(dir / "train.jsonl", s.train);
            corpus::save_corpus(dir / "dev.jsonl", s.dev);
            corpus::save_corpus(dir / "test.jsonl", s.test);
            if (split_c.fmt() == eval::Format::records)
                emit(split_c, json{{"train", s.train.size()}, {"dev", s.dev.size()}, {"test", s.test.size()}}.dump() + "\n");
            else
                emit(split_c, fmt::format("train {}\ndev {}\ntest {}\n", s.train.size(), s.dev.size(), s.test.size()));
        } else if (*cstats_cmd) {
            const auto items = corpus::load_corpus(cstats_in);
            const auto text = stats_text(corpus::corpus_stats(items), cstats_c.fmt());
            if (!cstats_c.out.empty()) write_text(cstats_c.out, text);
            emit(cstats_c, text);
        } else if (*lexv_cmd) {
            std::string out;
            for (const auto& f : lexv_files) {
                const auto entries = knowledge::read_lexicon_file(f);
                std::map<knowledge::Category, std::vector<knowledge::LexiconEntry>> by;
                for (const auto& e : entries) by[e.category].push_back(e);
                for (auto& [cat, es] : by) {
                    const std::size_t n = es.size();
                    knowledge::Lexicon::from_entries(std::move(es), cat);
                    if (lexv_c.fmt() == eval::Format::records)
                        out += json{{"file", f}, {"category", std::string(knowledge::to_string(cat))}, {"entries", n}}.dump() + "\n";
                    else
                        out += fmt::format("{}: {} {} entries ok\n", f, n, knowledge::to_string(cat));
                }
            }
            emit(lexv_c, out);
        } else if (*mask_cmd) {
            const auto sym = knowledge::load_lexicon(mask_sym, knowledge::Category::symptom);
            const auto gen = knowledge::load_lexicon(mask_gen, knowledge::Category::gender);
            const auto items = corpus::load_corpus(mask_in);
            std::string out = json{{"format", "gem-views"}, {"version", 1}}.dump() + "\n";
            std::size_t s_spans = 0, g_spans = 0;
            for (const auto& it : items) {
                const auto v = knowledge::build_views(it.item.text, sym, gen);
                s_spans += v.symptom_spans.size();
                g_spans += v.gender_spans.size();
                json j;
                j["id"] = it.item.id;
                j["original"] = v.original;
                j["symptom_view"] = v.symptom_view;
                j["gender_view"] = v.gender_view;
                j["symptom_spans"] = spans_json(v.symptom_spans);
                j["gender_spans"] = spans_json(v.gender_spans);
                out += j.dump() + "\n";
            }
            write_text(require_out(mask_c, "mask"), out);
            if (mask_c.fmt() == eval::Format::records)
                emit(mask_c, json{{"items", items.size()}, {"symptom_spans", s_spans}, {"gender_spans", g_spans}}.dump() + "\n");
            else
                emit(mask_c, fmt::format("items {}\nsymptom spans {}\ngender spans {}\n", items.size(), s_spans, g_spans));
        } else if (*pre_cmd) {
            auto cfg = run_config(pre_c);
            if (pre_epochs) cfg.pretrain.epochs = *pre_epochs;
            cfg.pretrain.seed = cfg.seed;
            const auto lex = load_lexicons(cfg);
            const train::Lexicons lx{&lex.symptom, &lex.gender};
            const auto items = corpus::load_corpus(pre_train);
            const auto mode = view_mode(pre_raw);
            const auto vocab = train::build_vocabulary(items, lx, mode, cfg.min_freq);
            auto mc = cfg.model;
            mc.vocab_size = vocab.size();
            mc.variant = model::parse_variant(pre_variant);
            train::TrainState state(model::GemModel(mc, cfg.seed));
            const auto set = train::encode_items(items, lx, mode, vocab, mc.max_len);
            const auto results = train::pretrain_model(state.model, set, cfg.pretrain);
            const fs::path dir = require_out(pre_c, "pretrain");
            fs::create_directories(dir);
            vocab.save(dir / "vocab.txt");
            train::save_checkpoint(dir / "pretrained.ckpt", state, cfg.pretrain, vocab.hash());
            std::string out, log;
            for (const auto& [enc, r] : results)
                for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
                    log += json{{"encoder", enc}, {"epoch", e + 1}, {"mlm_loss", r.epoch_losses[e]}}.dump() + "\n";
                    if (pre_c.fmt() == eval::Format::table)
                        out += fmt::format("{:<10} epoch {:>3}  MLM loss {:.4f}\n", enc, e + 1, r.epoch_losses[e]);
                }
            write_text(dir / "pretrain_log.ndjson", log);
            emit(pre_c, pre_c.fmt() == eval::Format::records ? log : out);
        } else if (*tr_cmd) {
            auto cfg = run_config(tr_c);
            if (tr_epochs) cfg.train.epochs = *tr_epochs;
            if (tr_lr) cfg.train.lr = *tr_lr;
            cfg.train.seed = cfg.seed;
            const auto lex = load_lexicons(cfg);
            const train::Lexicons lx{&lex.symptom, &lex.gender};
            const auto mode = view_mode(tr_raw);
            const auto train_items = corpus::load_corpus(tr_train);
            std::vector<corpus::LabeledItem> dev_items;
            if (!tr_dev.empty()) dev_items = corpus::load_corpus(tr_dev);
            const auto vocab = !tr_vocab.empty() ? text::Vocabulary::load(tr_vocab)
                                                 : train::build_vocabulary(train_items, lx, mode, cfg.min_freq);
            auto mc = cfg.model;
            mc.vocab_size = vocab.size();
            mc.variant = model::parse_variant(tr_variant);

            std::optional<train::TrainState> state;
            if (!tr_resume.empty()) {
                state.emplace(train::restore_state(train::load_checkpoint(tr_resume), vocab.hash()));
                if (state->model.config().variant != mc.variant)
                    throw IncompatibilityError("checkpoint variant " + std::string(model::to_string(state->model.config().variant)) +
                                               " differs from --variant " + tr_variant);
            } else {
                state.emplace(model::GemModel(mc, cfg.seed));
                if (!tr_init.empty()) {
                    const auto ck = train::load_checkpoint(tr_init);
                    if (ck.vocab_hash != vocab.hash())
                        throw IncompatibilityError("pretraining checkpoint was built with a different vocabulary; pass --vocab");
                    load_pretrained(*state, ck);
                }
            }
            const auto train_set = train::encode_items(train_items, lx, mode, vocab, mc.max_len);
            const auto dev_set = train::encode_items(dev_items, lx, mode, vocab, mc.max_len);
            const fs::path dir = require_out(tr_c, "train");
            fs::create_directories(dir);
            if (tr_vocab.empty()) vocab.save(dir / "vocab.txt");
            std::ofstream log(dir / "metrics.ndjson", tr_resume.empty() ? std::ios::trunc : std::ios::app);
            train::FinetuneOptions opt;
            opt.metrics_log = &log;
            const auto trace = train::mtl_finetune(*state, train_set, dev_set, cfg.train, opt);
            train::save_checkpoint(dir / "model.ckpt", *state, cfg.train, vocab.hash());
            std::string out;
            for (const auto& r : trace) {
                if (tr_c.fmt() == eval::Format::records) {
                    json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}};
                    if (!dev_set.empty()) {
                        j["dev_loss"] = r.dev.loss;
                        j["dev_score"] = r.dev_score;
                    }
                    out += j.dump() + "\n";
                } else {
                    out += fmt::format("epoch {:>3}  train loss {:.4f}", r.epoch, r.train_loss);
                    if (!dev_set.empty()) out += fmt::format("  dev loss {:.4f}  dev macro-F1 {:.4f}", r.dev.loss, r.dev_score);
                    out += "\n";
                }
            }
            if (tr_c.fmt() == eval::Format::table && state->best_epoch)
                out += fmt::format("best dev epoch {} (score {:.4f})\n", state->best_epoch, state->best_score);
            emit(tr_c, out);
        } else if (*ev_cmd) {
            auto cfg = run_config(ev_c);
            const auto lex = load_lexicons(cfg);
            const train::Lexicons lx{&lex.symptom, &lex.gender};
            const auto vocab = text::Vocabulary::load(ev_vocab);
            auto state = train::restore_state(train::load_checkpoint(ev_ckpt), vocab.hash());
            if (!ev_last) train::restore_best(state);
            const auto test = train::encode_items(corpus::load_corpus(ev_test), lx, view_mode(ev_raw), vocab,
                                                  state.model.config().max_len);
            const auto text = eval::format_classwise(eval::classwise_report(state.model, test), ev_c.fmt());
            if (!ev_c.out.empty()) write_text(ev_c.out, text);
            emit(ev_c, text);
        } else if (*ab_cmd) {
            auto cfg = run_config(ab_c);
            const auto lex = load_lexicons(cfg);
            const train::Lexicons lx{&lex.symptom, &lex.gender};
            corpus::CorpusSplit split;
            split.train = corpus::load_corpus(ab_train);
            split.dev = corpus::load_corpus(ab_dev);
            split.test = corpus::load_corpus(ab_test);
            eval::AblationSettings s;
            s.model = cfg.model;
            s.finetune = cfg.train;
            s.pretrain = cfg.pretrain;
            s.min_freq = cfg.min_freq;
            for (std::size_t i = 0; i < ab_seeds; ++i) s.seeds.push_back(cfg.seed + i);
            std::optional<std::ofstream> log;
            if (!ab_c.out.empty()) {
                fs::create_directories(ab_c.out);
                log.emplace(fs::path(ab_c.out) / "runs.ndjson");
                s.log = &*log;
            }
            const auto report = eval::run_ablation(s, split, lx);
            const auto text = eval::format_ablation(report, ab_c.fmt());
            if (!ab_c.out.empty()) {
                write_text(fs::path(ab_c.out) / "ablation.txt", eval::format_ablation(report, eval::Format::table));
                write_text(fs::path(ab_c.out) / "ablation.ndjson", eval::format_ablation(report, eval::Format::records));
                // Per-seed symptom macro-F1, one column per arm, for `stats wilcoxon`.
                std::string tsv = "seed";
                for (const auto& row : report.rows) tsv += "\t" + std::string(eval::display_name(row.arm));
                tsv += "\n";
                for (std::size_t i = 0; i < report.seeds.size(); ++i) {
                    tsv += std::to_string(report.seeds[i]);
                    for (const auto& row : report.rows) {
                        const auto& run = row.runs.at(i);
                        tsv += "\t" + (run.failed || !run.symptom ? std::string("nan") : fmt::format("{:.6f}", run.symptom->macro_f1));
                    }
                    tsv += "\n";
                }
                write_text(fs::path(ab_c.out) / "per_seed_si_f1.tsv", tsv);
            }
            emit(ab_c, text);
        } else if (*wx_cmd) {
            if (wx_x == 0 || wx_y == 0) throw ConfigError("--x and --y are 1-based column numbers");
            std::ifstream in(wx_in);
            if (!in) throw IoError("cannot open " + wx_in);
            std::vector<double> xs, ys;
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                for (char& ch : line)
                    if (ch == ',' || ch == '\t') ch = ' ';
                std::istringstream ls(line);
                std::vector<std::string> cols;
                for (std::string tok; ls >> tok;) cols.push_back(tok);
                if (cols.empty() || cols[0][0] == '#') continue;
                if (std::max(wx_x, wx_y) > cols.size())
                    throw ParseError(wx_in + ":" + std::to_string(lineno) + ": missing column");
                try {
                    const double a = std::stod(cols[wx_x - 1]);
                    const double b = std::stod(cols[wx_y - 1]);
                    xs.push_back(a);
                    ys.push_back(b);
                } catch (const std::invalid_argument&) {
                    if (xs.empty()) continue;  // header line
                    throw ParseError(wx_in + ":" + std::to_string(lineno) + ": not a number");
                }
            }
            const auto r = eval::wilcoxon_signed_rank(xs, ys, eval::parse_alternative(wx_alt));
            const auto text = eval::format_significance(r, wx_c.fmt());
            if (!wx_c.out.empty()) write_text(wx_c.out, text);
            emit(wx_c, text);
        } else if (*gp_cmd) {
            auto cfg = run_config(gp_c);
            const auto lex = load_lexicons(cfg);
            const train::Lexicons lx{&lex.symptom, &lex.gender};
            const auto vocab = text::Vocabulary::load(gp_vocab);
            auto state = train::restore_state(train::load_checkpoint(gp_ckpt), vocab.hash());
            train::restore_best(state);
            const auto items = corpus::load_corpus(gp_in);
            const auto r = eval::gender_presence_similarity(state.model, items, lx, vocab, view_mode(gp_raw),
                                                            eval::parse_alternative(gp_alt));
            const auto text = eval::format_similarity(r, gp_c.fmt());
            if (!gp_c.out.empty()) write_text(gp_c.out, text);
            emit(gp_c, text);
        }
    } catch (const gem::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
