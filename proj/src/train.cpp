#include "gem/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gem/error.hpp"
#include "gem/labels.hpp"

namespace gem::train {

static_assert(std::endian::native == std::endian::little, "checkpoint arrays are written in host byte order");

namespace {

using nn::Tensor;
using json = nlohmann::ordered_json;

// Tags for the derived random streams.
constexpr std::uint64_t kShuffleTag = 0x5348;
constexpr std::uint64_t kDropoutTag = 0x4452;
constexpr std::uint64_t kMlmTag = 0x4d4c;
constexpr std::uint64_t kPretrainShuffleTag = 0x5053;
constexpr std::uint64_t kPretrainDropoutTag = 0x5044;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    return mix_seed(mix_seed(seed, tag), index);
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    return order;
}

void zero_grads(std::span<nn::Parameter> params) {
    for (auto& p : params) p.tensor.zero_grad();
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    const auto v = logits.values();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (v[i * c + j] > v[i * c + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

double row_nll(const Tensor& logits, std::size_t row, int target) {
    const std::size_t c = logits.dim(1);
    const auto v = logits.values().subspan(row * c, c);
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s) - v[static_cast<std::size_t>(target)];
}

json metrics_json(const eval::MetricsReport& m) {
    json j;
    j["precision"] = m.macro_precision;
    j["recall"] = m.macro_recall;
    j["f1"] = m.macro_f1;
    j["accuracy"] = m.accuracy;
    return j;
}

json model_config_json(const model::ModelConfig& c) {
    json j;
    j["variant"] = std::string(model::to_string(c.variant));
    j["n_layers"] = c.n_layers;
    j["d"] = c.d;
    j["n_heads"] = c.n_heads;
    j["d_ffn"] = c.d_ffn;
    j["vocab_size"] = c.vocab_size;
    j["max_len"] = c.max_len;
    j["dropout_p"] = c.dropout_p;
    j["fusion_value_source"] = std::string(model::to_string(c.fusion_value_source));
    j["symptom_head_input"] = std::string(model::to_string(c.symptom_head_input));
    return j;
}

model::ModelConfig model_config_from(const json& j) {
    model::ModelConfig c;
    c.variant = model::parse_variant(j.at("variant").get<std::string>());
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ffn = j.at("d_ffn").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.fusion_value_source = model::parse_fusion_value_source(j.at("fusion_value_source").get<std::string>());
    c.symptom_head_input = model::parse_symptom_head_input(j.at("symptom_head_input").get<std::string>());
    return c;
}

json train_config_json(const TrainConfig& c) {
    json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["loss_weights"] = {c.loss_weights[0], c.loss_weights[1]};
    j["seed"] = c.seed;
    j["mlm_rate"] = c.mlm_rate;
    j["mlm_split"] = {c.mlm_split[0], c.mlm_split[1], c.mlm_split[2]};
    return j;
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.loss_weights = {j.at("loss_weights").at(0).get<double>(), j.at("loss_weights").at(1).get<double>()};
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mlm_rate = j.at("mlm_rate").get<double>();
    c.mlm_split = {j.at("mlm_split").at(0).get<double>(), j.at("mlm_split").at(1).get<double>(),
                   j.at("mlm_split").at(2).get<double>()};
    return c;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void validate(const TrainConfig& c) {
    if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr must be positive");
    if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(c.eps > 0.0)) throw ConfigError("eps must be positive");
    for (double w : c.loss_weights)
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
    if (!(c.mlm_rate >= 0.0 && c.mlm_rate <= 1.0)) throw ConfigError("mlm_rate must lie in [0, 1]");
    double s = 0.0;
    for (double p : c.mlm_split) {
        if (!(p >= 0.0)) throw ConfigError("mlm_split entries must be non-negative");
        s += p;
    }
    if (std::fabs(s - 1.0) > 1e-9) throw ConfigError("mlm_split must sum to 1");
}

std::string describe(const TrainConfig& c) { return train_config_json(c).dump(); }

TrainConfig finetune_preset(std::string_view name) {
    TrainConfig c;
    if (name == "paper") {
        c.epochs = 10;
        c.lr = 1e-5;
        c.batch_size = 64;
    } else if (name == "desk") {
        c.epochs = 10;
        c.lr = 1e-3;
        c.batch_size = 32;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
    }
    return c;
}

TrainConfig pretrain_preset(std::string_view name) {
    TrainConfig c;
    if (name == "paper") {
        c.epochs = 10;
        c.batch_size = 32;
        c.lr = 1e-5;
    } else if (name == "desk") {
        c.epochs = 3;
        c.batch_size = 32;
        c.lr = 1e-3;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
    }
    return c;
}

void adam_step(std::span<nn::Parameter> params, AdamState& state, double lr, double beta1, double beta2, double eps) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (auto& p : params) {
        const std::size_t n = p.tensor.numel();
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) m.assign(n, 0.0);
        if (v.empty()) v.assign(n, 0.0);
        if (m.size() != n || v.size() != n)
            throw ShapeError("Adam moments for " + p.name + " do not match the parameter size");
        const bool has = p.tensor.has_grad();
        const auto grad = has ? p.tensor.grad() : std::span<const double>{};
        auto w = p.tensor.mutable_values();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = has ? grad[i] : 0.0;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

MlmCorruption mlm_corrupt(const text::Batch& batch, double rate, const std::array<double, 3>& split,
                          std::size_t vocab_size, std::uint64_t step_seed) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("mlm_rate must lie in [0, 1], got " + std::to_string(rate));
    const auto first = static_cast<std::size_t>(text::Vocabulary::first_content_id());
    if (split[1] > 0.0 && vocab_size <= first)
        throw ConfigError("random-token replacement needs content tokens in the vocabulary");
    MlmCorruption out;
    out.batch = batch;
    Rng rng(step_seed);
    for (std::size_t k = 0; k < batch.ids.size(); ++k) {
        const int id = batch.ids[k];
        if (!batch.pad_mask[k] || id < static_cast<int>(first)) continue;
        if (!(rng.uniform() < rate)) continue;
        out.positions.push_back(k);
        out.targets.push_back(id);
        const double r = rng.uniform();
        if (r < split[0]) {
            out.batch.ids[k] = text::kMask;
            ++out.category_counts[0];
        } else if (r < split[0] + split[1]) {
            out.batch.ids[k] = static_cast<int>(first + rng.below(vocab_size - first));
            ++out.category_counts[1];
        } else {
            ++out.category_counts[2];
        }
    }
    return out;
}

PretrainResult mlm_pretrain(model::Encoder& encoder, const model::ModelConfig& mc,
                            std::span<const text::TokenSequence> stream, const TrainConfig& config) {
    validate(config);
    if (stream.size() < config.batch_size)
        throw ValidationError("pretraining corpus has " + std::to_string(stream.size()) +
                              " sequences, fewer than one batch of " + std::to_string(config.batch_size));
    PretrainResult result;
    if (config.epochs == 0) return result;

    const std::size_t V = mc.vocab_size;
    Tensor bias = Tensor::zeros({V}, true);
    auto params = encoder.parameters();
    params.push_back({encoder.prefix + ".mlm_bias", bias});
    AdamState adam;
    std::uint64_t step = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto order = shuffled_order(stream.size(), stream_seed(config.seed, kPretrainShuffleTag, epoch));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<text::TokenSequence> seqs;
            for (std::size_t i = start; i < end; ++i) seqs.push_back(stream[order[i]]);
            const auto batch = text::make_batch(seqs);
            const auto cor =
                mlm_corrupt(batch, config.mlm_rate, config.mlm_split, V, stream_seed(config.seed, kMlmTag, step));
            Rng drop_rng(stream_seed(config.seed, kPretrainDropoutTag, step));
            ++step;
            if (cor.positions.empty()) continue;

            const model::ForwardContext ctx{true, &drop_rng};
            const Tensor h = model::encoder_forward(encoder, mc, cor.batch, ctx);
            const Tensor flat = nn::reshape(h, {batch.batch_size * batch.seq_len, mc.d});
            const Tensor sel = nn::gather_rows(flat, cor.positions);
            const Tensor logits = nn::add_bias(nn::matmul(sel, nn::transpose(encoder.tok_emb)), bias);
            const Tensor loss = nn::cross_entropy(logits, cor.targets);
            const double value = loss.item();
            if (!std::isfinite(value))
                throw NumericError("non-finite MLM loss at pretraining step " + std::to_string(step - 1));
            zero_grads(params);
            nn::backward(loss);
            adam_step(params, adam, config.lr, config.beta1, config.beta2, config.eps);
            loss_sum += value;
            ++batches;
        }
        result.epoch_losses.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    }
    zero_grads(params);
    return result;
}

std::string_view to_string(ViewMode m) { return m == ViewMode::masked ? "masked" : "raw"; }

knowledge::MaskedViews item_views(const corpus::LabeledItem& item, const Lexicons& lexicons, ViewMode mode) {
    if (mode == ViewMode::raw) return knowledge::raw_views(item.item.text);
    if (!lexicons.symptom || !lexicons.gender) throw ConfigError("masked views need symptom and gender lexicons");
    return knowledge::build_views(item.item.text, *lexicons.symptom, *lexicons.gender);
}

text::Vocabulary build_vocabulary(std::span<const corpus::LabeledItem> items, const Lexicons& lexicons,
                                  ViewMode mode, int min_freq) {
    std::vector<std::string> texts;
    texts.reserve(items.size() * 2);
    for (const auto& it : items) {
        auto v = item_views(it, lexicons, mode);
        texts.push_back(std::move(v.symptom_view));
        texts.push_back(std::move(v.gender_view));
    }
    return text::Vocabulary::build(texts, min_freq);
}

EncodedSet encode_items(std::span<const corpus::LabeledItem> items, const Lexicons& lexicons, ViewMode mode,
                        const text::Vocabulary& vocab, std::size_t max_len) {
    EncodedSet out;
    out.reserve(items.size());
    for (const auto& it : items) {
        const auto v = item_views(it, lexicons, mode);
        EncodedItem e;
        e.symptom_view = text::encode(v.symptom_view, vocab, max_len);
        e.gender_view = text::encode(v.gender_view, vocab, max_len);
        if (it.symptom) e.symptom = static_cast<int>(*it.symptom);
        if (it.gender) e.gender = static_cast<int>(*it.gender);
        e.kind = it.item.kind;
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<text::TokenSequence> view_stream(const EncodedSet& set, model::EncoderRole role) {
    std::vector<text::TokenSequence> out;
    out.reserve(set.size());
    for (const auto& e : set) out.push_back(role == model::EncoderRole::symptom ? e.symptom_view : e.gender_view);
    return out;
}

std::map<std::string, PretrainResult> pretrain_model(model::GemModel& m, const EncodedSet& items,
                                                     const TrainConfig& config) {
    std::map<std::string, PretrainResult> out;
    const auto variant = m.config().variant;
    std::vector<model::EncoderRole> roles;
    if (variant == model::Variant::mtl_shared) {
        roles = {model::EncoderRole::symptom};
    } else {
        if (m.has_encoder(model::EncoderRole::symptom)) roles.push_back(model::EncoderRole::symptom);
        if (m.has_encoder(model::EncoderRole::gender)) roles.push_back(model::EncoderRole::gender);
    }
    for (auto role : roles) {
        TrainConfig c = config;
        c.seed = mix_seed(config.seed, role == model::EncoderRole::symptom ? 0x53 : 0x47);
        auto& enc = m.encoder(role);
        const auto stream = view_stream(items, role);
        out.emplace(enc.prefix, mlm_pretrain(enc, m.config(), stream, c));
    }
    return out;
}

Predictions predict_set(const model::GemModel& m, const EncodedSet& set, std::size_t batch_size) {
    nn::NoGradGuard guard;
    Predictions out;
    double s_loss = 0.0, g_loss = 0.0;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        const std::size_t end = std::min(set.size(), start + batch_size);
        std::vector<text::TokenSequence> sv, gv;
        for (std::size_t i = start; i < end; ++i) {
            sv.push_back(set[i].symptom_view);
            gv.push_back(set[i].gender_view);
        }
        const auto batch = text::make_paired_batch(sv, gv);
        const auto pred = m.predict(batch, model::ForwardContext{});
        if (pred.has_symptom()) {
            const auto& logits = pred.symptom_logits();
            for (int p : argmax_rows(logits)) out.symptom.push_back(p);
            for (std::size_t i = start; i < end; ++i)
                if (set[i].symptom) {
                    s_loss += row_nll(logits, i - start, *set[i].symptom);
                    ++out.symptom_labeled;
                }
        }
        if (pred.has_gender()) {
            const auto& logits = pred.gender_logits();
            for (int p : argmax_rows(logits)) out.gender.push_back(p);
            for (std::size_t i = start; i < end; ++i)
                if (set[i].gender) {
                    g_loss += row_nll(logits, i - start, *set[i].gender);
                    ++out.gender_labeled;
                }
        }
    }
    if (out.symptom_labeled) out.symptom_loss = s_loss / static_cast<double>(out.symptom_labeled);
    if (out.gender_labeled) out.gender_loss = g_loss / static_cast<double>(out.gender_labeled);
    return out;
}

ModelGenderClassifier::ModelGenderClassifier(const model::GemModel& model, const text::Vocabulary& vocab,
                                             Lexicons lexicons, ViewMode mode)
    : model_(model), vocab_(vocab), lexicons_(lexicons), mode_(mode) {
    if (!model::uses_gender(model.config().variant))
        throw ConfigError("variant " + std::string(model::to_string(model.config().variant)) + " has no gender head");
    if (model.config().vocab_size != vocab.size())
        throw IncompatibilityError("labeler vocabulary does not match the model");
}

std::vector<Gender> ModelGenderClassifier::classify(std::span<const std::string> texts) const {
    std::vector<corpus::LabeledItem> items(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        items[i].item.id = std::to_string(i);
        items[i].item.text = texts[i];
    }
    const auto set = encode_items(items, lexicons_, mode_, vocab_, model_.config().max_len);
    std::vector<Gender> out;
    for (int g : predict_set(model_, set).gender) out.push_back(static_cast<Gender>(g));
    return out;
}

TaskMetrics evaluate_set(const model::GemModel& m, const EncodedSet& set, const TrainConfig& config) {
    TaskMetrics out;
    if (set.empty()) return out;
    const auto pred = predict_set(m, set);
    auto names = [](auto const& arr) { return std::vector<std::string>(arr.begin(), arr.end()); };
    if (!pred.symptom.empty() && pred.symptom_labeled) {
        std::vector<int> p, g;
        for (std::size_t i = 0; i < set.size(); ++i)
            if (set[i].symptom) {
                p.push_back(pred.symptom[i]);
                g.push_back(*set[i].symptom);
            }
        out.symptom = eval::compute_metrics(p, g, names(kSymptomNames));
        out.loss += config.loss_weights[0] * pred.symptom_loss;
    }
    if (!pred.gender.empty() && pred.gender_labeled) {
        std::vector<int> p, g;
        for (std::size_t i = 0; i < set.size(); ++i)
            if (set[i].gender) {
                p.push_back(pred.gender[i]);
                g.push_back(*set[i].gender);
            }
        out.gender = eval::compute_metrics(p, g, names(kGenderNames));
        out.loss += config.loss_weights[1] * pred.gender_loss;
    }
    return out;
}

double selection_score(const TaskMetrics& m) {
    double s = 0.0;
    int n = 0;
    if (m.symptom) {
        s += m.symptom->macro_f1;
        ++n;
    }
    if (m.gender) {
        s += m.gender->macro_f1;
        ++n;
    }
    return n ? s / n : 0.0;
}

std::vector<EpochRecord> mtl_finetune(TrainState& state, const EncodedSet& train, const EncodedSet& dev,
                                      const TrainConfig& config, const FinetuneOptions& options) {
    validate(config);
    if (train.empty()) throw ValidationError("training set is empty");
    const auto variant = state.model.config().variant;
    const bool use_s = model::uses_symptom(variant) && config.loss_weights[0] > 0.0;
    const bool use_g = model::uses_gender(variant) && config.loss_weights[1] > 0.0;
    if (!use_s && !use_g) throw ConfigError("loss weights disable every task this variant predicts");
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (use_s && !train[i].symptom)
            throw ValidationError("training item " + std::to_string(i) + " lacks the symptom label required by " +
                                  std::string(model::to_string(variant)));
        if (use_g && !train[i].gender)
            throw ValidationError("training item " + std::to_string(i) + " lacks the gender label required by " +
                                  std::string(model::to_string(variant)));
    }

    auto params = state.model.parameters();
    std::vector<EpochRecord> trace;
    for (std::size_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
        const auto order = shuffled_order(train.size(), stream_seed(config.seed, kShuffleTag, epoch));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<text::TokenSequence> sv, gv;
            std::vector<int> sl, gl;
            for (std::size_t i = start; i < end; ++i) {
                const auto& e = train[order[i]];
                sv.push_back(e.symptom_view);
                gv.push_back(e.gender_view);
                if (use_s) sl.push_back(*e.symptom);
                if (use_g) gl.push_back(*e.gender);
            }
            const auto batch = text::make_paired_batch(sv, gv);
            Rng drop_rng(stream_seed(config.seed, kDropoutTag, state.step));
            const auto pred = state.model.predict(batch, model::ForwardContext{true, &drop_rng});
            Tensor loss;
            if (use_s) loss = nn::scale(nn::cross_entropy(pred.symptom_logits(), sl), config.loss_weights[0]);
            if (use_g) {
                const Tensor lg = nn::scale(nn::cross_entropy(pred.gender_logits(), gl), config.loss_weights[1]);
                loss = loss.defined() ? nn::add(loss, lg) : lg;
            }
            const double value = loss.item();
            if (!std::isfinite(value))
                throw NumericError("non-finite training loss at step " + std::to_string(state.step) + " (epoch " +
                                   std::to_string(epoch) + ")");
            zero_grads(params);
            nn::backward(loss);
            adam_step(params, state.adam, config.lr, config.beta1, config.beta2, config.eps);
            ++state.step;
            loss_sum += value;
            ++batches;
        }
        zero_grads(params);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        if (!dev.empty()) {
            rec.dev = evaluate_set(state.model, dev, config);
            rec.dev_score = selection_score(rec.dev);
            if (rec.dev_score > state.best_score) {
                state.best_score = rec.dev_score;
                state.best_epoch = epoch;
                state.best_params = state.model.state();
            }
        }
        state.epoch = epoch;

        if (options.metrics_log) {
            json t;
            t["epoch"] = epoch;
            t["split"] = "train";
            t["loss"] = rec.train_loss;
            *options.metrics_log << t.dump() << '\n';
            if (!dev.empty()) {
                json d;
                d["epoch"] = epoch;
                d["split"] = "dev";
                d["loss"] = rec.dev.loss;
                if (rec.dev.symptom) d["symptom"] = metrics_json(*rec.dev.symptom);
                if (rec.dev.gender) d["gender"] = metrics_json(*rec.dev.gender);
                d["score"] = rec.dev_score;
                *options.metrics_log << d.dump() << '\n';
            }
            options.metrics_log->flush();
        }
        trace.push_back(rec);
        if (options.on_epoch && !options.on_epoch(trace.back())) break;
    }
    return trace;
}

void restore_best(TrainState& state) {
    if (!state.best_params.empty()) state.model.load_state(state.best_params);
}

std::uint64_t config_digest(const model::ModelConfig& config) { return fnv1a(model::describe(config)); }

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& config, std::uint64_t vocab_hash) {
    Checkpoint c;
    c.model_config = state.model.config();
    c.train_config = config;
    c.vocab_hash = vocab_hash;
    c.epoch = state.epoch;
    c.step = state.step;
    c.adam_t = state.adam.t;
    c.best_score = state.best_score;
    c.best_epoch = state.best_epoch;
    c.params = state.model.state();
    c.adam_m = state.adam.m;
    c.adam_v = state.adam.v;
    c.best_params = state.best_params;
    return c;
}

std::string serialize_checkpoint(const Checkpoint& c) {
    json meta;
    meta["model"] = model_config_json(c.model_config);
    meta["train"] = train_config_json(c.train_config);
    meta["epoch"] = c.epoch;
    meta["step"] = c.step;
    meta["adam_t"] = c.adam_t;
    if (std::isfinite(c.best_score))
        meta["best_score"] = c.best_score;
    else
        meta["best_score"] = nullptr;
    meta["best_epoch"] = c.best_epoch;
    const std::string meta_text = meta.dump();

    std::vector<std::pair<std::string, const std::vector<double>*>> arrays;
    for (const auto& [k, v] : c.params) arrays.emplace_back("param." + k, &v);
    for (const auto& [k, v] : c.adam_m) arrays.emplace_back("adam.m." + k, &v);
    for (const auto& [k, v] : c.adam_v) arrays.emplace_back("adam.v." + k, &v);
    for (const auto& [k, v] : c.best_params) arrays.emplace_back("best." + k, &v);

    std::string out = "GEM-CHECKPOINT v1\n";
    out += "config-digest " + hex64(config_digest(c.model_config)) + "\n";
    out += "vocab-hash " + hex64(c.vocab_hash) + "\n";
    out += "meta " + std::to_string(meta_text.size()) + "\n" + meta_text + "\n";
    out += "arrays " + std::to_string(arrays.size()) + "\n";
    for (const auto& [name, values] : arrays) {
        out += name + " " + std::to_string(values->size()) + "\n";
        const std::size_t nbytes = values->size() * sizeof(double);
        const std::size_t at = out.size();
        out.resize(at + nbytes);
        if (nbytes) std::memcpy(out.data() + at, values->data(), nbytes);
        out += "\n";
    }
    out += "checksum " + hex64(fnv1a(out)) + "\n";
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    std::size_t pos = 0;
    auto read_line = [&](const char* what) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw ParseError(std::string("checkpoint truncated while reading ") + what);
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    auto expect_prefix = [](const std::string& line, const std::string& prefix) {
        if (line.rfind(prefix, 0) != 0) throw ParseError("checkpoint: expected '" + prefix + "', got '" + line.substr(0, 40) + "'");
        return line.substr(prefix.size());
    };
    auto parse_hex = [](const std::string& s) {
        if (s.size() != 16) throw ParseError("checkpoint: malformed hash '" + s + "'");
        try {
            std::size_t used = 0;
            const auto v = std::stoull(s, &used, 16);
            if (used != s.size()) throw ParseError("checkpoint: malformed hash '" + s + "'");
            return static_cast<std::uint64_t>(v);
        } catch (const std::logic_error&) {
            throw ParseError("checkpoint: malformed hash '" + s + "'");
        }
    };
    auto parse_count = [](const std::string& s) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(s, &used);
            if (used != s.size()) throw ParseError("checkpoint: malformed count '" + s + "'");
            return static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
            throw ParseError("checkpoint: malformed count '" + s + "'");
        }
    };

    // The checksum covers every byte before its own line.
    const auto tail = bytes.rfind("checksum ");
    if (tail == std::string::npos || bytes.size() != tail + 9 + 16 + 1 || bytes.back() != '\n')
        throw ParseError("checkpoint: missing or malformed checksum line");
    if (parse_hex(bytes.substr(tail + 9, 16)) != fnv1a(bytes.substr(0, tail)))
        throw ParseError("checkpoint: checksum mismatch (file corrupted)");

    if (read_line("header") != "GEM-CHECKPOINT v1") throw ParseError("checkpoint: unknown header or version");
    const auto digest = parse_hex(expect_prefix(read_line("config digest"), "config-digest "));
    Checkpoint c;
    c.vocab_hash = parse_hex(expect_prefix(read_line("vocabulary hash"), "vocab-hash "));
    const std::size_t meta_len = parse_count(expect_prefix(read_line("metadata length"), "meta "));
    if (pos + meta_len + 1 > tail) throw ParseError("checkpoint truncated in metadata");
    try {
        const auto meta = json::parse(bytes.substr(pos, meta_len));
        c.model_config = model_config_from(meta.at("model"));
        c.train_config = train_config_from(meta.at("train"));
        c.epoch = meta.at("epoch").get<std::size_t>();
        c.step = meta.at("step").get<std::uint64_t>();
        c.adam_t = meta.at("adam_t").get<std::uint64_t>();
        const auto& bs = meta.at("best_score");
        c.best_score = bs.is_null() ? -std::numeric_limits<double>::infinity() : bs.get<double>();
        c.best_epoch = meta.at("best_epoch").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what());
    }
    pos += meta_len;
    if (bytes[pos] != '\n') throw ParseError("checkpoint: metadata length mismatch");
    ++pos;
    if (config_digest(c.model_config) != digest) throw ParseError("checkpoint: config digest does not match metadata");

    const std::size_t count = parse_count(expect_prefix(read_line("array count"), "arrays "));
    for (std::size_t a = 0; a < count; ++a) {
        const std::string head = read_line("array header");
        const auto sp = head.rfind(' ');
        if (sp == std::string::npos) throw ParseError("checkpoint: malformed array header '" + head + "'");
        const std::string name = head.substr(0, sp);
        const std::size_t n = parse_count(head.substr(sp + 1));
        const std::size_t nbytes = n * sizeof(double);
        if (pos + nbytes + 1 > tail) throw ParseError("checkpoint truncated in array " + name);
        std::vector<double> values(n);
        if (nbytes) std::memcpy(values.data(), bytes.data() + pos, nbytes);
        pos += nbytes;
        if (bytes[pos] != '\n') throw ParseError("checkpoint: array " + name + " has the wrong length");
        ++pos;
        std::map<std::string, std::vector<double>>* target = nullptr;
        std::string key;
        for (auto [prefix, dest] : {std::pair{"param.", &c.params}, std::pair{"adam.m.", &c.adam_m},
                                    std::pair{"adam.v.", &c.adam_v}, std::pair{"best.", &c.best_params}}) {
            const std::string p = prefix;
            if (name.rfind(p, 0) == 0) {
                target = dest;
                key = name.substr(p.size());
                break;
            }
        }
        if (!target) throw ParseError("checkpoint: unknown array group in '" + name + "'");
        if (!target->emplace(key, std::move(values)).second) throw ParseError("checkpoint: duplicate array " + name);
    }
    if (pos != tail) throw ParseError("checkpoint: trailing bytes before checksum");
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config,
                     std::uint64_t vocab_hash) {
    save_checkpoint(path, make_checkpoint(state, config, vocab_hash));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_checkpoint(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

TrainState restore_state(const Checkpoint& c, std::optional<std::uint64_t> expected_vocab_hash) {
    if (expected_vocab_hash && *expected_vocab_hash != c.vocab_hash)
        throw IncompatibilityError("checkpoint vocabulary hash " + hex64(c.vocab_hash) +
                                   " does not match the current vocabulary " + hex64(*expected_vocab_hash));
    TrainState state(model::GemModel(c.model_config, 0));
    const auto names = state.model.state();
    for (const auto& [k, v] : c.params)
        if (!names.count(k)) throw IncompatibilityError("checkpoint has unknown parameter " + k);
    state.model.load_state(c.params, true);
    state.adam.m = c.adam_m;
    state.adam.v = c.adam_v;
    state.adam.t = c.adam_t;
    state.epoch = c.epoch;
    state.step = c.step;
    state.best_score = c.best_score;
    state.best_epoch = c.best_epoch;
    state.best_params = c.best_params;
    return state;
}

}  // namespace gem::train
