#include "gem/model.hpp"

#include <cmath>
#include <sstream>

#include "gem/error.hpp"
#include "gem/labels.hpp"

namespace gem::model {
namespace {

using nn::Tensor;

Tensor normal_tensor(nn::Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(nn::numel(shape));
    for (double& x : v) x = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}
Tensor constant_tensor(nn::Shape shape, double value) {
    return Tensor::from(shape, std::vector<double>(nn::numel(shape), value), true);
}

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
    return {normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), constant_tensor({out}, 0.0)};
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return nn::add_bias(nn::matmul(x, w), b); }

Tensor drop(const Tensor& x, double p, const ForwardContext& ctx) {
    if (!ctx.training || p <= 0.0) return x;
    if (!ctx.rng) throw ConfigError("training forward pass needs a random stream for dropout");
    return nn::dropout(x, p, *ctx.rng, true);
}

void push(std::vector<nn::Parameter>& out, const std::string& name, const Tensor& t) { out.push_back({name, t}); }

Encoder clone_encoder(const Encoder& e) {
    Encoder c;
    c.prefix = e.prefix;
    auto cp = [](const Tensor& t) { return t.detach(true); };
    c.tok_emb = cp(e.tok_emb);
    c.pos_emb = cp(e.pos_emb);
    for (const auto& l : e.layers) {
        c.layers.push_back({cp(l.ln1_gain), cp(l.ln1_bias), cp(l.wq), cp(l.bq), cp(l.wk), cp(l.bk), cp(l.wv),
                            cp(l.bv), cp(l.wo), cp(l.bo), cp(l.ln2_gain), cp(l.ln2_bias), cp(l.w1), cp(l.b1),
                            cp(l.w2), cp(l.b2)});
    }
    c.final_gain = cp(e.final_gain);
    c.final_bias = cp(e.final_bias);
    return c;
}

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::gem:
            return "gem";
        case Variant::stl_symptom:
            return "stl_symptom";
        case Variant::stl_gender:
            return "stl_gender";
        case Variant::mtl_shared:
            return "mtl_shared";
        case Variant::concat_ablation:
            return "concat_ablation";
    }
    return "?";
}

Variant parse_variant(std::string_view s) {
    for (auto v : {Variant::gem, Variant::stl_symptom, Variant::stl_gender, Variant::mtl_shared,
                   Variant::concat_ablation})
        if (to_string(v) == s) return v;
    throw ConfigError("unknown model variant '" + std::string(s) + "'");
}

std::string_view to_string(FusionValueSource v) { return v == FusionValueSource::symptom ? "symptom" : "gender"; }

FusionValueSource parse_fusion_value_source(std::string_view s) {
    if (s == "symptom") return FusionValueSource::symptom;
    if (s == "gender") return FusionValueSource::gender;
    throw ConfigError("unknown fusion value source '" + std::string(s) + "'");
}

std::string_view to_string(SymptomHeadInput v) { return v == SymptomHeadInput::fused ? "fused" : "encoder"; }

SymptomHeadInput parse_symptom_head_input(std::string_view s) {
    if (s == "fused") return SymptomHeadInput::fused;
    if (s == "encoder") return SymptomHeadInput::encoder;
    throw ConfigError("unknown symptom head input '" + std::string(s) + "'");
}

void validate(const ModelConfig& c) {
    if (c.d == 0 || c.n_heads == 0 || c.d % c.n_heads != 0)
        throw ConfigError("hidden size d=" + std::to_string(c.d) + " must be a positive multiple of n_heads=" +
                          std::to_string(c.n_heads));
    if (c.d_ffn == 0) throw ConfigError("d_ffn must be positive");
    if (c.vocab_size <= static_cast<std::size_t>(text::Vocabulary::first_content_id()))
        throw ConfigError("vocab_size must cover the special and concept tokens");
    if (c.max_len < 3) throw ConfigError("max_len must be at least 3");
    if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
}

std::string describe(const ModelConfig& c) {
    std::ostringstream os;
    os << "variant=" << to_string(c.variant) << ";n_layers=" << c.n_layers << ";d=" << c.d
       << ";n_heads=" << c.n_heads << ";d_ffn=" << c.d_ffn << ";vocab_size=" << c.vocab_size
       << ";max_len=" << c.max_len << ";dropout_p=" << c.dropout_p
       << ";fusion_value_source=" << to_string(c.fusion_value_source)
       << ";symptom_head_input=" << to_string(c.symptom_head_input);
    return os.str();
}

bool uses_symptom(Variant v) { return v != Variant::stl_gender; }
bool uses_gender(Variant v) { return v != Variant::stl_symptom; }

std::vector<nn::Parameter> Encoder::parameters() const {
    std::vector<nn::Parameter> out;
    push(out, prefix + ".tok_emb", tok_emb);
    push(out, prefix + ".pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = prefix + ".layer" + std::to_string(i);
        push(out, p + ".ln1.gain", l.ln1_gain);
        push(out, p + ".ln1.bias", l.ln1_bias);
        push(out, p + ".attn.wq", l.wq);
        push(out, p + ".attn.bq", l.bq);
        push(out, p + ".attn.wk", l.wk);
        push(out, p + ".attn.bk", l.bk);
        push(out, p + ".attn.wv", l.wv);
        push(out, p + ".attn.bv", l.bv);
        push(out, p + ".attn.wo", l.wo);
        push(out, p + ".attn.bo", l.bo);
        push(out, p + ".ln2.gain", l.ln2_gain);
        push(out, p + ".ln2.bias", l.ln2_bias);
        push(out, p + ".ffn.w1", l.w1);
        push(out, p + ".ffn.b1", l.b1);
        push(out, p + ".ffn.w2", l.w2);
        push(out, p + ".ffn.b2", l.b2);
    }
    if (!layers.empty()) {
        push(out, prefix + ".final_ln.gain", final_gain);
        push(out, prefix + ".final_ln.bias", final_bias);
    }
    return out;
}

Encoder init_encoder(const std::string& prefix, const ModelConfig& c, Rng& rng) {
    Encoder e;
    e.prefix = prefix;
    e.tok_emb = normal_tensor({c.vocab_size, c.d}, 0.1, rng);
    e.pos_emb = normal_tensor({c.max_len, c.d}, 0.1, rng);
    const double sd = 1.0 / std::sqrt(static_cast<double>(c.d));
    const double sd_ffn = 1.0 / std::sqrt(static_cast<double>(c.d_ffn));
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        LayerParams l;
        l.ln1_gain = constant_tensor({c.d}, 1.0);
        l.ln1_bias = constant_tensor({c.d}, 0.0);
        l.wq = normal_tensor({c.d, c.d}, sd, rng);
        l.bq = constant_tensor({c.d}, 0.0);
        l.wk = normal_tensor({c.d, c.d}, sd, rng);
        l.bk = constant_tensor({c.d}, 0.0);
        l.wv = normal_tensor({c.d, c.d}, sd, rng);
        l.bv = constant_tensor({c.d}, 0.0);
        l.wo = normal_tensor({c.d, c.d}, sd, rng);
        l.bo = constant_tensor({c.d}, 0.0);
        l.ln2_gain = constant_tensor({c.d}, 1.0);
        l.ln2_bias = constant_tensor({c.d}, 0.0);
        l.w1 = normal_tensor({c.d, c.d_ffn}, sd, rng);
        l.b1 = constant_tensor({c.d_ffn}, 0.0);
        l.w2 = normal_tensor({c.d_ffn, c.d}, sd_ffn, rng);
        l.b2 = constant_tensor({c.d}, 0.0);
        e.layers.push_back(std::move(l));
    }
    e.final_gain = constant_tensor({c.d}, 1.0);
    e.final_bias = constant_tensor({c.d}, 0.0);
    return e;
}

Tensor encoder_forward(const Encoder& enc, const ModelConfig& c, const text::Batch& batch, const ForwardContext& ctx) {
    const std::size_t B = batch.batch_size, T = batch.seq_len, d = c.d;
    if (T > c.max_len)
        throw ShapeError("sequence length " + std::to_string(T) + " exceeds max_len " + std::to_string(c.max_len));
    for (int id : batch.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
            throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(c.vocab_size));

    std::vector<int> positions(B * T);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) positions[b * T + t] = static_cast<int>(t);
    Tensor x = nn::add(nn::embedding(enc.tok_emb, batch.ids, {B, T}), nn::embedding(enc.pos_emb, positions, {B, T}));
    x = drop(x, c.dropout_p, ctx);

    const std::size_t H = c.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / H));
    for (const auto& l : enc.layers) {
        const Tensor h = nn::layer_norm(x, l.ln1_gain, l.ln1_bias);
        const Tensor q = nn::split_heads(linear(h, l.wq, l.bq), H);
        const Tensor k = nn::split_heads(linear(h, l.wk, l.bk), H);
        const Tensor v = nn::split_heads(linear(h, l.wv, l.bv), H);
        const Tensor scores = nn::scale(nn::bmm(q, k, true), inv_sqrt_dh);
        const Tensor weights = nn::masked_softmax(scores, batch.pad_mask, H);
        const Tensor context = nn::merge_heads(nn::bmm(weights, v, false), H);
        x = nn::add(x, drop(linear(context, l.wo, l.bo), c.dropout_p, ctx));

        const Tensor h2 = nn::layer_norm(x, l.ln2_gain, l.ln2_bias);
        const Tensor f = linear(nn::gelu(linear(h2, l.w1, l.b1)), l.w2, l.b2);
        x = nn::add(x, drop(f, c.dropout_p, ctx));
    }
    if (!enc.layers.empty()) x = nn::layer_norm(x, enc.final_gain, enc.final_bias);
    return x;
}

FusionOutput fuse(const Tensor& e_s, std::span<const std::uint8_t> symptom_pad_mask, const Tensor& e_g,
                  FusionValueSource value_source) {
    if (e_s.rank() != 3 || e_g.rank() != 3 || e_s.dim(0) != e_g.dim(0) || e_s.dim(2) != e_g.dim(2))
        throw ShapeError("fuse: incompatible encodings " + nn::shape_str(e_s.shape()) + " and " +
                         nn::shape_str(e_g.shape()));
    if (value_source == FusionValueSource::gender && e_s.dim(1) != e_g.dim(1))
        throw ShapeError("fuse: gender-valued attention needs equal lengths, got " + std::to_string(e_s.dim(1)) +
                         " and " + std::to_string(e_g.dim(1)));
    const double d = static_cast<double>(e_s.dim(2));
    const Tensor scores = nn::scale(nn::bmm(e_g, e_s, true), 1.0 / std::sqrt(d));
    FusionOutput out;
    out.attn_weights = nn::masked_softmax(scores, symptom_pad_mask, 1);
    out.a = nn::bmm(out.attn_weights, value_source == FusionValueSource::symptom ? e_s : e_g, false);
    out.h_g = nn::add(e_g, out.a);
    return out;
}

const Tensor& Prediction::symptom_logits() const {
    if (!symptom_) throw ConfigError("this model variant produces no symptom logits");
    return *symptom_;
}

const Tensor& Prediction::gender_logits() const {
    if (!gender_) throw ConfigError("this model variant produces no gender logits");
    return *gender_;
}

GemModel::GemModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    validate(config_);
    Rng rng(mix_seed(seed, 0x6e6e));
    const std::size_t d = config_.d;
    switch (config_.variant) {
        case Variant::gem:
            s_encoder_ = init_encoder("s_encoder", config_, rng);
            g_encoder_ = init_encoder("g_encoder", config_, rng);
            symptom_head_ = init_linear(d, kNumSymptoms, rng);
            gender_head_ = init_linear(d, kNumGenders, rng);
            break;
        case Variant::concat_ablation:
            s_encoder_ = init_encoder("s_encoder", config_, rng);
            g_encoder_ = init_encoder("g_encoder", config_, rng);
            symptom_head_ = init_linear(2 * d, kNumSymptoms, rng);
            gender_head_ = init_linear(2 * d, kNumGenders, rng);
            break;
        case Variant::stl_symptom:
            s_encoder_ = init_encoder("s_encoder", config_, rng);
            symptom_head_ = init_linear(d, kNumSymptoms, rng);
            break;
        case Variant::stl_gender:
            g_encoder_ = init_encoder("g_encoder", config_, rng);
            gender_head_ = init_linear(d, kNumGenders, rng);
            break;
        case Variant::mtl_shared:
            s_encoder_ = init_encoder("encoder", config_, rng);
            symptom_head_ = init_linear(d, kNumSymptoms, rng);
            gender_head_ = init_linear(d, kNumGenders, rng);
            break;
    }
}

GemModel::GemModel(const GemModel& other, CloneTag) : config_(other.config_) {
    auto cp = [](const Tensor& t) { return t.detach(true); };
    if (other.s_encoder_) s_encoder_ = clone_encoder(*other.s_encoder_);
    if (other.g_encoder_) g_encoder_ = clone_encoder(*other.g_encoder_);
    if (other.symptom_head_) symptom_head_ = Linear{cp(other.symptom_head_->weight), cp(other.symptom_head_->bias)};
    if (other.gender_head_) gender_head_ = Linear{cp(other.gender_head_->weight), cp(other.gender_head_->bias)};
}

GemModel GemModel::clone() const { return GemModel(*this, CloneTag{}); }

std::vector<nn::Parameter> GemModel::parameters() const {
    std::vector<nn::Parameter> out;
    if (s_encoder_)
        for (auto& p : s_encoder_->parameters()) out.push_back(std::move(p));
    if (g_encoder_)
        for (auto& p : g_encoder_->parameters()) out.push_back(std::move(p));
    if (symptom_head_) {
        push(out, "symptom_head.weight", symptom_head_->weight);
        push(out, "symptom_head.bias", symptom_head_->bias);
    }
    if (gender_head_) {
        push(out, "gender_head.weight", gender_head_->weight);
        push(out, "gender_head.bias", gender_head_->bias);
    }
    return out;
}

std::size_t GemModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

Prediction GemModel::predict(const text::PairedBatch& batch, const ForwardContext& ctx) const {
    if (batch.symptom.batch_size != batch.gender.batch_size)
        throw ShapeError("paired batch with different batch sizes");
    Prediction out;
    const double p = config_.dropout_p;
    auto head = [&](const Linear& l, const Tensor& x) { return linear(drop(x, p, ctx), l.weight, l.bias); };

    switch (config_.variant) {
        case Variant::gem: {
            const Tensor e_s = encoder_forward(*s_encoder_, config_, batch.symptom, ctx);
            const Tensor e_g = encoder_forward(*g_encoder_, config_, batch.gender, ctx);
            FusionOutput f = fuse(e_s, batch.symptom.pad_mask, e_g, config_.fusion_value_source);
            const Tensor fused_cls = nn::select_position(f.h_g, 0);
            const Tensor s_cls = nn::select_position(e_s, 0);
            out.symptom_ = head(*symptom_head_,
                                config_.symptom_head_input == SymptomHeadInput::fused ? fused_cls : s_cls);
            out.gender_ = head(*gender_head_, fused_cls);
            out.symptom_cls_ = s_cls;
            out.fusion_ = std::move(f);
            break;
        }
        case Variant::concat_ablation: {
            const Tensor e_s = encoder_forward(*s_encoder_, config_, batch.symptom, ctx);
            const Tensor e_g = encoder_forward(*g_encoder_, config_, batch.gender, ctx);
            const Tensor s_cls = nn::select_position(e_s, 0);
            const Tensor joint = nn::concat_last(s_cls, nn::select_position(e_g, 0));
            out.symptom_ = head(*symptom_head_, joint);
            out.gender_ = head(*gender_head_, joint);
            out.symptom_cls_ = s_cls;
            break;
        }
        case Variant::stl_symptom: {
            const Tensor e_s = encoder_forward(*s_encoder_, config_, batch.symptom, ctx);
            const Tensor s_cls = nn::select_position(e_s, 0);
            out.symptom_ = head(*symptom_head_, s_cls);
            out.symptom_cls_ = s_cls;
            break;
        }
        case Variant::stl_gender: {
            const Tensor e_g = encoder_forward(*g_encoder_, config_, batch.gender, ctx);
            out.gender_ = head(*gender_head_, nn::select_position(e_g, 0));
            break;
        }
        case Variant::mtl_shared: {
            const Tensor e = encoder_forward(*s_encoder_, config_, batch.symptom, ctx);
            const Tensor cls = nn::select_position(e, 0);
            out.symptom_ = head(*symptom_head_, cls);
            out.gender_ = head(*gender_head_, cls);
            out.symptom_cls_ = cls;
            break;
        }
    }
    return out;
}

bool GemModel::has_encoder(EncoderRole role) const {
    if (config_.variant == Variant::mtl_shared) return true;
    return role == EncoderRole::symptom ? s_encoder_.has_value() : g_encoder_.has_value();
}

Encoder& GemModel::encoder(EncoderRole role) {
    return const_cast<Encoder&>(static_cast<const GemModel&>(*this).encoder(role));
}

const Encoder& GemModel::encoder(EncoderRole role) const {
    if (config_.variant == Variant::mtl_shared) return *s_encoder_;
    const auto& e = role == EncoderRole::symptom ? s_encoder_ : g_encoder_;
    if (!e)
        throw ConfigError(std::string("variant ") + std::string(to_string(config_.variant)) + " has no " +
                          (role == EncoderRole::symptom ? "symptom" : "gender") + " encoder");
    return *e;
}

std::map<std::string, std::vector<double>> GemModel::state() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& p : parameters())
        out.emplace(p.name, std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()));
    return out;
}

void GemModel::load_state(const std::map<std::string, std::vector<double>>& values, bool require_all) {
    for (auto& p : parameters()) {
        const auto it = values.find(p.name);
        if (it == values.end()) {
            if (require_all) throw IncompatibilityError("state lacks parameter " + p.name);
            continue;
        }
        if (it->second.size() != p.tensor.numel())
            throw IncompatibilityError("parameter " + p.name + " has " + std::to_string(it->second.size()) +
                                       " values, expected " + std::to_string(p.tensor.numel()));
        auto dst = p.tensor.mutable_values();
        std::copy(it->second.begin(), it->second.end(), dst.begin());
    }
}

GemModel build_variant(const ModelConfig& config, std::uint64_t seed) { return GemModel(config, seed); }

void copy_encoder_values(const Encoder& source, Encoder& target) {
    const auto src = source.parameters();
    auto dst = target.parameters();
    if (src.size() != dst.size()) throw IncompatibilityError("encoders have different layer counts");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].tensor.shape() != dst[i].tensor.shape())
            throw IncompatibilityError("encoder parameter " + dst[i].name + " has shape " +
                                       nn::shape_str(dst[i].tensor.shape()) + ", source has " +
                                       nn::shape_str(src[i].tensor.shape()));
        auto out = dst[i].tensor.mutable_values();
        std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(), out.begin());
    }
}

}  // namespace gem::model
