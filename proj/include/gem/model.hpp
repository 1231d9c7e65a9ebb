#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/rng.hpp"
#include "gem/tensor.hpp"
#include "gem/text.hpp"

namespace gem::model {

enum class Variant { gem, stl_symptom, stl_gender, mtl_shared, concat_ablation };
enum class FusionValueSource { symptom, gender };
// Which [CLS] vector the symptom head reads in the gem variant.
enum class SymptomHeadInput { fused, encoder };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
std::string_view to_string(FusionValueSource v);
FusionValueSource parse_fusion_value_source(std::string_view s);
std::string_view to_string(SymptomHeadInput v);
SymptomHeadInput parse_symptom_head_input(std::string_view s);

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d = 64;
    std::size_t n_heads = 4;
    std::size_t d_ffn = 128;
    std::size_t vocab_size = 0;
    std::size_t max_len = 64;
    double dropout_p = 0.2;
    FusionValueSource fusion_value_source = FusionValueSource::symptom;
    SymptomHeadInput symptom_head_input = SymptomHeadInput::fused;
    Variant variant = Variant::gem;
};

void validate(const ModelConfig& config);
// Stable text form used for checkpoint digests and logs.
std::string describe(const ModelConfig& config);

// Whether the variant needs each label family during training.
bool uses_symptom(Variant v);
bool uses_gender(Variant v);

struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout
};

struct LayerParams {
    nn::Tensor ln1_gain, ln1_bias;
    nn::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    nn::Tensor ln2_gain, ln2_bias;
    nn::Tensor w1, b1, w2, b2;
};

// Pre-norm transformer encoder: token + position embeddings, then per layer
// x += attn(LN(x)); x += ffn(LN(x)), and a final layer norm when n_layers > 0.
struct Encoder {
    std::string prefix;
    nn::Tensor tok_emb;  // [V, d]
    nn::Tensor pos_emb;  // [max_len, d]
    std::vector<LayerParams> layers;
    nn::Tensor final_gain, final_bias;

    std::vector<nn::Parameter> parameters() const;
};

Encoder init_encoder(const std::string& prefix, const ModelConfig& config, Rng& rng);

// Returns [B, T, d].
nn::Tensor encoder_forward(const Encoder& encoder, const ModelConfig& config, const text::Batch& batch,
                           const ForwardContext& ctx);

struct FusionOutput {
    nn::Tensor attn_weights;  // [B, Tg, Ts]
    nn::Tensor a;             // [B, Tg, d]
    nn::Tensor h_g;           // e_g + a
};

// Cross-attention with the gender encoding as query and the symptom encoding
// as keys; values per fusion_value_source. symptom_pad_mask is [B, Ts].
FusionOutput fuse(const nn::Tensor& e_s, std::span<const std::uint8_t> symptom_pad_mask, const nn::Tensor& e_g,
                  FusionValueSource value_source);

struct Linear {
    nn::Tensor weight;  // [in, out]
    nn::Tensor bias;    // [out]
};

class Prediction {
public:
    const nn::Tensor& symptom_logits() const;  // [B, 4]
    const nn::Tensor& gender_logits() const;   // [B, 2]
    bool has_symptom() const { return symptom_.has_value(); }
    bool has_gender() const { return gender_.has_value(); }
    const std::optional<FusionOutput>& fusion() const { return fusion_; }
    // S-encoder [CLS] vectors [B, d], when the variant has a symptom encoder.
    const std::optional<nn::Tensor>& symptom_cls() const { return symptom_cls_; }

private:
    friend class GemModel;
    std::optional<nn::Tensor> symptom_;
    std::optional<nn::Tensor> gender_;
    std::optional<FusionOutput> fusion_;
    std::optional<nn::Tensor> symptom_cls_;
};

enum class EncoderRole { symptom, gender };

class GemModel {
public:
    GemModel(ModelConfig config, std::uint64_t seed);
    GemModel(GemModel&&) = default;
    GemModel& operator=(GemModel&&) = default;
    GemModel(const GemModel&) = delete;
    GemModel& operator=(const GemModel&) = delete;

    GemModel clone() const;

    const ModelConfig& config() const { return config_; }
    // All parameters in a fixed order; names are unique.
    std::vector<nn::Parameter> parameters() const;
    std::size_t parameter_count() const;

    Prediction predict(const text::PairedBatch& batch, const ForwardContext& ctx) const;

    // The encoder that consumes the given view stream; mtl_shared returns its
    // single encoder for both roles. Throws when the variant has none.
    Encoder& encoder(EncoderRole role);
    const Encoder& encoder(EncoderRole role) const;
    bool has_encoder(EncoderRole role) const;

    // Value snapshots for best-model retention and checkpoints.
    std::map<std::string, std::vector<double>> state() const;
    void load_state(const std::map<std::string, std::vector<double>>& values, bool require_all = true);

private:
    struct CloneTag {};
    GemModel(const GemModel& other, CloneTag);

    ModelConfig config_;
    std::optional<Encoder> s_encoder_;  // also the shared encoder of mtl_shared
    std::optional<Encoder> g_encoder_;
    std::optional<Linear> symptom_head_;
    std::optional<Linear> gender_head_;
};

GemModel build_variant(const ModelConfig& config, std::uint64_t seed);

// Copies encoder values into `target`, matching names after the prefix.
void copy_encoder_values(const Encoder& source, Encoder& target);

}  // namespace gem::model
