#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gem/corpus.hpp"
#include "gem/knowledge.hpp"
#include "gem/metrics.hpp"
#include "gem/model.hpp"
#include "gem/text.hpp"

namespace gem::train {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::array<double, 2> loss_weights{1.0, 1.0};  // (symptom, gender)
    std::uint64_t seed = 1;
    double mlm_rate = 0.15;
    std::array<double, 3> mlm_split{0.8, 0.1, 0.1};  // [MASK], random token, unchanged
};

void validate(const TrainConfig& config);
std::string describe(const TrainConfig& config);

// Fine-tuning and pretraining presets. "paper" carries the published
// hyperparameters, "desk" the ones used for the small random-init models.
TrainConfig finetune_preset(std::string_view name);
TrainConfig pretrain_preset(std::string_view name);

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::uint64_t t = 0;
};

// One bias-corrected Adam update using each parameter's accumulated gradient
// (a parameter without a gradient counts as zero). Throws NumericError naming
// the parameter when a gradient is not finite; nothing is modified then.
void adam_step(std::span<nn::Parameter> params, AdamState& state, double lr, double beta1, double beta2, double eps);

struct MlmCorruption {
    text::Batch batch;                   // corrupted copy
    std::vector<std::size_t> positions;  // flat b*T+t indices of selected tokens
    std::vector<int> targets;            // original ids at those positions
    std::array<std::size_t, 3> category_counts{0, 0, 0};  // mask, random, unchanged
};

// Selects each non-special, non-concept, non-pad token with probability
// `rate`. Deterministic in step_seed.
MlmCorruption mlm_corrupt(const text::Batch& batch, double rate, const std::array<double, 3>& split,
                          std::size_t vocab_size, std::uint64_t step_seed);

struct PretrainResult {
    std::vector<double> epoch_losses;  // mean masked-token loss per epoch
};

// Masked-language-model training of one encoder on one view stream. The output
// projection is tied to the token embedding plus a bias that is discarded.
PretrainResult mlm_pretrain(model::Encoder& encoder, const model::ModelConfig& model_config,
                            std::span<const text::TokenSequence> stream, const TrainConfig& config);

enum class ViewMode { masked, raw };
std::string_view to_string(ViewMode m);

struct Lexicons {
    const knowledge::Lexicon* symptom = nullptr;
    const knowledge::Lexicon* gender = nullptr;
};

// Symptom and gender view texts for the item; raw mode leaves both untouched.
knowledge::MaskedViews item_views(const corpus::LabeledItem& item, const Lexicons& lexicons, ViewMode mode);

struct EncodedItem {
    text::TokenSequence symptom_view;
    text::TokenSequence gender_view;
    std::optional<int> symptom;
    std::optional<int> gender;
    corpus::Kind kind = corpus::Kind::post;
};
using EncodedSet = std::vector<EncodedItem>;

// Vocabulary over both views of the given items.
text::Vocabulary build_vocabulary(std::span<const corpus::LabeledItem> items, const Lexicons& lexicons, ViewMode mode,
                                  int min_freq = 2);
EncodedSet encode_items(std::span<const corpus::LabeledItem> items, const Lexicons& lexicons, ViewMode mode,
                        const text::Vocabulary& vocab, std::size_t max_len);

std::vector<text::TokenSequence> view_stream(const EncodedSet& set, model::EncoderRole role);

// Task-adaptive pretraining of every encoder in the model on its own view
// stream: symptom views for the S-encoder, gender views for the G-encoder.
std::map<std::string, PretrainResult> pretrain_model(model::GemModel& model, const EncodedSet& items,
                                                     const TrainConfig& config);

struct Predictions {
    std::vector<int> symptom;  // empty if the variant has no symptom head
    std::vector<int> gender;
    double symptom_loss = 0.0;  // mean CE over labeled items, 0 when none
    double gender_loss = 0.0;
    std::size_t symptom_labeled = 0;
    std::size_t gender_labeled = 0;
};

// Evaluation-mode forward pass over the set in fixed order.
Predictions predict_set(const model::GemModel& model, const EncodedSet& set, std::size_t batch_size = 64);

// Gender labeler backed by a trained model with a gender head.
class ModelGenderClassifier : public corpus::GenderClassifier {
public:
    ModelGenderClassifier(const model::GemModel& model, const text::Vocabulary& vocab, Lexicons lexicons,
                          ViewMode mode = ViewMode::masked);
    std::vector<Gender> classify(std::span<const std::string> texts) const override;
    const text::Vocabulary& vocabulary() const override { return vocab_; }

private:
    const model::GemModel& model_;
    const text::Vocabulary& vocab_;
    Lexicons lexicons_;
    ViewMode mode_;
};

struct TaskMetrics {
    std::optional<eval::MetricsReport> symptom;
    std::optional<eval::MetricsReport> gender;
    double loss = 0.0;  // weighted sum of per-task mean losses
};
TaskMetrics evaluate_set(const model::GemModel& model, const EncodedSet& set, const TrainConfig& config);

// Mean macro-F1 over the tasks the variant predicts.
double selection_score(const TaskMetrics& m);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    TaskMetrics dev;
    double dev_score = 0.0;
};

// Everything a resumed run needs.
struct TrainState {
    model::GemModel model;
    AdamState adam;
    std::size_t epoch = 0;   // completed epochs
    std::uint64_t step = 0;  // completed optimizer steps
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::map<std::string, std::vector<double>> best_params;

    explicit TrainState(model::GemModel m) : model(std::move(m)) {}
};

struct FinetuneOptions {
    std::ostream* metrics_log = nullptr;  // newline-delimited JSON records
    // Called after every epoch; returning false stops training early.
    std::function<bool(const EpochRecord&)> on_epoch;
};

// Trains from state.epoch up to config.epochs. Shuffling and dropout draw from
// streams derived from (seed, epoch) and (seed, step), so a resumed run follows
// the uninterrupted one exactly. An empty dev set skips best-model tracking.
std::vector<EpochRecord> mtl_finetune(TrainState& state, const EncodedSet& train, const EncodedSet& dev,
                                      const TrainConfig& config, const FinetuneOptions& options = {});

// Loads the retained best-dev parameters into the model, if any.
void restore_best(TrainState& state);

// Checkpoint container: a header line, config digest and vocabulary hash,
// JSON metadata, named little-endian f64 arrays, and a trailing checksum.
struct Checkpoint {
    model::ModelConfig model_config;
    TrainConfig train_config;
    std::uint64_t vocab_hash = 0;
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    std::uint64_t adam_t = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, std::vector<double>> adam_m;
    std::map<std::string, std::vector<double>> adam_v;
    std::map<std::string, std::vector<double>> best_params;
};

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& config, std::uint64_t vocab_hash);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config,
                     std::uint64_t vocab_hash);
// Throws ParseError on a malformed or corrupted file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Throws IncompatibilityError when the vocabulary hash differs.
TrainState restore_state(const Checkpoint& checkpoint, std::optional<std::uint64_t> expected_vocab_hash);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes);

std::uint64_t config_digest(const model::ModelConfig& config);

}  // namespace gem::train
