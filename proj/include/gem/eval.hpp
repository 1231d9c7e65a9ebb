#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gem/corpus.hpp"
#include "gem/metrics.hpp"
#include "gem/model.hpp"
#include "gem/stats.hpp"
#include "gem/train.hpp"

namespace gem::eval {

enum class Format { table, records };
Format parse_format(std::string_view s);

// One stream ("all", "posts" or "comments") of the class-wise table. The
// symptom report uses the display names Depression, Anxiety, Bipolar, PTSD.
struct ClasswiseTable {
    std::string stream;
    std::size_t items = 0;
    std::optional<MetricsReport> symptom;
    std::optional<MetricsReport> gender;
};

// Tables for all items, posts and comments, in that order. A stream without
// items yields an empty table.
std::vector<ClasswiseTable> classwise_report(const model::GemModel& model, const train::EncodedSet& test);

std::string format_classwise(const std::vector<ClasswiseTable>& tables, Format format);

enum class AblationArm { full, minus_attention, minus_entity_masking, minus_task_adaptation };
std::string_view to_string(AblationArm arm);
std::string_view display_name(AblationArm arm);  // "GeM", "-A", "-EM", "-TA"
inline constexpr AblationArm kAblationArms[] = {AblationArm::full, AblationArm::minus_attention,
                                                AblationArm::minus_entity_masking,
                                                AblationArm::minus_task_adaptation};

struct AblationSettings {
    model::ModelConfig model;      // vocab_size and variant are set per arm
    train::TrainConfig finetune;   // seed is replaced per run
    train::TrainConfig pretrain;   // seed is replaced per run
    int min_freq = 2;
    std::vector<std::uint64_t> seeds;
    std::vector<AblationArm> arms{std::begin(kAblationArms), std::end(kAblationArms)};
    std::ostream* log = nullptr;   // one NDJSON record per finished run
};

struct AblationRun {
    AblationArm arm = AblationArm::full;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    std::optional<MetricsReport> symptom;  // test set
    std::optional<MetricsReport> gender;
    double first_epoch_dev_loss = 0.0;
    std::uint64_t split_hash = 0;
    double seconds = 0.0;
};

struct MetricTriple {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct AblationRow {
    AblationArm arm = AblationArm::full;
    MetricTriple symptom;  // medians over successful seeds (NaN when none)
    MetricTriple gender;
    double median_first_epoch_dev_loss = 0.0;
    std::size_t failures = 0;
    std::vector<AblationRun> runs;
};

struct AblationReport {
    std::vector<std::uint64_t> seeds;
    std::uint64_t split_hash = 0;
    std::vector<AblationRow> rows;
    // One-sided test that the full model's per-seed symptom macro-F1 exceeds
    // each ablated arm's.
    std::vector<std::pair<AblationArm, SignificanceReport>> significance;

    const AblationRow& row(AblationArm arm) const;
};

// Order-sensitive hash of the train/dev/test ids.
std::uint64_t split_id_hash(const corpus::CorpusSplit& split);

// Requires at least 3 seeds. Every arm sees the same split. The full and -A
// arms start from the same pretrained encoders for a given seed.
AblationReport run_ablation(const AblationSettings& settings, const corpus::CorpusSplit& split,
                            const train::Lexicons& lexicons);

std::string format_ablation(const AblationReport& report, Format format);

double median(std::vector<double> values);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct SimilarityReport {
    SignificanceReport test;
    std::size_t n_present = 0;
    std::size_t n_absent = 0;
    std::size_t n_pairs = 0;
    double mean_present = 0.0;
    double mean_absent = 0.0;
    double median_present = 0.0;
    double median_absent = 0.0;
};

// Items are split by whether the gender lexicon finds a span in their text.
// Each item's S-encoder [CLS] vector is compared by cosine with the centroid of
// its symptom class over all items. Gender-present items are paired with
// unused gender-absent items of the same class and nearest token length, and
// the paired similarities go through the signed-rank test (present vs absent).
SimilarityReport gender_presence_similarity(const model::GemModel& model, std::span<const corpus::LabeledItem> items,
                                            const train::Lexicons& lexicons, const text::Vocabulary& vocab,
                                            train::ViewMode mode = train::ViewMode::masked,
                                            Alternative alternative = Alternative::less);

std::string format_significance(const SignificanceReport& report, Format format);
std::string format_similarity(const SimilarityReport& report, Format format);

}  // namespace gem::eval
