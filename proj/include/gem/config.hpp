#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "gem/corpus.hpp"
#include "gem/model.hpp"
#include "gem/train.hpp"

namespace gem::config {

// Everything a pipeline run reads from its configuration file. Sections and
// keys mirror the member names; to_ini() lists every key with its value.
struct RunConfig {
    std::uint64_t seed = 7;
    std::filesystem::path out_dir = "runs";
    std::filesystem::path cvd_lexicon = "data/lexicons/cvd.tsv";
    std::filesystem::path symptom_lexicon = "data/lexicons/symptom.tsv";
    std::filesystem::path gender_lexicon = "data/lexicons/gender.tsv";
    std::filesystem::path corpus;  // optional input corpus

    corpus::GeneratorSpec generator;
    std::array<double, 3> split_ratios{0.75, 0.05, 0.20};
    int min_freq = 2;

    model::ModelConfig model;
    train::TrainConfig train;
    train::TrainConfig pretrain;
};

// "desk" (small random-init models) or "paper" (published hyperparameters).
RunConfig preset(std::string_view name);

// Overlays the keys of an INI document onto `base`. Unknown sections or keys,
// duplicate keys and malformed values raise ConfigError.
RunConfig parse_run_config(const std::string& ini_text, RunConfig base);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base);
std::string to_ini(const RunConfig& config);

void validate(const RunConfig& config);

}  // namespace gem::config
