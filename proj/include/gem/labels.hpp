#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace gem {

enum class Symptom { depression = 0, anxiety = 1, bipolar = 2, ptsd = 3 };
enum class Gender { man = 0, woman = 1 };

inline constexpr std::size_t kNumSymptoms = 4;
inline constexpr std::size_t kNumGenders = 2;

inline constexpr std::array<std::string_view, kNumSymptoms> kSymptomNames{"depression", "anxiety", "bipolar",
                                                                          "ptsd"};
inline constexpr std::array<std::string_view, kNumGenders> kGenderNames{"man", "woman"};

// Row names used by the class-wise report.
inline constexpr std::array<std::string_view, kNumSymptoms> kSymptomDisplay{"Depression", "Anxiety", "Bipolar",
                                                                            "PTSD"};

inline std::string_view to_string(Symptom s) { return kSymptomNames[static_cast<std::size_t>(s)]; }
inline std::string_view to_string(Gender g) { return kGenderNames[static_cast<std::size_t>(g)]; }

inline std::optional<Symptom> parse_symptom(std::string_view s) {
    for (std::size_t i = 0; i < kNumSymptoms; ++i)
        if (kSymptomNames[i] == s) return static_cast<Symptom>(i);
    return std::nullopt;
}
inline std::optional<Gender> parse_gender(std::string_view s) {
    for (std::size_t i = 0; i < kNumGenders; ++i)
        if (kGenderNames[i] == s) return static_cast<Gender>(i);
    return std::nullopt;
}

// Canonical concept token for a label, e.g. "<anxiety>".
inline std::string concept_token(Symptom s) { return "<" + std::string(to_string(s)) + ">"; }
inline std::string concept_token(Gender g) { return "<" + std::string(to_string(g)) + ">"; }

}  // namespace gem
