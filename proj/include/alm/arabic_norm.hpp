#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace alm {

inline constexpr char32_t kWordMarker = U'▁';
inline constexpr char32_t kTatweel = U'ـ';

// Flags of the normalization pipeline. Steps run in a fixed order:
// compatibility decomposition + canonical composition over Arabic runs,
// tatweel removal, diacritic stripping, recomposition, alef folding,
// Latin lowercasing, whitespace collapsing.
struct NormalizerConfig {
    bool unicode_canonicalize = true;
    bool preserve_diacritics = true;
    bool remove_tatweel = true;
    bool collapse_whitespace = true;
    bool lowercase_latin = false;
    bool fold_alef = false;  // أ إ آ ٱ -> ا

    bool operator==(const NormalizerConfig&) const = default;
};

void to_json(nlohmann::json& j, const NormalizerConfig& c);
void from_json(const nlohmann::json& j, NormalizerConfig& c);

struct NormalizedText {
    std::string text;            // UTF-8
    std::size_t source_len = 0;  // codepoints in the input
};

// U+064B..U+0652 (tanween, short vowels, shadda, sukun).
constexpr bool is_diacritic(char32_t cp) noexcept { return cp >= 0x064B && cp <= 0x0652; }

constexpr bool is_presentation_form(char32_t cp) noexcept {
    return (cp >= 0xFB50 && cp <= 0xFDFF) || (cp >= 0xFE70 && cp <= 0xFEFF);
}

// Unicode White_Space plus U+2581, so a literal word marker in the input
// can never be confused with one inserted by pretokenize.
bool is_whitespace(char32_t cp) noexcept;

// Codepoints the canonicalization step treats as Arabic script.
bool is_arabic_block(char32_t cp) noexcept;

std::u32string normalize(std::u32string_view text, const NormalizerConfig& config);

// Throws DecodeError on malformed UTF-8.
NormalizedText normalize(std::string_view utf8, const NormalizerConfig& config = {});

// Whitespace split; every word gets U+2581 prepended.
std::vector<std::u32string> pretokenize(std::u32string_view normalized);
std::vector<std::string> pretokenize(const NormalizedText& normalized);

}  // namespace alm
