#include "alm/arabic_norm.hpp"

#include <algorithm>
#include <array>
#include <cstdint>

#include "alm/utf8.hpp"

namespace alm {
namespace {

struct DecompEntry {
    char32_t cp;
    std::uint8_t len;
    std::array<char32_t, 18> parts;
};

struct CombiningEntry {
    char32_t cp;
    std::uint8_t ccc;
};

struct CompositionEntry {
    char32_t first;
    char32_t second;
    char32_t composite;
};

#include "arabic_tables.inc"

const DecompEntry* find_decomposition(char32_t cp) noexcept {
    const auto* begin = std::begin(kDecompositions);
    const auto* end = std::end(kDecompositions);
    const auto* it = std::lower_bound(begin, end, cp,
                                      [](const DecompEntry& e, char32_t v) { return e.cp < v; });
    return (it != end && it->cp == cp) ? it : nullptr;
}

std::uint8_t combining_class(char32_t cp) noexcept {
    const auto* begin = std::begin(kCombiningClasses);
    const auto* end = std::end(kCombiningClasses);
    const auto* it = std::lower_bound(begin, end, cp,
                                      [](const CombiningEntry& e, char32_t v) { return e.cp < v; });
    return (it != end && it->cp == cp) ? it->ccc : 0;
}

char32_t compose_pair(char32_t first, char32_t second) noexcept {
    for (const auto& e : kCompositions) {
        if (e.first == first && e.second == second) return e.composite;
    }
    return 0;
}

// NFKC restricted to one run of Arabic-block codepoints.
void nfkc_run(std::u32string_view run, std::u32string& out) {
    std::u32string decomposed;
    decomposed.reserve(run.size());
    for (char32_t cp : run) {
        if (const auto* d = find_decomposition(cp)) {
            decomposed.append(d->parts.data(), d->len);
        } else {
            decomposed.push_back(cp);
        }
    }

    // Canonical ordering: stable sort of each maximal run of non-starters.
    for (std::size_t i = 0; i < decomposed.size();) {
        if (combining_class(decomposed[i]) == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < decomposed.size() && combining_class(decomposed[j]) != 0) ++j;
        std::stable_sort(decomposed.begin() + static_cast<std::ptrdiff_t>(i),
                         decomposed.begin() + static_cast<std::ptrdiff_t>(j),
                         [](char32_t a, char32_t b) { return combining_class(a) < combining_class(b); });
        i = j;
    }

    std::size_t starter = std::u32string::npos;
    bool has_between = false;
    std::uint8_t last_ccc = 0;
    for (char32_t cp : decomposed) {
        const std::uint8_t ccc = combining_class(cp);
        if (starter != std::u32string::npos && !(has_between && last_ccc >= ccc)) {
            if (const char32_t c = compose_pair(out[starter], cp)) {
                out[starter] = c;
                continue;
            }
        }
        if (ccc == 0) {
            starter = out.size();
            has_between = false;
        } else {
            has_between = true;
            last_ccc = ccc;
        }
        out.push_back(cp);
    }
}

std::u32string canonicalize(std::u32string_view text) {
    std::u32string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_arabic_block(text[i])) {
            out.push_back(text[i++]);
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && is_arabic_block(text[j])) ++j;
        nfkc_run(text.substr(i, j - i), out);
        i = j;
    }
    return out;
}

template <class Pred>
void erase_if_cp(std::u32string& s, Pred pred) {
    s.erase(std::remove_if(s.begin(), s.end(), pred), s.end());
}

bool is_alef_variant(char32_t cp) noexcept {
    return cp == 0x0622 || cp == 0x0623 || cp == 0x0625 || cp == 0x0671;
}

}  // namespace

bool is_whitespace(char32_t cp) noexcept {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000: case kWordMarker:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

bool is_arabic_block(char32_t cp) noexcept {
    return (cp >= 0x0600 && cp <= 0x06FF) || (cp >= 0x0750 && cp <= 0x077F) ||
           (cp >= 0x0870 && cp <= 0x08FF) || is_presentation_form(cp);
}

std::u32string normalize(std::u32string_view text, const NormalizerConfig& config) {
    std::u32string s(text);
    if (config.unicode_canonicalize) {
        s = canonicalize(s);
        // Presentation forms with no decomposition (ornate parentheses, BOM, ...).
        erase_if_cp(s, is_presentation_form);
    }
    if (config.remove_tatweel) erase_if_cp(s, [](char32_t cp) { return cp == kTatweel; });
    if (!config.preserve_diacritics) erase_if_cp(s, is_diacritic);
    // Removals can bring a base letter next to a hamza/madda mark.
    if (config.unicode_canonicalize) s = canonicalize(s);
    if (config.fold_alef) {
        // Folding can expose further compositions; iterate to a fixed point.
        for (;;) {
            std::u32string t = s;
            std::replace_if(t.begin(), t.end(), is_alef_variant, U'ا');
            if (config.unicode_canonicalize) t = canonicalize(t);
            if (t == s) break;
            s = std::move(t);
        }
    }
    if (config.lowercase_latin) {
        for (char32_t& cp : s) {
            if (cp >= U'A' && cp <= U'Z') cp += U'a' - U'A';
        }
    }
    if (config.collapse_whitespace) {
        std::u32string out;
        out.reserve(s.size());
        bool pending = false;
        for (char32_t cp : s) {
            if (is_whitespace(cp)) {
                pending = true;
                continue;
            }
            if (pending && !out.empty()) out.push_back(U' ');
            pending = false;
            out.push_back(cp);
        }
        s = std::move(out);
    }
    return s;
}

NormalizedText normalize(std::string_view utf8, const NormalizerConfig& config) {
    const std::u32string cps = utf8::decode(utf8);
    return NormalizedText{utf8::encode(normalize(cps, config)), cps.size()};
}

std::vector<std::u32string> pretokenize(std::u32string_view normalized) {
    std::vector<std::u32string> words;
    std::size_t i = 0;
    while (i < normalized.size()) {
        if (is_whitespace(normalized[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < normalized.size() && !is_whitespace(normalized[j])) ++j;
        std::u32string word;
        word.reserve(j - i + 1);
        word.push_back(kWordMarker);
        word.append(normalized.substr(i, j - i));
        words.push_back(std::move(word));
        i = j;
    }
    return words;
}

std::vector<std::string> pretokenize(const NormalizedText& normalized) {
    std::vector<std::string> out;
    for (const auto& w : pretokenize(utf8::decode(normalized.text))) out.push_back(utf8::encode(w));
    return out;
}

void to_json(nlohmann::json& j, const NormalizerConfig& c) {
    j = nlohmann::json{{"unicode_canonicalize", c.unicode_canonicalize},
                       {"preserve_diacritics", c.preserve_diacritics},
                       {"remove_tatweel", c.remove_tatweel},
                       {"collapse_whitespace", c.collapse_whitespace},
                       {"lowercase_latin", c.lowercase_latin},
                       {"fold_alef", c.fold_alef}};
}

void from_json(const nlohmann::json& j, NormalizerConfig& c) {
    const NormalizerConfig defaults;
    c.unicode_canonicalize = j.value("unicode_canonicalize", defaults.unicode_canonicalize);
    c.preserve_diacritics = j.value("preserve_diacritics", defaults.preserve_diacritics);
    c.remove_tatweel = j.value("remove_tatweel", defaults.remove_tatweel);
    c.collapse_whitespace = j.value("collapse_whitespace", defaults.collapse_whitespace);
    c.lowercase_latin = j.value("lowercase_latin", defaults.lowercase_latin);
    c.fold_alef = j.value("fold_alef", defaults.fold_alef);
}

}  // namespace alm
