#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "alm/arabic_norm.hpp"
#include "alm/error.hpp"
#include "alm/utf8.hpp"

using alm::NormalizerConfig;

namespace {

std::u32string random_text(std::mt19937_64& rng, std::size_t max_len) {
    static const std::u32string pool =
        U"ابتثجحخدذرسشصضطظعغفقكلمنهويءآأؤإئةى"
        U"ًٌٍَُِّْٰٕٓٔ"
        U"ـــ   \t\n ▁abcXYZ019.,"
        U"ﻻﻵﻷﻹﺍﺎﭐﹰﹱﷲﷺ﻿﴾";
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::u32string s(len(rng), U' ');
    for (auto& c : s) c = pool[pick(rng)];
    return s;
}

NormalizerConfig random_config(std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    NormalizerConfig c;
    c.unicode_canonicalize = coin(rng);
    c.preserve_diacritics = coin(rng);
    c.remove_tatweel = coin(rng);
    c.collapse_whitespace = coin(rng);
    c.lowercase_latin = coin(rng);
    c.fold_alef = coin(rng);
    return c;
}

std::string diacritic_multiset(std::u32string_view s) {
    std::u32string marks;
    for (char32_t cp : s) {
        if (alm::is_diacritic(cp)) marks.push_back(cp);
    }
    std::sort(marks.begin(), marks.end());
    return alm::utf8::encode(marks);
}

}  // namespace

TEST_CASE("normalize examples") {
    const NormalizerConfig cfg;
    CHECK(alm::normalize("", cfg).text.empty());
    CHECK(alm::normalize("ﻻ", cfg).text == "لا");
    CHECK(alm::normalize("كـتاب", cfg).text == "كتاب");
    CHECK(alm::normalize("كَتَبَ", cfg).text == "كَتَبَ");
    CHECK(alm::normalize("كَتَبَ", cfg).source_len == 6);
}

TEST_CASE("latin text passes through except whitespace") {
    CHECK(alm::normalize("  Hello,\t\tWorld ﬁ  ").text == "Hello, World ﬁ");
    NormalizerConfig lower;
    lower.lowercase_latin = true;
    CHECK(alm::normalize("ABC كتاب").text == "ABC كتاب");
    CHECK(alm::normalize("ABC كتاب", lower).text == "abc كتاب");
}

TEST_CASE("alef folding is opt-in") {
    NormalizerConfig fold;
    fold.fold_alef = true;
    CHECK(alm::normalize("أحمد إلى آخر").text == "أحمد إلى آخر");
    CHECK(alm::normalize("أحمد إلى آخر", fold).text == "احمد الى اخر");
}

TEST_CASE("decomposed hamza recomposes after tatweel removal") {
    // alef, tatweel, hamza above -> alef with hamza above
    CHECK(alm::normalize("اـٔ").text == "أ");
}

TEST_CASE("malformed UTF-8 reports the byte offset") {
    const std::string bad = std::string("اب") + "\xC3\x28";
    try {
        (void)alm::normalize(bad);
        FAIL("expected DecodeError");
    } catch (const alm::DecodeError& e) {
        CHECK(e.byte_offset() == 4);
    }
    CHECK_THROWS_AS((void)alm::normalize("\xED\xA0\x80"), alm::DecodeError);  // surrogate
    CHECK_THROWS_AS((void)alm::normalize("\xC0\xAF"), alm::DecodeError);      // overlong
}

TEST_CASE("matches the frozen Python NFKC reference") {
    std::ifstream in(ALM_TEST_DATA "/norm_golden.jsonl");
    REQUIRE(in);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto rec = nlohmann::json::parse(line);
        const auto cfg = rec.at("config").get<NormalizerConfig>();
        const auto input = rec.at("input").get<std::string>();
        INFO("input: " << input);
        CHECK(alm::normalize(input, cfg).text == rec.at("expected").get<std::string>());
        ++n;
    }
    CHECK(n == 800);
}

TEST_CASE("pretokenize") {
    using V = std::vector<std::string>;
    CHECK(alm::pretokenize(alm::normalize("اب اب")) == V{"▁اب", "▁اب"});
    CHECK(alm::pretokenize(alm::normalize("")).empty());
    CHECK(alm::pretokenize(alm::normalize("a b")) == V{"▁a", "▁b"});
}

TEST_CASE("normalization properties on fuzzed text") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 3000; ++iter) {
        const NormalizerConfig cfg = iter % 2 ? NormalizerConfig{} : random_config(rng);
        const std::u32string s = random_text(rng, 40);
        const std::u32string once = alm::normalize(s, cfg);
        INFO("input: " << alm::utf8::encode(s));

        CHECK(alm::normalize(once, cfg) == once);

        if (cfg.unicode_canonicalize) {
            CHECK(std::none_of(once.begin(), once.end(), alm::is_presentation_form));
        }
        if (cfg.remove_tatweel) CHECK(once.find(alm::kTatweel) == std::u32string::npos);
        if (!cfg.preserve_diacritics) CHECK(std::none_of(once.begin(), once.end(), alm::is_diacritic));
        if (cfg.collapse_whitespace) {
            if (!once.empty()) {
                CHECK_FALSE(alm::is_whitespace(once.front()));
                CHECK_FALSE(alm::is_whitespace(once.back()));
            }
            for (std::size_t i = 0; i + 1 < once.size(); ++i) {
                CHECK_FALSE((alm::is_whitespace(once[i]) && alm::is_whitespace(once[i + 1])));
            }
            // join(pretokens) with the marker read as a space rebuilds the text
            std::u32string joined;
            for (const auto& w : alm::pretokenize(once)) joined += w;
            std::replace(joined.begin(), joined.end(), alm::kWordMarker, U' ');
            if (!joined.empty()) joined.erase(0, 1);
            CHECK(joined == once);
        }
    }
}

TEST_CASE("diacritics are preserved as a multiset") {
    // Presentation forms can carry their own harakat, so this property is
    // checked over text built from base letters, marks, tatweel and spaces.
    std::mt19937_64 rng(11);
    const std::u32string pool = U"بتكلمنوياأإآًٌٍَُِّْٓٔـ  ";
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int iter = 0; iter < 2000; ++iter) {
        std::u32string s(iter % 30, U' ');
        for (auto& c : s) c = pool[pick(rng)];
        CHECK(diacritic_multiset(alm::normalize(s, NormalizerConfig{})) == diacritic_multiset(s));
    }
}

TEST_CASE("config json roundtrip keeps every flag") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 64; ++i) {
        const auto c = random_config(rng);
        nlohmann::json j = c;
        CHECK(j.get<NormalizerConfig>() == c);
    }
}
