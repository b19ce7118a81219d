#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "alm/error.hpp"
#include "alm/tokenizer.hpp"
#include "alm/utf8.hpp"
#include "tokenizer_fixtures.hpp"

using alm::TokenizerModel;
using Pairs = std::vector<std::pair<std::string, std::string>>;

namespace {

Pairs merge_pairs(const TokenizerModel& m) {
    Pairs out;
    for (const auto& r : m.merges()) out.emplace_back(r.left, r.right);
    return out;
}

std::vector<std::string> tokens_of(const TokenizerModel& m, const std::vector<int>& ids) {
    std::vector<std::string> out;
    for (int id : ids) out.push_back(m.token(id));
    return out;
}

}  // namespace

TEST_CASE("first merge follows the highest pair count") {
    const std::vector<std::string> docs = {"اا اا اا اب"};
    // base alphabet {▁, ا, ب}; pair counts (▁,ا)=4 (ا,ا)=3 (ا,ب)=1
    const auto model = TokenizerModel::train(docs, alm::kNumSpecials + 3 + 1);
    CHECK(merge_pairs(model) == Pairs{{"▁", "ا"}});
    CHECK(model.vocab_size() == 8);
}

TEST_CASE("no merge budget yields zero merges") {
    std::mt19937_64 rng(5);
    const auto docs = alm::test::random_corpus(rng, 60);
    const auto base = alm::test::base_alphabet_size(alm::test::oracle_words(docs));
    const auto model = TokenizerModel::train(docs, alm::kNumSpecials + base);
    CHECK(model.merges().empty());
    CHECK(model.vocab_size() == alm::kNumSpecials + base);
}

TEST_CASE("aaab aaab with two merges") {
    const std::vector<std::string> docs = {"aaab aaab"};
    // Frozen from the brute-force reference: (a,a)=4 first; then (▁,aa),
    // (aa,a) and (a,b) tie at 2 and (a,b) is lexicographically smallest.
    const Pairs expected{{"a", "a"}, {"a", "b"}};
    const auto oracle = alm::test::brute_force_bpe(alm::test::oracle_words(docs), alm::test::specials_list(),
                                                   alm::kNumSpecials + 3 + 2);
    CHECK(oracle.merges == expected);
    CHECK(oracle.counts == std::vector<long>{4, 2});
    alm::BpeTrainLog log;
    const auto model = TokenizerModel::train(docs, alm::kNumSpecials + 3 + 2, {}, {}, &log);
    CHECK(merge_pairs(model) == expected);
    CHECK(log.merge_counts == std::vector<std::size_t>{4, 2});
}

TEST_CASE("training preconditions") {
    const std::vector<std::string> docs = {"اب"};
    CHECK_THROWS_AS(TokenizerModel::train(docs, 5), alm::ConfigError);
    CHECK_THROWS_AS(TokenizerModel::train(std::vector<std::string>{}, 100), alm::InputError);
    CHECK_THROWS_AS(TokenizerModel::train(std::vector<std::string>{"   "}, 100), alm::InputError);
}

TEST_CASE("merging stops when no pair repeats") {
    const std::vector<std::string> docs = {"ab cd"};
    const auto model = TokenizerModel::train(docs, 1000);
    CHECK(model.merges().empty());
}

TEST_CASE("vocab presets") {
    CHECK(alm::vocab_preset("32K") == 32000);
    CHECK(alm::vocab_preset("50K") == 50000);
    CHECK(alm::vocab_preset("64K") == 64000);
    CHECK(alm::vocab_preset("86K") == 86000);
    CHECK(alm::kDefaultVocabSize == 64000);
    CHECK_THROWS_AS(alm::vocab_preset("128K"), alm::ConfigError);
}

TEST_CASE("encode and decode examples") {
    const auto model = TokenizerModel::from_parts({}, {}, {"<unk>", "<s>", "</s>", "<pad>", "▁", "ا", "ب", "▁ا"},
                                                  {{"▁", "ا"}});
    CHECK(tokens_of(model, model.encode("اب")) == std::vector<std::string>{"▁ا", "ب"});
    CHECK(model.encode("").empty());
    const auto unk = model.encode("ق");
    CHECK(unk == std::vector<int>{model.id_of("▁").value(), alm::kUnkId});

    CHECK(model.decode(model.encode("اب اب")) == "اب اب");
    CHECK(model.decode(std::vector<int>{}).empty());
    const std::vector<int> framed{alm::kBosId, model.id_of("▁ا").value(), alm::kEosId};
    CHECK(model.decode(framed) == "ا");
    CHECK_THROWS_AS(model.decode(std::vector<int>{8}), alm::RangeError);
    CHECK_THROWS_AS(model.decode(std::vector<int>{-1}), alm::RangeError);
}

TEST_CASE("fertility") {
    const std::vector<std::string> docs = {"كتب كتب كتب"};
    const auto whole = TokenizerModel::train(docs, 100);
    CHECK(alm::fertility(whole, docs) == 1.0);

    const auto bare = TokenizerModel::from_parts({}, {}, {"<unk>", "<s>", "</s>", "<pad>", "▁", "ك", "ت", "ب"}, {});
    CHECK(alm::fertility(bare, std::vector<std::string>{"كتب"}) == 4.0);

    const auto partial = TokenizerModel::from_parts(
        {}, {}, {"<unk>", "<s>", "</s>", "<pad>", "▁", "ا", "ب", "▁ا", "▁اب"}, {{"▁", "ا"}, {"▁ا", "ب"}});
    // "▁اب" -> 1 token, "▁بب" -> 3 tokens
    CHECK(alm::fertility(partial, std::vector<std::string>{"اب بب"}) == 2.0);
    CHECK_THROWS_AS(alm::fertility(partial, std::vector<std::string>{}), alm::InputError);
}

TEST_CASE("trainer equals the brute-force reference") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> budget(0, 50);
    for (int trial = 0; trial < 40; ++trial) {
        const auto docs = alm::test::random_corpus(rng, 200);
        const auto words = alm::test::oracle_words(docs);
        const std::size_t vocab = alm::kNumSpecials + alm::test::base_alphabet_size(words) + budget(rng);
        const auto oracle = alm::test::brute_force_bpe(words, alm::test::specials_list(), vocab);
        alm::BpeTrainLog log;
        const auto model = TokenizerModel::train(docs, vocab, {}, {}, &log);
        REQUIRE(model.vocab() == oracle.vocab);
        REQUIRE(merge_pairs(model) == oracle.merges);
        for (std::size_t r = 0; r < model.merges().size(); ++r) CHECK(model.merges()[r].rank == static_cast<int>(r));
        // replayed pair frequencies match the trainer's log
        REQUIRE(log.merge_counts.size() == oracle.counts.size());
        for (std::size_t i = 0; i < log.merge_counts.size(); ++i) {
            CHECK(static_cast<long>(log.merge_counts[i]) == oracle.counts[i]);
            if (i > 0) CHECK(oracle.counts[i] <= oracle.counts[i - 1]);
        }
    }
}

TEST_CASE("merged strings colliding with specials are skipped") {
    const std::vector<std::string> docs = {"<s> <s> <s> <s>"};
    const auto model = TokenizerModel::train(docs, 100);
    for (const auto& r : model.merges()) CHECK(r.merged != "<s>");
    const auto oracle = alm::test::brute_force_bpe(alm::test::oracle_words(docs), alm::test::specials_list(), 100);
    CHECK(merge_pairs(model) == oracle.merges);
    CHECK(model.decode(model.encode("<s>")) == "<s>");
}

TEST_CASE("lossless roundtrip on in-alphabet fuzz") {
    std::mt19937_64 rng(23);
    const auto docs = alm::test::random_corpus(rng, 400);
    const auto model = TokenizerModel::train(docs, 120);
    const std::u32string alphabet = U"ابتكلمنوير  ";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    for (int i = 0; i < 2000; ++i) {
        std::u32string s(static_cast<std::size_t>(i % 25), U' ');
        for (auto& c : s) c = alphabet[pick(rng)];
        const std::string text = alm::utf8::encode(s);
        const auto ids = model.encode(text);
        CHECK(ids == model.encode(text));
        CHECK(model.decode(ids) == alm::normalize(text).text);
    }
}

TEST_CASE("serialization roundtrip and validation") {
    std::mt19937_64 rng(29);
    const auto docs = alm::test::random_corpus(rng, 150);
    alm::NormalizerConfig cfg;
    cfg.preserve_diacritics = false;
    const auto model = TokenizerModel::train(docs, 60, cfg);

    const auto path = std::filesystem::temp_directory_path() / "alm_tok_roundtrip.json";
    model.save(path);
    const auto loaded = TokenizerModel::load(path);
    CHECK(loaded == model);
    CHECK(loaded.content_hash() == model.content_hash());
    CHECK(loaded.normalizer() == cfg);
    std::filesystem::remove(path);

    auto j = model.to_json();
    CHECK(j.at("version") == 1);
    CHECK(j.at("vocab").size() == model.vocab_size());

    auto missing = j;
    missing["merges"].push_back({"x", "y"});
    CHECK_THROWS_AS(TokenizerModel::from_json(missing), alm::InputError);

    auto dup = j;
    dup["vocab"].push_back(dup["vocab"][5]);
    CHECK_THROWS_AS(TokenizerModel::from_json(dup), alm::InputError);

    auto special_merge = j;
    special_merge["vocab"].push_back("<s>▁");
    special_merge["merges"].push_back({"<s>", "▁"});
    CHECK_THROWS_AS(TokenizerModel::from_json(special_merge), alm::InputError);

    const auto other = TokenizerModel::train(docs, 60);
    CHECK(other.content_hash() != model.content_hash());
}
