#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/arabic_norm.hpp"
#include "alm/error.hpp"
#include "alm/utf8.hpp"

namespace alm {

inline constexpr int kUnkId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kPadId = 3;
inline constexpr int kNumSpecials = 4;

struct SpecialTokens {
    std::string unk = "<unk>";
    std::string bos = "<s>";
    std::string eos = "</s>";
    std::string pad = "<pad>";

    bool operator==(const SpecialTokens&) const = default;
};

struct MergeRule {
    int rank = 0;
    std::string left;
    std::string right;
    std::string merged;

    bool operator==(const MergeRule&) const = default;
};

// 32K / 50K / 64K / 86K; the 64K preset is the default.
std::size_t vocab_preset(std::string_view name);
inline constexpr std::size_t kDefaultVocabSize = 64000;

// Whitespace-word frequencies of a normalized corpus. Documents are fed one
// at a time so arbitrarily large corpora can be counted from a stream.
class WordCounter {
public:
    explicit WordCounter(NormalizerConfig normalizer = {}) : normalizer_(normalizer) {}

    void add_document(std::string_view utf8);
    void add_word(const std::u32string& pretoken, std::size_t count = 1);

    const NormalizerConfig& normalizer() const noexcept { return normalizer_; }
    // Sorted by word so training never depends on hash order.
    const std::map<std::u32string, std::size_t>& words() const noexcept { return words_; }
    std::size_t documents() const noexcept { return documents_; }
    std::size_t total_words() const noexcept { return total_words_; }

private:
    NormalizerConfig normalizer_;
    std::map<std::u32string, std::size_t> words_;
    std::size_t documents_ = 0;
    std::size_t total_words_ = 0;
};

struct BpeTrainLog {
    std::vector<std::size_t> merge_counts;  // pair frequency when each merge was selected
};

class TokenizerModel {
public:
    TokenizerModel() = default;

    static TokenizerModel train(const WordCounter& counts, std::size_t vocab_size,
                                const SpecialTokens& specials = {}, BpeTrainLog* log = nullptr);
    static TokenizerModel train(std::span<const std::string> documents, std::size_t vocab_size,
                                const NormalizerConfig& normalizer = {},
                                const SpecialTokens& specials = {}, BpeTrainLog* log = nullptr);

    // Builds a model from explicit parts; validates every invariant.
    static TokenizerModel from_parts(NormalizerConfig normalizer, SpecialTokens specials,
                                     std::vector<std::string> vocab,
                                     std::vector<std::pair<std::string, std::string>> merges);

    std::vector<int> encode(std::string_view utf8) const;
    std::vector<int> encode_normalized(std::u32string_view normalized) const;
    std::vector<int> encode_word(const std::u32string& pretoken) const;
    std::string decode(std::span<const int> ids) const;

    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    const std::string& token(int id) const;
    std::optional<int> id_of(std::string_view token) const;
    const std::vector<std::string>& vocab() const noexcept { return vocab_; }
    const std::vector<MergeRule>& merges() const noexcept { return merges_; }
    const NormalizerConfig& normalizer() const noexcept { return normalizer_; }
    const SpecialTokens& specials() const noexcept { return specials_; }

    nlohmann::json to_json() const;
    static TokenizerModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static TokenizerModel load(const std::filesystem::path& path);

    // Hex FNV-1a 64 over the canonical JSON serialization.
    std::string content_hash() const;

    bool operator==(const TokenizerModel& other) const {
        return normalizer_ == other.normalizer_ && specials_ == other.specials_ &&
               vocab_ == other.vocab_ && merges_ == other.merges_;
    }

private:
    struct MergeTarget {
        int rank;
        int merged;
    };

    void build_indices();

    NormalizerConfig normalizer_;
    SpecialTokens specials_;
    std::vector<std::string> vocab_;
    std::vector<MergeRule> merges_;

    std::unordered_map<std::string, int> token_to_id_;
    std::unordered_map<char32_t, int> codepoint_to_id_;
    std::unordered_map<std::uint64_t, MergeTarget> merge_index_;
};

// Subword tokens per whitespace word. Accepts any range of documents,
// including a lazily streamed corpus. Throws InputError when there are no words.
template <std::ranges::input_range Documents>
double fertility(const TokenizerModel& model, Documents&& documents) {
    std::size_t tokens = 0;
    std::size_t words = 0;
    for (const auto& doc : documents) {
        const std::u32string norm = normalize(utf8::decode(std::string_view(doc)), model.normalizer());
        for (const auto& word : pretokenize(norm)) {
            tokens += model.encode_word(word).size();
            ++words;
        }
    }
    if (words == 0) throw InputError("fertility: corpus contains no words");
    return static_cast<double>(tokens) / static_cast<double>(words);
}

}  // namespace alm
