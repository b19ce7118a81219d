#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/eval.hpp"
#include "alm/gpt.hpp"
#include "alm/rng.hpp"
#include "alm/train.hpp"

namespace alm {

// ---- checkpoints
//
// One file: a single JSON header line, then every tensor's float64 values in
// little-endian order. Header tensor offsets count doubles from the start of
// the payload.

inline constexpr int kCheckpointVersion = 1;

enum class CheckpointKind { lm, classifier };

struct CheckpointHeader {
    int format_version = kCheckpointVersion;
    CheckpointKind kind = CheckpointKind::lm;
    ModelConfig model_config;
    std::string tokenizer_hash;
    long step = 0;
    std::uint64_t seed = 0;
    nlohmann::json metrics = nlohmann::json::object();
};

struct Checkpoint {
    CheckpointHeader header;
    Parameters params;
};

// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const Parameters& params);
// Reads only the header line.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);
// Throws MismatchError when expected_tokenizer_hash is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_tokenizer_hash = std::nullopt);

GptModel model_from_checkpoint(const Checkpoint& ckpt);
// Accepts classifier checkpoints, or attaches a fresh head to an LM checkpoint.
Classifier classifier_from_checkpoint(const Checkpoint& ckpt, std::uint64_t head_seed = 0);

// ---- corpus streaming

// Documents from a file or a directory tree (regular files in sorted path
// order). ".jsonl" files hold {"document": str} per line, anything else one
// document per line. Blank lines are skipped; only one line is held at a time.
class CorpusStream {
public:
    explicit CorpusStream(const std::filesystem::path& path);

    // False at end of stream.
    bool next(std::string& document);

    std::size_t documents() const noexcept { return documents_; }
    std::size_t blank_lines() const noexcept { return blank_; }
    std::size_t files() const noexcept { return file_index_; }

    class iterator {
    public:
        using value_type = std::string;
        using difference_type = std::ptrdiff_t;
        iterator() = default;
        explicit iterator(CorpusStream* s) : stream_(s) { ++*this; }
        const std::string& operator*() const { return current_; }
        iterator& operator++() {
            if (!stream_->next(current_)) stream_ = nullptr;
            return *this;
        }
        void operator++(int) { ++*this; }
        bool operator==(std::default_sentinel_t) const { return stream_ == nullptr; }

    private:
        CorpusStream* stream_ = nullptr;
        std::string current_;
    };

    iterator begin() { return iterator(this); }
    std::default_sentinel_t end() { return {}; }

private:
    bool open_next_file();

    std::vector<std::filesystem::path> paths_;
    std::size_t file_index_ = 0;
    std::ifstream in_;
    std::filesystem::path current_path_;
    bool jsonl_ = false;
    std::size_t line_no_ = 0;
    std::size_t documents_ = 0;
    std::size_t blank_ = 0;
    std::string line_;
};

std::vector<std::string> read_corpus(const std::filesystem::path& path);

// ---- JSONL datasets

// Parses every non-blank line as a JSON value; errors carry file and line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

std::vector<PromptCompletion> read_prompt_completion(const std::filesystem::path& path);
std::vector<LabeledText> read_labeled(const std::filesystem::path& path);
std::vector<McRecord> read_mc_records(const std::filesystem::path& path);

struct GenerationPair {
    std::string hypothesis;
    std::string reference;
};
std::vector<GenerationPair> read_generation_pairs(const std::filesystem::path& path);

// Appends one line with a single write call.
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& value);
void write_text(const std::filesystem::path& path, const std::string& text);

// Deterministic shuffle per seed, then the first round(fraction * n) records
// go to train.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split(std::vector<T> data, double train_fraction, std::uint64_t seed);

std::size_t split_point(std::size_t n, double train_fraction);

template <class T>
std::pair<std::vector<T>, std::vector<T>> split(std::vector<T> data, double train_fraction, std::uint64_t seed) {
    const std::size_t cut = split_point(data.size(), train_fraction);
    Rng(seed).shuffle(data);
    std::vector<T> test(std::make_move_iterator(data.begin() + static_cast<std::ptrdiff_t>(cut)),
                        std::make_move_iterator(data.end()));
    data.resize(cut);
    return {std::move(data), std::move(test)};
}

}  // namespace alm
