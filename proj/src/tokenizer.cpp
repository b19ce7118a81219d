#include "alm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_set>

#include "alm/error.hpp"
#include "alm/utf8.hpp"

namespace alm {
namespace {

std::uint64_t pair_key(int left, int right) noexcept {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
           static_cast<std::uint32_t>(right);
}

int key_left(std::uint64_t key) noexcept { return static_cast<int>(key >> 32); }
int key_right(std::uint64_t key) noexcept { return static_cast<int>(key & 0xFFFFFFFFu); }

std::vector<std::string> special_strings(const SpecialTokens& s) {
    return {s.unk, s.bos, s.eos, s.pad};
}

// Incremental BPE trainer. Pair counts are kept up to date as merges are
// applied; a lazily invalidated heap yields the next pair in
// (count desc, left asc, right asc) order.
class BpeTrainer {
public:
    BpeTrainer(const WordCounter& counts, std::size_t vocab_size, const SpecialTokens& specials)
        : vocab_size_(vocab_size) {
        for (const auto& s : special_strings(specials)) add_symbol(s);
        if (symbols_.size() != kNumSpecials) throw ConfigError("special tokens must be distinct");
        specials_.insert(symbols_.begin(), symbols_.end());

        std::set<char32_t> alphabet;
        for (const auto& [word, n] : counts.words()) alphabet.insert(word.begin(), word.end());
        for (char32_t cp : alphabet) {
            std::string s;
            utf8::append(s, cp);
            if (specials_.contains(s)) throw ConfigError("special token collides with corpus codepoint '" + s + "'");
            add_symbol(s);
        }
        if (vocab_size < symbols_.size()) {
            throw ConfigError("vocab_size " + std::to_string(vocab_size) + " is smaller than base alphabet + specials (" +
                              std::to_string(symbols_.size()) + ")");
        }

        words_.reserve(counts.words().size());
        for (const auto& [word, n] : counts.words()) {
            Word w;
            w.count = n;
            for (char32_t cp : word) {
                std::string s;
                utf8::append(s, cp);
                w.symbols.push_back(symbol_ids_.at(s));
            }
            words_.push_back(std::move(w));
        }
        for (std::size_t wi = 0; wi < words_.size(); ++wi) {
            const auto& w = words_[wi];
            for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
                const auto key = pair_key(w.symbols[i], w.symbols[i + 1]);
                pair_counts_[key] += w.count;
                pair_words_[key].push_back(static_cast<int>(wi));
            }
        }
        for (const auto& [key, n] : pair_counts_) heap_.push(Candidate{n, key, this});
        seen_stamp_.assign(words_.size(), 0);
    }

    void run(std::vector<std::pair<std::string, std::string>>& merges, BpeTrainLog* log) {
        int stamp = 0;
        while (symbols_.size() < vocab_size_ && !heap_.empty()) {
            const Candidate top = heap_.top();
            heap_.pop();
            auto it = pair_counts_.find(top.key);
            if (it == pair_counts_.end() || it->second != top.count) continue;  // stale
            if (top.count < 2) break;

            const int left = key_left(top.key);
            const int right = key_right(top.key);
            std::string merged = symbols_[left] + symbols_[right];
            if (specials_.contains(merged)) continue;  // never merge into a special
            const int merged_id = add_symbol(merged);
            merges.emplace_back(symbols_[left], symbols_[right]);
            if (log) log->merge_counts.push_back(top.count);
            apply_merge(top.key, left, right, merged_id, ++stamp);
        }
    }

    std::vector<std::string> take_vocab() { return std::move(symbols_); }

private:
    struct Word {
        std::vector<int> symbols;
        std::size_t count = 0;
    };

    struct Candidate {
        std::size_t count;
        std::uint64_t key;
        const BpeTrainer* owner;

        // std::priority_queue pops the "largest"; larger = higher count, then
        // lexicographically smaller (left, right).
        bool operator<(const Candidate& o) const {
            if (count != o.count) return count < o.count;
            const auto& a = owner->symbols_;
            const int l1 = key_left(key), l2 = key_left(o.key);
            if (a[l1] != a[l2]) return a[l1] > a[l2];
            return a[key_right(key)] > a[key_right(o.key)];
        }
    };

    int add_symbol(const std::string& s) {
        auto [it, inserted] = symbol_ids_.emplace(s, static_cast<int>(symbols_.size()));
        if (inserted) symbols_.push_back(s);
        return it->second;
    }

    void apply_merge(std::uint64_t key, int left, int right, int merged_id, int stamp) {
        std::vector<std::uint64_t> touched;
        const std::vector<int> candidates = std::move(pair_words_[key]);
        pair_words_.erase(key);
        for (int wi : candidates) {
            if (seen_stamp_[wi] == stamp) continue;
            seen_stamp_[wi] = stamp;
            Word& w = words_[wi];
            auto& syms = w.symbols;
            bool present = false;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                if (syms[i] == left && syms[i + 1] == right) {
                    present = true;
                    break;
                }
            }
            if (!present) continue;

            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                const auto k = pair_key(syms[i], syms[i + 1]);
                auto pc = pair_counts_.find(k);
                pc->second -= w.count;
                touched.push_back(k);
            }
            std::vector<int> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size();) {
                if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                    next.push_back(merged_id);
                    i += 2;
                } else {
                    next.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(next);
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                const auto k = pair_key(syms[i], syms[i + 1]);
                pair_counts_[k] += w.count;
                touched.push_back(k);
                if (syms[i] == merged_id || syms[i + 1] == merged_id) pair_words_[k].push_back(wi);
            }
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (auto k : touched) {
            auto pc = pair_counts_.find(k);
            if (pc->second == 0) {
                pair_counts_.erase(pc);
            } else {
                heap_.push(Candidate{pc->second, k, this});
            }
        }
    }

    std::size_t vocab_size_;
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> symbol_ids_;
    std::unordered_set<std::string> specials_;
    std::vector<Word> words_;
    std::unordered_map<std::uint64_t, std::size_t> pair_counts_;
    std::unordered_map<std::uint64_t, std::vector<int>> pair_words_;
    std::priority_queue<Candidate> heap_;
    std::vector<int> seen_stamp_;
};

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::size_t vocab_preset(std::string_view name) {
    if (name == "32K") return 32000;
    if (name == "50K") return 50000;
    if (name == "64K") return 64000;
    if (name == "86K") return 86000;
    throw ConfigError("unknown vocab preset '" + std::string(name) + "' (expected 32K, 50K, 64K or 86K)");
}

void WordCounter::add_document(std::string_view utf8) {
    const std::u32string norm = normalize(utf8::decode(utf8), normalizer_);
    for (auto& word : pretokenize(norm)) add_word(word);
    ++documents_;
}

void WordCounter::add_word(const std::u32string& pretoken, std::size_t count) {
    words_[pretoken] += count;
    total_words_ += count;
}

TokenizerModel TokenizerModel::train(const WordCounter& counts, std::size_t vocab_size,
                                     const SpecialTokens& specials, BpeTrainLog* log) {
    if (counts.total_words() == 0) throw InputError("train_bpe: corpus is empty");
    BpeTrainer trainer(counts, vocab_size, specials);
    std::vector<std::pair<std::string, std::string>> merges;
    trainer.run(merges, log);
    return from_parts(counts.normalizer(), specials, trainer.take_vocab(), std::move(merges));
}

TokenizerModel TokenizerModel::train(std::span<const std::string> documents, std::size_t vocab_size,
                                     const NormalizerConfig& normalizer, const SpecialTokens& specials,
                                     BpeTrainLog* log) {
    WordCounter counts(normalizer);
    for (const auto& doc : documents) counts.add_document(doc);
    return train(counts, vocab_size, specials, log);
}

TokenizerModel TokenizerModel::from_parts(NormalizerConfig normalizer, SpecialTokens specials,
                                          std::vector<std::string> vocab,
                                          std::vector<std::pair<std::string, std::string>> merges) {
    TokenizerModel m;
    m.normalizer_ = normalizer;
    m.specials_ = std::move(specials);
    m.vocab_ = std::move(vocab);

    const auto specs = special_strings(m.specials_);
    if (m.vocab_.size() < specs.size()) throw InputError("tokenizer vocab is smaller than the special set");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (m.vocab_[i] != specs[i]) {
            throw InputError("tokenizer vocab id " + std::to_string(i) + " must be special token '" + specs[i] + "'");
        }
    }
    for (std::size_t i = 0; i < m.vocab_.size(); ++i) {
        if (m.vocab_[i].empty()) throw InputError("empty token string at id " + std::to_string(i));
        if (!m.token_to_id_.emplace(m.vocab_[i], static_cast<int>(i)).second) {
            throw InputError("duplicate token '" + m.vocab_[i] + "' in vocab");
        }
    }
    m.merges_.reserve(merges.size());
    for (std::size_t r = 0; r < merges.size(); ++r) {
        auto& [left, right] = merges[r];
        MergeRule rule{static_cast<int>(r), std::move(left), std::move(right), {}};
        rule.merged = rule.left + rule.right;
        for (const auto* t : {&rule.left, &rule.right, &rule.merged}) {
            auto it = m.token_to_id_.find(*t);
            if (it == m.token_to_id_.end()) throw InputError("merge token '" + *t + "' missing from vocab");
            if (it->second < kNumSpecials) throw InputError("special token '" + *t + "' used in a merge");
        }
        m.merges_.push_back(std::move(rule));
    }
    m.build_indices();
    return m;
}

void TokenizerModel::build_indices() {
    codepoint_to_id_.clear();
    merge_index_.clear();
    for (std::size_t i = kNumSpecials; i < vocab_.size(); ++i) {
        const std::string& t = vocab_[i];
        if (utf8::find_invalid(t) != std::string::npos) throw InputError("token at id " + std::to_string(i) + " is not UTF-8");
        const std::u32string cps = utf8::decode(t);
        if (cps.size() == 1) codepoint_to_id_.emplace(cps[0], static_cast<int>(i));
    }
    for (const auto& rule : merges_) {
        const auto key = pair_key(token_to_id_.at(rule.left), token_to_id_.at(rule.right));
        // First (lowest-rank) rule wins if a pair was listed twice.
        merge_index_.emplace(key, MergeTarget{rule.rank, token_to_id_.at(rule.merged)});
    }
}

std::vector<int> TokenizerModel::encode_word(const std::u32string& pretoken) const {
    std::vector<int> ids;
    ids.reserve(pretoken.size());
    for (char32_t cp : pretoken) {
        auto it = codepoint_to_id_.find(cp);
        ids.push_back(it == codepoint_to_id_.end() ? kUnkId : it->second);
    }
    for (;;) {
        int best_rank = -1;
        std::uint64_t best_key = 0;
        int best_merged = 0;
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            const auto key = pair_key(ids[i], ids[i + 1]);
            auto it = merge_index_.find(key);
            if (it != merge_index_.end() && (best_rank < 0 || it->second.rank < best_rank)) {
                best_rank = it->second.rank;
                best_key = key;
                best_merged = it->second.merged;
            }
        }
        if (best_rank < 0) break;
        const int left = key_left(best_key);
        const int right = key_right(best_key);
        std::size_t out = 0;
        for (std::size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
                ids[out++] = best_merged;
                i += 2;
            } else {
                ids[out++] = ids[i++];
            }
        }
        ids.resize(out);
    }
    return ids;
}

std::vector<int> TokenizerModel::encode_normalized(std::u32string_view normalized) const {
    std::vector<int> ids;
    for (const auto& word : pretokenize(normalized)) {
        const auto piece = encode_word(word);
        ids.insert(ids.end(), piece.begin(), piece.end());
    }
    return ids;
}

std::vector<int> TokenizerModel::encode(std::string_view utf8) const {
    return encode_normalized(normalize(utf8::decode(utf8), normalizer_));
}

std::string TokenizerModel::decode(std::span<const int> ids) const {
    std::string joined;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
            throw RangeError("token id " + std::to_string(id) + " outside vocab of size " + std::to_string(vocab_.size()));
        }
        if (id != kUnkId && id < kNumSpecials) continue;
        joined += vocab_[static_cast<std::size_t>(id)];
    }
    std::string out;
    out.reserve(joined.size());
    static constexpr std::string_view marker = "\xE2\x96\x81";
    for (std::size_t i = 0; i < joined.size();) {
        if (joined.compare(i, marker.size(), marker) == 0) {
            out.push_back(' ');
            i += marker.size();
        } else {
            out.push_back(joined[i++]);
        }
    }
    if (!out.empty() && out.front() == ' ') out.erase(0, 1);
    return out;
}

const std::string& TokenizerModel::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
        throw RangeError("token id " + std::to_string(id) + " outside vocab of size " + std::to_string(vocab_.size()));
    }
    return vocab_[static_cast<std::size_t>(id)];
}

std::optional<int> TokenizerModel::id_of(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
}

nlohmann::json TokenizerModel::to_json() const {
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& r : merges_) merges.push_back({r.left, r.right});
    return nlohmann::json{
        {"version", 1},
        {"normalizer", normalizer_},
        {"specials", {{"unk", specials_.unk}, {"bos", specials_.bos}, {"eos", specials_.eos}, {"pad", specials_.pad}}},
        {"vocab", vocab_},
        {"merges", std::move(merges)},
    };
}

TokenizerModel TokenizerModel::from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != 1) throw InputError("unsupported tokenizer version");
        SpecialTokens specials;
        const auto& s = j.at("specials");
        specials.unk = s.at("unk").get<std::string>();
        specials.bos = s.at("bos").get<std::string>();
        specials.eos = s.at("eos").get<std::string>();
        specials.pad = s.at("pad").get<std::string>();
        std::vector<std::pair<std::string, std::string>> merges;
        for (const auto& m : j.at("merges")) {
            if (!m.is_array() || m.size() != 2) throw InputError("merge entries must be [left, right] pairs");
            merges.emplace_back(m[0].get<std::string>(), m[1].get<std::string>());
        }
        return from_parts(j.at("normalizer").get<NormalizerConfig>(), std::move(specials),
                          j.at("vocab").get<std::vector<std::string>>(), std::move(merges));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed tokenizer file: ") + e.what());
    }
}

void TokenizerModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write tokenizer file " + path.string());
    out << to_json().dump() << '\n';
    if (!out) throw Error("failed writing tokenizer file " + path.string());
}

TokenizerModel TokenizerModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open tokenizer file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (auto bad = utf8::find_invalid(text); bad != std::string::npos) {
        throw DecodeError("tokenizer file " + path.string() + " is not UTF-8", bad);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("tokenizer file " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

std::string TokenizerModel::content_hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
    return buf;
}

}  // namespace alm
