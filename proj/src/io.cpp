#include "alm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <unistd.h>

#include "alm/error.hpp"
#include "alm/utf8.hpp"

namespace alm {

namespace fs = std::filesystem;

namespace {

std::string_view kind_name(CheckpointKind k) { return k == CheckpointKind::lm ? "lm" : "classifier"; }

CheckpointKind parse_kind(const std::string& s) {
    if (s == "lm") return CheckpointKind::lm;
    if (s == "classifier") return CheckpointKind::classifier;
    throw InputError("checkpoint kind '" + s + "' is not lm or classifier");
}

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return r;
}

std::vector<std::string> expected_names(const CheckpointHeader& h) {
    auto names = parameter_names(h.model_config);
    if (h.kind == CheckpointKind::classifier) {
        names.emplace_back("cls.w");
        names.emplace_back("cls.b");
    }
    return names;
}

std::vector<Shape> expected_shapes(const CheckpointHeader& h) {
    auto shapes = parameter_shapes(h.model_config);
    if (h.kind == CheckpointKind::classifier) {
        shapes.push_back({static_cast<std::size_t>(h.model_config.d_model), 2});
        shapes.push_back({2});
    }
    return shapes;
}

[[noreturn]] void bad_checkpoint(const fs::path& p, const std::string& why) {
    throw InputError("checkpoint " + p.string() + ": " + why);
}

CheckpointHeader parse_header(const fs::path& path, const nlohmann::json& j) {
    CheckpointHeader h;
    try {
        h.format_version = j.at("format_version").get<int>();
        if (h.format_version != kCheckpointVersion)
            bad_checkpoint(path, "unsupported format_version " + std::to_string(h.format_version));
        h.kind = parse_kind(j.at("kind").get<std::string>());
        h.model_config = j.at("model_config").get<ModelConfig>();
        h.tokenizer_hash = j.at("tokenizer_hash").get<std::string>();
        h.step = j.at("step").get<long>();
        h.seed = j.at("seed").get<std::uint64_t>();
        h.metrics = j.value("metrics", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        bad_checkpoint(path, std::string("malformed header: ") + e.what());
    }
    return h;
}

std::string read_header_line(std::ifstream& in, const fs::path& path) {
    std::string line;
    if (!std::getline(in, line)) bad_checkpoint(path, "missing header");
    return line;
}

std::ifstream open_in(const fs::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(std::string("cannot open ") + what + " " + path.string());
    return in;
}

std::string where(const fs::path& p, std::size_t line) { return p.string() + ":" + std::to_string(line); }

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; });
}

template <class Fn>
auto records(const fs::path& path, const char* kind, Fn&& convert) {
    std::vector<std::invoke_result_t<Fn, const nlohmann::json&>> out;
    std::ifstream in = open_in(path, "dataset");
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (blank(line)) continue;
        try {
            out.push_back(convert(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(where(path, no) + ": bad " + kind + " record: " + e.what());
        } catch (const ValidationError& e) {
            throw InputError(where(path, no) + ": " + e.what());
        }
    }
    return out;
}

std::string required_string(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_string()) throw InputError(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

}  // namespace

// ---- checkpoints

void save_checkpoint(const fs::path& path, const CheckpointHeader& header, const Parameters& params) {
    const auto names = expected_names(header);
    if (params.size() != names.size())
        throw ContractError("checkpoint expects " + std::to_string(names.size()) + " tensors, got " +
                            std::to_string(params.size()));
    nlohmann::json j{{"format_version", header.format_version},
                     {"kind", kind_name(header.kind)},
                     {"model_config", header.model_config},
                     {"tokenizer_hash", header.tokenizer_hash},
                     {"step", header.step},
                     {"seed", header.seed},
                     {"metrics", header.metrics}};
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& name : names) {
        const Tensor& t = params.at(name);
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    }
    j["tensors"] = tensors;

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        out << j.dump() << '\n';
        std::vector<std::uint64_t> buf;
        for (const auto& name : names) {
            const auto data = params.at(name).data();
            buf.resize(data.size());
            for (std::size_t i = 0; i < data.size(); ++i) buf[i] = to_le(std::bit_cast<std::uint64_t>(data[i]));
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
        }
        out.flush();
        if (!out) throw Error("failed writing checkpoint " + tmp.string());
    }
    fs::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const fs::path& path) {
    std::ifstream in = open_in(path, "checkpoint");
    const std::string line = read_header_line(in, path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        bad_checkpoint(path, std::string("header is not JSON: ") + e.what());
    }
    return parse_header(path, j);
}

Checkpoint load_checkpoint(const fs::path& path, const std::optional<std::string>& expected_tokenizer_hash) {
    std::ifstream in = open_in(path, "checkpoint");
    const std::string line = read_header_line(in, path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        bad_checkpoint(path, std::string("header is not JSON: ") + e.what());
    }
    Checkpoint ck;
    ck.header = parse_header(path, j);
    if (expected_tokenizer_hash && *expected_tokenizer_hash != ck.header.tokenizer_hash)
        throw MismatchError("checkpoint " + path.string() + " was trained with tokenizer " + ck.header.tokenizer_hash +
                            " but tokenizer " + *expected_tokenizer_hash + " was supplied");

    const auto names = expected_names(ck.header);
    const auto shapes = expected_shapes(ck.header);
    const auto& listed = j.contains("tensors") ? j["tensors"] : nlohmann::json::array();
    if (!listed.is_array() || listed.size() != names.size())
        bad_checkpoint(path, "expected " + std::to_string(names.size()) + " tensors");

    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::string name;
        Shape shape;
        std::size_t offset = 0;
        try {
            name = listed[i].at("name").get<std::string>();
            shape = listed[i].at("shape").get<Shape>();
            offset = listed[i].at("offset").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            bad_checkpoint(path, std::string("bad tensor entry: ") + e.what());
        }
        if (name != names[i]) bad_checkpoint(path, "tensor " + std::to_string(i) + " is '" + name + "', expected '" + names[i] + "'");
        if (shape != shapes[i])
            bad_checkpoint(path, name + " has shape " + shape_str(shape) + ", expected " + shape_str(shapes[i]));
        if (offset != expected_offset) bad_checkpoint(path, name + " has offset " + std::to_string(offset));
        const std::size_t n = shape_numel(shape);
        std::vector<std::uint64_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8));
        if (static_cast<std::size_t>(in.gcount()) != n * 8) bad_checkpoint(path, "payload truncated in " + name);
        std::vector<double> values(n);
        for (std::size_t k = 0; k < n; ++k) values[k] = std::bit_cast<double>(to_le(raw[k]));
        ck.params.add(name, Tensor::from(shape, std::move(values), true));
        expected_offset += n;
    }
    if (in.peek() != std::char_traits<char>::eof()) bad_checkpoint(path, "trailing bytes after payload");
    return ck;
}

GptModel model_from_checkpoint(const Checkpoint& ckpt) {
    Parameters p;
    for (const auto& name : parameter_names(ckpt.header.model_config)) p.add(name, ckpt.params.at(name));
    return GptModel(ckpt.header.model_config, std::move(p));
}

Classifier classifier_from_checkpoint(const Checkpoint& ckpt, std::uint64_t head_seed) {
    GptModel backbone = model_from_checkpoint(ckpt);
    if (ckpt.header.kind == CheckpointKind::lm) return Classifier::attach(std::move(backbone), head_seed);
    Parameters head;
    head.add("cls.w", ckpt.params.at("cls.w"));
    head.add("cls.b", ckpt.params.at("cls.b"));
    return Classifier(std::move(backbone), std::move(head));
}

// ---- corpus streaming

CorpusStream::CorpusStream(const fs::path& path) {
    std::error_code ec;
    if (fs::is_directory(path, ec)) {
        for (const auto& e : fs::recursive_directory_iterator(path))
            if (e.is_regular_file()) paths_.push_back(e.path());
        std::sort(paths_.begin(), paths_.end());
    } else if (fs::exists(path, ec)) {
        paths_.push_back(path);
    } else {
        throw InputError("corpus path " + path.string() + " does not exist");
    }
}

bool CorpusStream::open_next_file() {
    in_.close();
    if (file_index_ >= paths_.size()) return false;
    current_path_ = paths_[file_index_++];
    in_ = open_in(current_path_, "corpus file");
    jsonl_ = current_path_.extension() == ".jsonl";
    line_no_ = 0;
    return true;
}

bool CorpusStream::next(std::string& document) {
    for (;;) {
        if (!in_.is_open() || !std::getline(in_, line_)) {
            if (!open_next_file()) return false;
            continue;
        }
        ++line_no_;
        if (!line_.empty() && line_.back() == '\r') line_.pop_back();
        if (auto bad = utf8::find_invalid(line_); bad != std::string::npos)
            throw InputError(where(current_path_, line_no_) + ": invalid UTF-8 at byte " + std::to_string(bad));
        if (blank(line_)) {
            ++blank_;
            continue;
        }
        if (jsonl_) {
            try {
                const auto j = nlohmann::json::parse(line_);
                document = required_string(j, "document");
            } catch (const nlohmann::json::exception& e) {
                throw InputError(where(current_path_, line_no_) + ": bad document record: " + e.what());
            } catch (const InputError& e) {
                throw InputError(where(current_path_, line_no_) + ": " + e.what());
            }
            if (blank(document)) {
                ++blank_;
                continue;
            }
        } else {
            document.swap(line_);
        }
        ++documents_;
        return true;
    }
}

std::vector<std::string> read_corpus(const fs::path& path) {
    CorpusStream s(path);
    std::vector<std::string> out;
    for (const auto& d : s) out.push_back(d);
    return out;
}

// ---- datasets

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
    return records(path, "JSON", [](const nlohmann::json& j) { return j; });
}

std::vector<PromptCompletion> read_prompt_completion(const fs::path& path) {
    return records(path, "prompt/completion", [](const nlohmann::json& j) {
        return PromptCompletion{required_string(j, "prompt"), required_string(j, "completion")};
    });
}

std::vector<LabeledText> read_labeled(const fs::path& path) {
    return records(path, "labeled", [](const nlohmann::json& j) {
        const auto& l = j.at("label");
        if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1))
            throw RangeError("label must be 0 or 1");
        return LabeledText{required_string(j, "text"), l.get<int>()};
    });
}

std::vector<McRecord> read_mc_records(const fs::path& path) {
    return records(path, "multiple-choice", [](const nlohmann::json& j) { return j.get<McRecord>(); });
}

std::vector<GenerationPair> read_generation_pairs(const fs::path& path) {
    return records(path, "generation", [](const nlohmann::json& j) {
        return GenerationPair{required_string(j, "hypothesis"), required_string(j, "reference")};
    });
}

void append_jsonl(const fs::path& path, const nlohmann::json& value) {
    const std::string line = value.dump() + "\n";
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw Error("cannot open " + path.string() + " for appending");
    const auto n = ::write(fd, line.data(), line.size());
    ::close(fd);
    if (n != static_cast<ssize_t>(line.size())) throw Error("short write to " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

std::size_t split_point(std::size_t n, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train fraction must lie strictly between 0 and 1");
    return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
}

}  // namespace alm
