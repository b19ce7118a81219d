// alm: command-line front end for the normalizer, tokenizer, model training
// and evaluation. Results go to stdout, JSON log lines to stderr.
//
// Exit codes: 0 ok, 1 validation error (bad flags, config or input),
// 2 runtime error.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/arabic_norm.hpp"
#include "alm/error.hpp"
#include "alm/eval.hpp"
#include "alm/gpt.hpp"
#include "alm/io.hpp"
#include "alm/tokenizer.hpp"
#include "alm/train.hpp"
#include "alm/utf8.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config file support: a flat JSON object whose keys are long flag names
// of the selected subcommand ({"max-steps": 10}). Nested objects keyed by a
// subcommand name are also accepted.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(const CLI::App* app) : app_(app) {}

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<std::string> parents;
        for (const auto* sub : app_->get_subcommands()) parents.push_back(sub->get_name());
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                for (const auto& [k2, v2] : value.items()) items.push_back(item({key}, k2, v2));
            } else {
                items.push_back(item(parents, key, value));
            }
        }
        return items;
    }

private:
    static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& name, const json& v) {
        CLI::ConfigItem it;
        it.parents = std::move(parents);
        it.name = name;
        if (v.is_boolean())
            it.inputs = {v.get<bool>() ? "true" : "false"};
        else if (v.is_string())
            it.inputs = {v.get<std::string>()};
        else if (v.is_array())
            for (const auto& e : v) it.inputs.push_back(e.is_string() ? e.get<std::string>() : e.dump());
        else
            it.inputs = {v.dump()};
        return it;
    }

    const CLI::App* app_;
};

void log(json event) {
    std::cerr << event.dump() << '\n';
}

void emit(const json& result) { std::cout << result.dump() << '\n'; }

// ---- shared option groups

struct NormOpts {
    std::optional<bool> unicode_canonicalize, preserve_diacritics, remove_tatweel, collapse_whitespace,
        lowercase_latin, fold_alef;

    void add(CLI::App* app) {
        app->add_option("--unicode-canonicalize", unicode_canonicalize, "NFKC on Arabic runs (true/false)");
        app->add_option("--preserve-diacritics", preserve_diacritics, "keep tashkeel (true/false)");
        app->add_option("--remove-tatweel", remove_tatweel, "drop U+0640 (true/false)");
        app->add_option("--collapse-whitespace", collapse_whitespace, "(true/false)");
        app->add_option("--lowercase-latin", lowercase_latin, "(true/false)");
        app->add_option("--fold-alef", fold_alef, "map hamzated alef forms to bare alef (true/false)");
    }

    alm::NormalizerConfig get() const {
        alm::NormalizerConfig c;
        if (unicode_canonicalize) c.unicode_canonicalize = *unicode_canonicalize;
        if (preserve_diacritics) c.preserve_diacritics = *preserve_diacritics;
        if (remove_tatweel) c.remove_tatweel = *remove_tatweel;
        if (collapse_whitespace) c.collapse_whitespace = *collapse_whitespace;
        if (lowercase_latin) c.lowercase_latin = *lowercase_latin;
        if (fold_alef) c.fold_alef = *fold_alef;
        return c;
    }
};

struct ModelOpts {
    std::string preset;
    std::optional<int> n_layers, n_heads, d_model, d_ff, vocab_size, ctx_len;
    std::optional<double> attn_dropout, embd_dropout, resid_dropout;
    std::optional<bool> tie_lm_head;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "model preset: 0.1B or 0.3B");
        app->add_option("--n-layers", n_layers);
        app->add_option("--n-heads", n_heads);
        app->add_option("--d-model", d_model);
        app->add_option("--d-ff", d_ff, "MLP width (default 4*d_model)");
        app->add_option("--vocab-size", vocab_size, "defaults to the tokenizer's size");
        app->add_option("--ctx-len", ctx_len);
        app->add_option("--attn-dropout", attn_dropout);
        app->add_option("--embd-dropout", embd_dropout);
        app->add_option("--resid-dropout", resid_dropout);
        app->add_option("--tie-lm-head", tie_lm_head, "(true/false)");
    }

    // Starts from the preset (or 0.1B) and applies explicit overrides.
    alm::ModelConfig get(std::optional<int> tokenizer_vocab) const {
        alm::ModelConfig c = alm::preset(preset.empty() ? "0.1B" : preset);
        if (n_layers) c.n_layers = *n_layers;
        if (n_heads) c.n_heads = *n_heads;
        if (d_model) c.d_model = *d_model;
        if (d_ff) c.d_ff = *d_ff;
        if (ctx_len) c.ctx_len = *ctx_len;
        if (attn_dropout) c.attn_dropout = *attn_dropout;
        if (embd_dropout) c.embd_dropout = *embd_dropout;
        if (resid_dropout) c.resid_dropout = *resid_dropout;
        if (tie_lm_head) c.tie_lm_head = *tie_lm_head;
        if (vocab_size) {
            if (tokenizer_vocab && *vocab_size != *tokenizer_vocab)
                throw alm::ConfigError("--vocab-size " + std::to_string(*vocab_size) + " differs from the tokenizer's " +
                                       std::to_string(*tokenizer_vocab));
            c.vocab_size = *vocab_size;
        } else if (tokenizer_vocab) {
            c.vocab_size = *tokenizer_vocab;
        }
        c.validate();
        return c;
    }
};

struct TrainOpts {
    std::optional<int> batch_size, seq_len, epochs;
    std::optional<long> max_steps, warmup_steps, eval_every;
    std::optional<double> lr, lr_final, beta1, beta2, eps, grad_clip;
    std::uint64_t seed = 0;

    void add(CLI::App* app) {
        app->add_option("--batch-size", batch_size);
        app->add_option("--seq-len", seq_len, "pretraining block length");
        app->add_option("--max-steps", max_steps, "0 derives steps from epochs");
        app->add_option("--epochs", epochs);
        app->add_option("--lr", lr, "initial learning rate");
        app->add_option("--lr-final", lr_final, "default lr/10");
        app->add_option("--warmup-steps", warmup_steps, "default 1% of steps");
        app->add_option("--adam-beta1", beta1);
        app->add_option("--adam-beta2", beta2);
        app->add_option("--adam-eps", eps);
        app->add_option("--grad-clip", grad_clip, "global norm, 0 = off");
        app->add_option("--eval-every", eval_every, "loss-curve interval");
        app->add_option("--seed", seed);
    }

    alm::TrainConfig get(alm::TrainConfig c = {}) const {
        if (batch_size) c.batch_size = *batch_size;
        if (seq_len) c.seq_len = *seq_len;
        if (epochs) c.epochs = *epochs;
        if (max_steps) c.max_steps = *max_steps;
        if (warmup_steps) c.warmup_steps = *warmup_steps;
        if (eval_every) c.eval_every = *eval_every;
        if (lr) c.lr_initial = *lr;
        if (lr_final) c.lr_final = *lr_final;
        if (beta1) c.adam_beta1 = *beta1;
        if (beta2) c.adam_beta2 = *beta2;
        if (eps) c.adam_eps = *eps;
        if (grad_clip) c.grad_clip_norm = *grad_clip;
        c.seed = seed;
        c.validate();
        return c;
    }
};

struct Sampler {
    std::string strategy = "greedy";
    double temperature = 1.0;
    int top_k = 40;

    void add(CLI::App* app) {
        app->add_option("--strategy", strategy, "greedy, temperature or top_k")
            ->check(CLI::IsMember({"greedy", "temperature", "top_k"}));
        app->add_option("--temperature", temperature);
        app->add_option("--top-k", top_k);
    }

    alm::Sampling get() const {
        if (strategy == "temperature") return alm::Sampling::with_temperature(temperature);
        if (strategy == "top_k") return alm::Sampling::with_top_k(top_k, temperature);
        return alm::Sampling::greedy();
    }
};

// ---- stream helpers

struct Input {
    std::ifstream file;
    std::istream* stream = &std::cin;

    explicit Input(const std::string& path) {
        if (path != "-") {
            file.open(path, std::ios::binary);
            if (!file) throw alm::InputError("cannot open " + path);
            stream = &file;
        }
    }
};

struct Output {
    std::ofstream file;
    std::ostream* stream = &std::cout;

    explicit Output(const std::string& path) {
        if (path != "-") {
            file.open(path, std::ios::binary | std::ios::trunc);
            if (!file) throw alm::Error("cannot write " + path);
            stream = &file;
        }
    }
};

std::string checked_line(std::string line, std::size_t no, const std::string& source) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (auto bad = alm::utf8::find_invalid(line); bad != std::string::npos)
        throw alm::InputError(source + ":" + std::to_string(no) + ": invalid UTF-8 at byte " + std::to_string(bad));
    return line;
}

alm::TokenizerModel load_tokenizer(const std::string& path) { return alm::TokenizerModel::load(path); }

alm::Checkpoint load_guarded(const std::string& ckpt, const alm::TokenizerModel& tok) {
    return alm::load_checkpoint(ckpt, tok.content_hash());
}

alm::StepCallback step_logger() {
    return [](const alm::LossPoint& p) {
        log({{"event", "step"}, {"step", p.step}, {"loss", p.loss}, {"lr", p.lr}, {"tokens_seen", p.tokens_seen}});
    };
}

void write_report(const std::string& path, const alm::TrainingReport& r) {
    if (!path.empty()) alm::write_text(path, r.to_jsonl());
}

// Wall time stays out: checkpoints must be byte-identical across seeded runs.
json report_summary(const alm::TrainingReport& r) {
    return {{"steps", r.steps},
            {"final_loss", r.final_loss},
            {"tokens_seen", r.tokens_seen},
            {"truncated_records", r.truncated_records}};
}

json result_summary(const alm::TrainingReport& r) {
    json j = report_summary(r);
    j["wall_time_s"] = r.wall_time_s;
    return j;
}

// Runs training; on divergence saves the untouched (last good) parameters
// next to the requested output and rethrows.
template <class Fn>
alm::TrainingReport guarded_training(Fn&& train, const std::string& output, alm::CheckpointHeader header,
                                     const alm::Parameters& params) {
    try {
        return train();
    } catch (const alm::DivergenceError& e) {
        header.metrics = {{"diverged", true}, {"error", e.what()}};
        const std::string rescue = output + ".last_good";
        alm::save_checkpoint(rescue, header, params);
        log({{"event", "diverged"}, {"error", e.what()}, {"checkpoint", rescue}});
        throw;
    }
}

// ---- subcommands

struct Cli {
    CLI::App app{"Arabic GPT toolkit: normalization, BPE tokenization, training and evaluation", "alm"};

    // normalize
    std::string in = "-", out = "-";
    NormOpts norm;
    // tokenizer
    std::string corpus, tokenizer, vocab = "64K";
    // training
    ModelOpts model;
    TrainOpts train;
    bool dry_run = false;
    std::string checkpoint, init_from, output, report, data;
    double train_fraction = 0.7;
    // generation / evaluation
    std::string prompt;
    std::size_t max_new = 64;
    bool raw = false;
    Sampler sampler;
    int max_n = 4, rouge_order = 1;
    std::string results, task, pool, metric = "acc";
    std::size_t k = 0;
    std::string curve, metrics_file;

    Cli() {
        app.require_subcommand(1);
        app.fallthrough();
        app.set_config("--config", "", "JSON file supplying any flag (command line wins)");
        app.config_formatter(std::make_shared<JsonConfig>(&app));
        app.allow_config_extras(CLI::config_extras_mode::error);

        auto* s = app.add_subcommand("normalize", "normalize text line by line");
        s->add_option("--input,-i", in, "input file or - for stdin");
        s->add_option("--output,-o", out, "output file or - for stdout");
        norm.add(s);
        s->callback([this] { cmd_normalize(); });

        s = app.add_subcommand("tok-train", "train a BPE tokenizer on a corpus");
        s->add_option("--corpus", corpus, "text/JSONL file or directory")->required();
        s->add_option("--vocab-size", vocab, "integer or preset 32K/50K/64K/86K");
        s->add_option("--output,-o", output, "tokenizer JSON path")->required();
        norm.add(s);
        s->callback([this] { cmd_tok_train(); });

        s = app.add_subcommand("encode", "text lines to space-separated ids");
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--input,-i", in);
        s->add_option("--output,-o", out);
        s->callback([this] { cmd_encode(); });

        s = app.add_subcommand("decode", "id lines back to text");
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--input,-i", in);
        s->add_option("--output,-o", out);
        s->callback([this] { cmd_decode(); });

        s = app.add_subcommand("pretrain", "causal LM pretraining");
        s->add_option("--tokenizer", tokenizer);
        s->add_option("--corpus", corpus);
        s->add_option("--output,-o", output, "checkpoint path");
        s->add_option("--init-from", init_from, "continue from a checkpoint");
        s->add_option("--report", report, "loss curve JSONL path");
        s->add_flag("--dry-run", dry_run, "print the resolved config and parameter count only");
        model.add(s);
        train.add(s);
        s->callback([this] { cmd_pretrain(); });

        s = app.add_subcommand("finetune-lm", "prompt/completion fine-tuning");
        s->add_option("--checkpoint", checkpoint)->required();
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--data", data, "JSONL of {prompt, completion}")->required();
        s->add_option("--output,-o", output)->required();
        s->add_option("--report", report);
        train.add(s);
        s->callback([this] { cmd_finetune_lm(); });

        s = app.add_subcommand("finetune-cls", "binary classification fine-tuning");
        s->add_option("--checkpoint", checkpoint)->required();
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--data", data, "JSONL of {text, label}")->required();
        s->add_option("--train-fraction", train_fraction, "train share of the split");
        s->add_option("--output,-o", output)->required();
        s->add_option("--report", report);
        train.add(s);
        s->callback([this] { cmd_finetune_cls(); });

        s = app.add_subcommand("generate", "sample continuations");
        s->add_option("--checkpoint", checkpoint)->required();
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--prompt", prompt, "single prompt");
        s->add_option("--input,-i", in, "JSONL of {prompt} when --prompt is absent");
        s->add_option("--max-new", max_new);
        s->add_flag("--raw", raw, "continue the prompt directly instead of prompt+eos");
        s->add_option("--seed", train.seed);
        sampler.add(s);
        s->callback([this] { cmd_generate(); });

        s = app.add_subcommand("eval-gen", "BLEU/ROUGE/F1 over {hypothesis, reference} JSONL");
        s->add_option("--input,-i", in)->required();
        s->add_option("--max-n", max_n);
        s->add_option("--rouge-n", rouge_order);
        s->add_option("--results", results, "append the report to this JSONL");
        s->callback([this] { cmd_eval_gen(); });

        s = app.add_subcommand("eval-cls", "classifier accuracy");
        s->add_option("--checkpoint", checkpoint)->required();
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--data", data)->required();
        s->add_option("--results", results);
        s->callback([this] { cmd_eval_cls(); });

        s = app.add_subcommand("eval-fewshot", "k-shot multiple-choice evaluation");
        s->add_option("--checkpoint", checkpoint)->required();
        s->add_option("--tokenizer", tokenizer)->required();
        s->add_option("--task", task, "JSONL of {context, choices, true}")->required();
        s->add_option("--pool", pool, "few-shot exemplar JSONL");
        s->add_option("--k", k);
        s->add_option("--metric", metric)->check(CLI::IsMember({"acc", "acc_norm", "mc2"}));
        s->add_option("--seed", train.seed);
        s->add_option("--results", results);
        s->callback([this] { cmd_eval_fewshot(); });

        s = app.add_subcommand("report", "render a loss curve and/or results table");
        s->add_option("--curve", curve, "loss curve JSONL");
        s->add_option("--metrics", metrics_file, "results JSONL");
        s->callback([this] { cmd_report(); });

        s = app.add_subcommand("inspect-ckpt", "print a checkpoint header and tensor summary");
        s->add_option("--checkpoint", checkpoint)->required();
        s->add_option("--tokenizer", tokenizer, "verify the tokenizer hash");
        s->callback([this] { cmd_inspect(); });
    }

    void cmd_normalize() {
        const auto cfg = norm.get();
        Input src(in);
        Output dst(out);
        std::string line;
        std::size_t no = 0;
        while (std::getline(*src.stream, line)) {
            line = checked_line(std::move(line), ++no, in);
            *dst.stream << alm::normalize(std::string_view(line), cfg).text << '\n';
        }
        dst.stream->flush();
    }

    void cmd_tok_train() {
        std::size_t size = 0;
        if (!vocab.empty() && std::isdigit(static_cast<unsigned char>(vocab[0])) && vocab.back() != 'K') {
            try {
                size = std::stoul(vocab);
            } catch (const std::exception&) {
                throw alm::ConfigError("bad --vocab-size '" + vocab + "'");
            }
        } else {
            size = alm::vocab_preset(vocab);
        }
        alm::WordCounter counter(norm.get());
        alm::CorpusStream stream(corpus);
        std::string doc;
        while (stream.next(doc)) counter.add_document(doc);
        log({{"event", "corpus"}, {"documents", stream.documents()}, {"blank_lines", stream.blank_lines()}});
        alm::BpeTrainLog train_log;
        const auto tok = alm::TokenizerModel::train(counter, size, {}, &train_log);
        tok.save(output);
        emit({{"tokenizer", output},
              {"vocab_size", tok.vocab_size()},
              {"requested_vocab_size", size},
              {"merges", tok.merges().size()},
              {"hash", tok.content_hash()}});
    }

    void cmd_encode() {
        const auto tok = load_tokenizer(tokenizer);
        Input src(in);
        Output dst(out);
        std::string line;
        std::size_t no = 0;
        while (std::getline(*src.stream, line)) {
            line = checked_line(std::move(line), ++no, in);
            const auto ids = tok.encode(line);
            for (std::size_t i = 0; i < ids.size(); ++i) *dst.stream << (i ? " " : "") << ids[i];
            *dst.stream << '\n';
        }
        dst.stream->flush();
    }

    void cmd_decode() {
        const auto tok = load_tokenizer(tokenizer);
        Input src(in);
        Output dst(out);
        std::string line;
        std::size_t no = 0;
        while (std::getline(*src.stream, line)) {
            ++no;
            std::istringstream ss(line);
            std::vector<int> ids;
            std::string field;
            while (ss >> field) {
                try {
                    std::size_t used = 0;
                    ids.push_back(std::stoi(field, &used));
                    if (used != field.size()) throw std::invalid_argument(field);
                } catch (const std::exception&) {
                    throw alm::InputError(in + ":" + std::to_string(no) + ": '" + field + "' is not a token id");
                }
            }
            *dst.stream << tok.decode(ids) << '\n';
        }
        dst.stream->flush();
    }

    // Encodes the corpus document by document into seq_len+1 blocks.
    std::vector<alm::LmExample> corpus_examples(const alm::TokenizerModel& tok, std::size_t seq_len) {
        alm::CorpusStream stream(corpus);
        std::vector<int> ids;
        std::string doc;
        bool first = true;
        while (stream.next(doc)) {
            if (!first) ids.push_back(alm::kEosId);
            first = false;
            const auto enc = tok.encode(doc);
            ids.insert(ids.end(), enc.begin(), enc.end());
        }
        log({{"event", "corpus"}, {"documents", stream.documents()}, {"tokens", ids.size()}});
        std::vector<alm::LmExample> out;
        for (auto& block : alm::pack_sequences(ids, seq_len + 1))
            out.push_back({{block.begin(), block.end() - 1}, {block.begin() + 1, block.end()}});
        return out;
    }

    void cmd_pretrain() {
        if (dry_run) {
            std::optional<int> tok_vocab;
            if (!tokenizer.empty()) tok_vocab = static_cast<int>(load_tokenizer(tokenizer).vocab_size());
            const auto cfg = model.get(tok_vocab);
            const auto tc = train.get();
            emit({{"dry_run", true},
                  {"preset", model.preset.empty() ? json(nullptr) : json(model.preset)},
                  {"param_count", alm::param_count(cfg)},
                  {"model_config", cfg},
                  {"train_config", tc}});
            return;
        }
        if (tokenizer.empty() || corpus.empty() || output.empty())
            throw alm::ConfigError("pretrain needs --tokenizer, --corpus and --output (or --dry-run)");
        const auto tok = load_tokenizer(tokenizer);
        const auto tc = train.get();
        alm::GptModel m = [&] {
            if (!init_from.empty()) return alm::model_from_checkpoint(load_guarded(init_from, tok));
            return alm::GptModel::initialize(model.get(static_cast<int>(tok.vocab_size())), tc.seed);
        }();
        if (static_cast<std::size_t>(m.config().vocab_size) != tok.vocab_size())
            throw alm::ConfigError("model vocabulary differs from the tokenizer's");
        if (tc.seq_len > m.config().ctx_len)
            throw alm::ConfigError("--seq-len " + std::to_string(tc.seq_len) + " exceeds ctx_len " +
                                   std::to_string(m.config().ctx_len));
        log({{"event", "model"}, {"param_count", alm::param_count(m.config())}});
        const auto examples = corpus_examples(tok, static_cast<std::size_t>(tc.seq_len));

        alm::CheckpointHeader h;
        h.model_config = m.config();
        h.tokenizer_hash = tok.content_hash();
        h.seed = tc.seed;
        const auto rep = guarded_training([&] { return alm::train_lm(m, examples, tc, step_logger()); }, output, h,
                                          m.params());
        h.step = rep.steps;
        h.metrics = report_summary(rep);
        alm::save_checkpoint(output, h, m.params());
        write_report(report, rep);
        json res = result_summary(rep);
        res["checkpoint"] = output;
        res["param_count"] = alm::param_count(m.config());
        emit(res);
    }

    void cmd_finetune_lm() {
        const auto tok = load_tokenizer(tokenizer);
        const auto ck = load_guarded(checkpoint, tok);
        auto m = alm::model_from_checkpoint(ck);
        const auto records = alm::read_prompt_completion(data);
        const auto tc = train.get();
        alm::CheckpointHeader h = ck.header;
        h.seed = tc.seed;
        const auto rep = guarded_training([&] { return alm::finetune_lm(m, tok, records, tc, step_logger()); }, output,
                                          h, m.params());
        if (rep.truncated_records > 0)
            log({{"event", "truncated"}, {"records", rep.truncated_records}});
        h.step = ck.header.step + rep.steps;
        h.metrics = report_summary(rep);
        alm::save_checkpoint(output, h, m.params());
        write_report(report, rep);
        json res = result_summary(rep);
        res["checkpoint"] = output;
        res["records"] = records.size();
        emit(res);
    }

    static double classifier_accuracy(const alm::Classifier& clf, const alm::TokenizerModel& tok,
                                      const std::vector<alm::LabeledText>& records) {
        std::vector<int> pred, gold;
        for (const auto& r : records) {
            pred.push_back(alm::classify(clf, tok, r.text).label);
            gold.push_back(r.label);
        }
        return alm::accuracy(pred, gold);
    }

    void cmd_finetune_cls() {
        const auto tok = load_tokenizer(tokenizer);
        const auto ck = load_guarded(checkpoint, tok);
        alm::TrainConfig defaults;
        defaults.epochs = 3;
        const auto tc = train.get(defaults);
        auto clf = alm::classifier_from_checkpoint(ck, tc.seed);
        auto [train_set, test_set] = alm::split(alm::read_labeled(data), train_fraction, tc.seed);
        if (train_set.empty() || test_set.empty()) throw alm::InputError("split left an empty train or test set");
        const double before = classifier_accuracy(clf, tok, test_set);

        alm::CheckpointHeader h = ck.header;
        h.kind = alm::CheckpointKind::classifier;
        h.seed = tc.seed;
        const auto rep = guarded_training(
            [&] { return alm::finetune_classifier(clf, tok, train_set, tc, step_logger()); }, output, h,
            clf.all_params());
        const double after = classifier_accuracy(clf, tok, test_set);
        h.step = ck.header.step + rep.steps;
        h.metrics = report_summary(rep);
        h.metrics["test_accuracy"] = after;
        alm::save_checkpoint(output, h, clf.all_params());
        write_report(report, rep);
        json res = result_summary(rep);
        res["checkpoint"] = output;
        res["train_size"] = train_set.size();
        res["test_size"] = test_set.size();
        res["base_accuracy"] = before;
        res["accuracy"] = after;
        emit(res);
    }

    void cmd_generate() {
        const auto tok = load_tokenizer(tokenizer);
        const auto m = alm::model_from_checkpoint(load_guarded(checkpoint, tok));
        const auto sampling = sampler.get();
        std::vector<std::string> prompts;
        if (!prompt.empty()) {
            prompts.push_back(prompt);
        } else {
            Input src(in);
            std::string line;
            std::size_t no = 0;
            while (std::getline(*src.stream, line)) {
                line = checked_line(std::move(line), ++no, in);
                if (line.find_first_not_of(" \t") == std::string::npos) continue;
                try {
                    prompts.push_back(json::parse(line).at("prompt").get<std::string>());
                } catch (const json::exception& e) {
                    throw alm::InputError(in + ":" + std::to_string(no) + ": " + e.what());
                }
            }
        }
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const std::uint64_t seed = alm::mix_seed(train.seed, i);
            std::string text;
            if (raw) {
                const auto ids = tok.encode(prompts[i]);
                if (ids.empty()) throw alm::InputError("prompt encodes to no tokens");
                const auto outp = alm::generate(m, ids, max_new, sampling, seed, alm::kEosId);
                std::vector<int> fresh(outp.begin() + static_cast<std::ptrdiff_t>(ids.size()), outp.end());
                if (!fresh.empty() && fresh.back() == alm::kEosId) fresh.pop_back();
                text = tok.decode(fresh);
            } else {
                text = alm::complete(m, tok, prompts[i], max_new, sampling, seed);
            }
            emit({{"prompt", prompts[i]}, {"completion", text}});
        }
    }

    void record(const json& rep) {
        emit(rep);
        if (!results.empty()) alm::append_jsonl(results, rep);
    }

    void cmd_eval_gen() {
        const auto pairs = alm::read_generation_pairs(in);
        if (pairs.empty()) throw alm::InputError("no generation pairs in " + in);
        double b = 0, r = 0, f = 0;
        std::size_t empty = 0;
        for (const auto& p : pairs) {
            const auto s = alm::score_generation(p.hypothesis, p.reference, max_n, rouge_order);
            b += s.bleu;
            r += s.rouge;
            f += s.f1;
            empty += alm::metric_tokens(p.hypothesis).empty();
        }
        if (empty > 0) log({{"event", "warning"}, {"message", "empty hypotheses score 0"}, {"count", empty}});
        const double n = static_cast<double>(pairs.size());
        record({{"metric", "generation"},
                {"bleu", b / n},
                {"rouge", r / n},
                {"f1", f / n},
                {"sample_count", pairs.size()},
                {"config", {{"max_n", max_n}, {"rouge_n", rouge_order}}}});
    }

    void cmd_eval_cls() {
        const auto tok = load_tokenizer(tokenizer);
        const auto ck = load_guarded(checkpoint, tok);
        if (ck.header.kind != alm::CheckpointKind::classifier)
            throw alm::InputError("checkpoint " + checkpoint + " has no classifier head");
        const auto clf = alm::classifier_from_checkpoint(ck);
        const auto records = alm::read_labeled(data);
        alm::MetricReport rep;
        rep.metric = "accuracy";
        rep.value = classifier_accuracy(clf, tok, records);
        rep.sample_count = records.size();
        rep.config = {{"checkpoint", checkpoint}};
        record(rep);
    }

    void cmd_eval_fewshot() {
        const auto tok = load_tokenizer(tokenizer);
        const auto m = alm::model_from_checkpoint(load_guarded(checkpoint, tok));
        alm::McTask t;
        t.records = alm::read_mc_records(task);
        if (!pool.empty()) t.pool = alm::read_mc_records(pool);
        auto rep = alm::fewshot_eval(m, tok, t, k, alm::parse_mc_metric(metric), train.seed);
        rep.config["task"] = task;
        record(rep);
    }

    void cmd_report() {
        if (curve.empty() && metrics_file.empty()) throw alm::ConfigError("report needs --curve and/or --metrics");
        if (!curve.empty()) {
            std::vector<alm::LossPoint> pts;
            for (const auto& j : alm::read_jsonl(curve)) {
                try {
                    pts.push_back(j.get<alm::LossPoint>());
                } catch (const json::exception& e) {
                    throw alm::InputError(curve + ": " + e.what());
                }
            }
            if (pts.empty()) throw alm::InputError(curve + " has no loss points");
            double lo = pts[0].loss, hi = pts[0].loss;
            for (const auto& p : pts) lo = std::min(lo, p.loss), hi = std::max(hi, p.loss);
            constexpr int kWidth = 50;
            constexpr std::size_t kRows = 20;
            const std::size_t stride = std::max<std::size_t>(1, (pts.size() + kRows - 1) / kRows);
            std::cout << "step        loss        lr\n";
            for (std::size_t i = 0; i < pts.size(); i += stride) {
                const auto& p = pts[i];
                const int bar = hi > lo ? static_cast<int>(std::lround((p.loss - lo) / (hi - lo) * kWidth)) : 0;
                std::cout << std::left << std::setw(10) << p.step << std::setw(12) << std::setprecision(5) << p.loss
                          << std::setw(12) << std::setprecision(3) << p.lr << std::string(static_cast<std::size_t>(bar) + 1, '#')
                          << '\n';
            }
            std::cout << "final loss " << std::setprecision(6) << pts.back().loss << " after step " << pts.back().step
                      << ", tokens seen " << pts.back().tokens_seen << '\n';
        }
        if (!metrics_file.empty()) {
            std::cout << std::left << std::setw(14) << "metric" << std::setw(12) << "value" << "samples\n";
            for (const auto& j : alm::read_jsonl(metrics_file)) {
                const auto name = j.value("metric", std::string("?"));
                const auto n = j.value("sample_count", 0);
                if (j.contains("value")) {
                    std::cout << std::setw(14) << name << std::setw(12) << std::setprecision(4)
                              << j["value"].get<double>() << n << '\n';
                } else {
                    for (const char* key : {"bleu", "rouge", "f1"})
                        if (j.contains(key))
                            std::cout << std::setw(14) << key << std::setw(12) << std::setprecision(4)
                                      << j[key].get<double>() << n << '\n';
                }
            }
        }
    }

    void cmd_inspect() {
        const auto h = alm::read_checkpoint_header(checkpoint);
        std::optional<std::string> want;
        if (!tokenizer.empty()) want = load_tokenizer(tokenizer).content_hash();
        const auto ck = alm::load_checkpoint(checkpoint, want);
        json tensors = json::array();
        for (const auto& [name, t] : ck.params) {
            double sum = 0.0, sq = 0.0;
            for (double v : t.data()) sum += v, sq += v * v;
            const double n = static_cast<double>(t.numel());
            const double mean = sum / n;
            tensors.push_back({{"name", name},
                               {"shape", t.shape()},
                               {"mean", mean},
                               {"std", std::sqrt(std::max(0.0, sq / n - mean * mean))}});
        }
        emit({{"format_version", h.format_version},
              {"kind", h.kind == alm::CheckpointKind::lm ? "lm" : "classifier"},
              {"model_config", h.model_config},
              {"param_count", alm::param_count(h.model_config)},
              {"scalars", ck.params.scalar_count()},
              {"tokenizer_hash", h.tokenizer_hash},
              {"step", h.step},
              {"seed", h.seed},
              {"metrics", h.metrics},
              {"tensors", tensors}});
    }
};

}  // namespace

int main(int argc, char** argv) {
    std::ios::sync_with_stdio(false);
    Cli cli;
    try {
        cli.app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return cli.app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return cli.app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return cli.app.exit(e);
    } catch (const CLI::ParseError& e) {
        cli.app.exit(e);
        return 1;
    } catch (const alm::ValidationError& e) {
        log({{"event", "error"}, {"kind", "validation"}, {"message", e.what()}});
        return 1;
    } catch (const std::exception& e) {
        log({{"event", "error"}, {"kind", "runtime"}, {"message", e.what()}});
        return 2;
    }
    return 0;
}
