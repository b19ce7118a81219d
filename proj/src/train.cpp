#include "alm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "alm/error.hpp"
#include "alm/ops.hpp"
#include "alm/rng.hpp"

namespace alm {

namespace {

constexpr std::uint64_t kDropoutStream = 0xD0;
constexpr std::uint64_t kHeadStream = 0xC1;

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("train config: " + msg);
}

bool is_beta(double b) { return std::isfinite(b) && b >= 0.0 && b < 1.0; }

long total_steps_for(const TrainConfig& c, std::size_t n_examples) {
    if (c.max_steps > 0) return c.max_steps;
    const long per_epoch = static_cast<long>((n_examples + c.batch_size - 1) / c.batch_size);
    return per_epoch * c.epochs;
}

// Fills ids/targets for a batch, right-padding to the longest example. Pad
// inputs reuse id 0; their targets are ignored and causality keeps them from
// influencing real positions.
struct Batch {
    std::vector<int> ids;
    std::vector<int> targets;
    std::size_t rows = 0;
    std::size_t seq = 0;
    long tokens = 0;
};

Batch make_batch(std::span<const LmExample> examples, std::span<const std::size_t> idx) {
    Batch b;
    b.rows = idx.size();
    for (auto i : idx) b.seq = std::max(b.seq, examples[i].input.size());
    b.ids.assign(b.rows * b.seq, 0);
    b.targets.assign(b.rows * b.seq, ops::kIgnoreIndex);
    for (std::size_t r = 0; r < b.rows; ++r) {
        const auto& ex = examples[idx[r]];
        std::copy(ex.input.begin(), ex.input.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.seq));
        std::copy(ex.target.begin(), ex.target.end(), b.targets.begin() + static_cast<std::ptrdiff_t>(r * b.seq));
        for (int t : ex.target) b.tokens += t != ops::kIgnoreIndex;
    }
    return b;
}

struct StepLoss {
    Tensor loss;
    long tokens = 0;
};

// batch_loss(indices, dropout_seed) -> StepLoss
template <class BatchLoss>
TrainingReport run_loop(Parameters params, std::size_t n_examples, const TrainConfig& config,
                        BatchLoss&& batch_loss, const StepCallback& on_step) {
    config.validate();
    if (n_examples == 0) throw InputError("training set is empty");
    const long total = total_steps_for(config, n_examples);
    require(config.warmup(total) <= total, "warmup_steps exceeds the number of steps");

    const auto started = std::chrono::steady_clock::now();
    TrainingReport report;
    OptimizerState state = OptimizerState::for_params(params);
    std::vector<std::size_t> order(n_examples);
    std::size_t pos = n_examples;
    std::uint64_t epoch = 0;
    const std::uint64_t dropout_base = mix_seed(config.seed, kDropoutStream);

    for (long step = 1; step <= total; ++step) {
        if (pos >= n_examples) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng(mix_seed(config.seed, epoch++)).shuffle(order);
            pos = 0;
        }
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n_examples - pos);
        const std::span<const std::size_t> idx(order.data() + pos, take);
        pos += take;

        for (const auto& [_, p] : params) Tensor(p).clear_grad();
        double loss_value = 0.0;
        long tokens = 0;
        try {
            StepLoss sl = batch_loss(idx, mix_seed(dropout_base, static_cast<std::uint64_t>(step)));
            loss_value = sl.loss.item();
            tokens = sl.tokens;
            backward(sl.loss);
        } catch (const OverflowError& e) {
            throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(loss_value))
            throw DivergenceError("training diverged at step " + std::to_string(step) + ": loss is not finite");

        const double lr = lr_at(step, total, config);
        try {
            adam_step(params, state, lr, config);
        } catch (const DivergenceError& e) {
            throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        report.tokens_seen += tokens;
        report.final_loss = loss_value;
        const LossPoint point{step, loss_value, lr, report.tokens_seen};
        if (step % config.eval_every == 0 || step == total) {
            report.curve.push_back(point);
            if (on_step) on_step(point);
        }
    }
    for (const auto& [_, p] : params) Tensor(p).clear_grad();
    report.steps = total;
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace

// ---- config

void TrainConfig::validate() const {
    require(batch_size > 0, "batch_size must be positive");
    require(seq_len > 0, "seq_len must be positive");
    require(max_steps >= 0, "max_steps must be >= 0");
    require(epochs > 0, "epochs must be positive");
    require(std::isfinite(lr_initial) && lr_initial > 0.0, "lr_initial must be > 0");
    require(!lr_final || (std::isfinite(*lr_final) && *lr_final >= 0.0), "lr_final must be >= 0");
    require(!warmup_steps || *warmup_steps >= 0, "warmup_steps must be >= 0");
    require(!warmup_steps || max_steps == 0 || *warmup_steps <= max_steps, "warmup_steps must be <= max_steps");
    require(is_beta(adam_beta1) && is_beta(adam_beta2), "adam betas must be in [0,1)");
    require(std::isfinite(adam_eps) && adam_eps > 0.0, "adam_eps must be > 0");
    require(std::isfinite(grad_clip_norm) && grad_clip_norm >= 0.0, "grad_clip_norm must be >= 0");
    require(eval_every > 0, "eval_every must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"batch_size", c.batch_size}, {"seq_len", c.seq_len},       {"max_steps", c.max_steps},
                       {"epochs", c.epochs},         {"lr_initial", c.lr_initial}, {"lr_final", c.final_lr()},
                       {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
                       {"grad_clip_norm", c.grad_clip_norm}, {"seed", c.seed}, {"eval_every", c.eval_every}};
    j["warmup_steps"] = c.warmup_steps ? nlohmann::json(*c.warmup_steps) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    TrainConfig out;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "batch_size") value.get_to(out.batch_size);
            else if (key == "seq_len") value.get_to(out.seq_len);
            else if (key == "max_steps") value.get_to(out.max_steps);
            else if (key == "epochs") value.get_to(out.epochs);
            else if (key == "lr_initial") value.get_to(out.lr_initial);
            else if (key == "lr_final") out.lr_final = value.is_null() ? std::nullopt : std::optional(value.get<double>());
            else if (key == "warmup_steps") out.warmup_steps = value.is_null() ? std::nullopt : std::optional(value.get<long>());
            else if (key == "adam_beta1") value.get_to(out.adam_beta1);
            else if (key == "adam_beta2") value.get_to(out.adam_beta2);
            else if (key == "adam_eps") value.get_to(out.adam_eps);
            else if (key == "grad_clip_norm") value.get_to(out.grad_clip_norm);
            else if (key == "seed") value.get_to(out.seed);
            else if (key == "eval_every") value.get_to(out.eval_every);
            else throw ConfigError("train config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("train config: bad value for " + key);
        }
    }
    out.validate();
    c = out;
}

double lr_at(long step, long total_steps, const TrainConfig& config) {
    if (total_steps <= 0 || step < 0 || step > total_steps)
        throw RangeError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
    const long warm = config.warmup(total_steps);
    if (warm > total_steps) throw ConfigError("train config: warmup_steps exceeds the number of steps");
    const double lr0 = config.lr_initial;
    if (step < warm) return lr0 * static_cast<double>(step) / static_cast<double>(warm);
    if (total_steps == warm) return lr0;
    const double frac = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return lr0 + (config.final_lr() - lr0) * frac;
}

// ---- optimizer

OptimizerState OptimizerState::for_params(const Parameters& params) {
    OptimizerState s;
    for (const auto& [_, t] : params) {
        s.m.emplace_back(t.numel(), 0.0);
        s.v.emplace_back(t.numel(), 0.0);
    }
    return s;
}

double adam_step(Parameters& params, OptimizerState& state, double rate, const TrainConfig& config) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw DimensionError("optimizer state holds " + std::to_string(state.m.size()) + " slots for " +
                             std::to_string(params.size()) + " parameters");
    double sq = 0.0;
    std::size_t i = 0;
    for (const auto& [name, t] : params) {
        if (state.m[i].size() != t.numel() || state.v[i].size() != t.numel())
            throw DimensionError("optimizer state for " + name + " does not match shape " + shape_str(t.shape()));
        for (double g : t.grad()) {
            if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter " + name);
            sq += g * g;
        }
        ++i;
    }
    const double norm = std::sqrt(sq);
    const double clip = config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm ? config.grad_clip_norm / norm : 1.0;

    ++state.t;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    i = 0;
    for (const auto& [_, param] : params) {
        Tensor t = param;
        auto data = t.data();
        const auto grad = t.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double g = grad.empty() ? 0.0 : grad[k] * clip;
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            data[k] -= rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_eps);
        }
        ++i;
    }
    return norm;
}

// ---- language modelling

Tensor clm_loss(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size())
        throw DimensionError("clm_loss: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    return ops::cross_entropy(logits, targets);
}

std::vector<int> join_documents(std::span<const std::vector<int>> docs, int eos) {
    std::vector<int> out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (i > 0) out.push_back(eos);
        out.insert(out.end(), docs[i].begin(), docs[i].end());
    }
    return out;
}

std::vector<std::vector<int>> pack_sequences(std::span<const int> stream, std::size_t block_len) {
    if (block_len < 2) throw ConfigError("block length must be >= 2");
    if (stream.size() < block_len)
        throw InputError("token stream of " + std::to_string(stream.size()) + " tokens is shorter than one block of " +
                         std::to_string(block_len));
    std::vector<std::vector<int>> blocks;
    for (std::size_t at = 0; at + block_len <= stream.size(); at += block_len)
        blocks.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(at),
                            stream.begin() + static_cast<std::ptrdiff_t>(at + block_len));
    return blocks;
}

void to_json(nlohmann::json& j, const LossPoint& p) {
    j = nlohmann::json{{"step", p.step}, {"loss", p.loss}, {"lr", p.lr}, {"tokens_seen", p.tokens_seen}};
}

void from_json(const nlohmann::json& j, LossPoint& p) {
    j.at("step").get_to(p.step);
    j.at("loss").get_to(p.loss);
    j.at("lr").get_to(p.lr);
    j.at("tokens_seen").get_to(p.tokens_seen);
}

std::string TrainingReport::to_jsonl() const {
    std::string out;
    for (const auto& p : curve) out += nlohmann::json(p).dump() + "\n";
    return out;
}

TrainingReport train_lm(GptModel& model, std::span<const LmExample> examples, const TrainConfig& config,
                        const StepCallback& on_step) {
    const std::size_t ctx = static_cast<std::size_t>(model.config().ctx_len);
    for (const auto& ex : examples) {
        if (ex.input.empty() || ex.input.size() != ex.target.size())
            throw InputError("training example needs equal-length non-empty input and target");
        if (ex.input.size() > ctx)
            throw ContextOverflowError("training example of " + std::to_string(ex.input.size()) +
                                       " tokens exceeds context window " + std::to_string(ctx));
    }
    auto loss_fn = [&](std::span<const std::size_t> idx, std::uint64_t dropout_seed) {
        const Batch b = make_batch(examples, idx);
        Tensor logits = model.forward_batch(b.ids, b.rows, Mode::train, dropout_seed);
        return StepLoss{clm_loss(logits, b.targets), b.tokens};
    };
    return run_loop(model.params(), examples.size(), config, loss_fn, on_step);
}

std::vector<LmExample> pretraining_examples(const TokenizerModel& tok, std::span<const std::string> documents,
                                            std::size_t seq_len) {
    std::vector<std::vector<int>> docs;
    docs.reserve(documents.size());
    for (const auto& d : documents) docs.push_back(tok.encode(d));
    const auto stream = join_documents(docs, kEosId);
    std::vector<LmExample> out;
    for (auto& block : pack_sequences(stream, seq_len + 1)) {
        LmExample ex;
        ex.input.assign(block.begin(), block.end() - 1);
        ex.target.assign(block.begin() + 1, block.end());
        out.push_back(std::move(ex));
    }
    return out;
}

TrainingReport pretrain(GptModel& model, const TokenizerModel& tok, std::span<const std::string> documents,
                        const TrainConfig& config, const StepCallback& on_step) {
    config.validate();
    const auto examples = pretraining_examples(tok, documents, static_cast<std::size_t>(config.seq_len));
    return train_lm(model, examples, config, on_step);
}

// ---- prompt/completion fine-tuning

RenderedExample render_prompt_completion(const TokenizerModel& tok, const PromptCompletion& record,
                                         std::size_t ctx_len) {
    auto prompt = tok.encode(record.prompt);
    const auto completion = tok.encode(record.completion);
    if (completion.empty()) throw InputError("record has an empty completion");
    // full = prompt eos completion eos; inputs drop the last id
    if (completion.size() + 1 > ctx_len)
        throw ContextOverflowError("completion of " + std::to_string(completion.size()) +
                                   " tokens does not fit the context window " + std::to_string(ctx_len));
    RenderedExample out;
    const std::size_t room = ctx_len - completion.size() - 1;
    if (prompt.size() > room) {
        prompt.erase(prompt.begin(), prompt.end() - static_cast<std::ptrdiff_t>(room));
        out.truncated = true;
    }
    std::vector<int> full = prompt;
    full.push_back(kEosId);
    full.insert(full.end(), completion.begin(), completion.end());
    full.push_back(kEosId);
    out.example.input.assign(full.begin(), full.end() - 1);
    out.example.target.assign(full.begin() + 1, full.end());
    for (std::size_t i = 0; i < prompt.size(); ++i) out.example.target[i] = ops::kIgnoreIndex;
    return out;
}

TrainingReport finetune_lm(GptModel& model, const TokenizerModel& tok, std::span<const PromptCompletion> records,
                           const TrainConfig& config, const StepCallback& on_step) {
    std::vector<LmExample> examples;
    long truncated = 0;
    for (const auto& r : records) {
        auto rendered = render_prompt_completion(tok, r, static_cast<std::size_t>(model.config().ctx_len));
        truncated += rendered.truncated;
        examples.push_back(std::move(rendered.example));
    }
    auto report = train_lm(model, examples, config, on_step);
    report.truncated_records = truncated;
    return report;
}

std::vector<int> completion_prompt(const TokenizerModel& tok, std::string_view prompt, std::size_t ctx_len) {
    auto ids = tok.encode(prompt);
    ids.push_back(kEosId);
    if (ids.size() > ctx_len) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(ctx_len));
    return ids;
}

std::string complete(const GptModel& model, const TokenizerModel& tok, std::string_view prompt, std::size_t max_new,
                     const Sampling& sampling, std::uint64_t seed) {
    const auto ids = completion_prompt(tok, prompt, static_cast<std::size_t>(model.config().ctx_len));
    auto out = generate(model, ids, max_new, sampling, seed, kEosId);
    std::vector<int> fresh(out.begin() + static_cast<std::ptrdiff_t>(ids.size()), out.end());
    if (!fresh.empty() && fresh.back() == kEosId) fresh.pop_back();
    return tok.decode(fresh);
}

// ---- classification

Classifier::Classifier(GptModel backbone, Parameters head) : backbone_(std::move(backbone)), head_(std::move(head)) {
    const std::size_t d = static_cast<std::size_t>(backbone_.config().d_model);
    if (head_.size() != 2 || head_.at("cls.w").shape() != Shape{d, 2} || head_.at("cls.b").shape() != Shape{2})
        throw DimensionError("classifier head must be cls.w [" + std::to_string(d) + ",2] and cls.b [2]");
}

Classifier Classifier::attach(GptModel backbone, std::uint64_t seed) {
    const std::size_t d = static_cast<std::size_t>(backbone.config().d_model);
    Parameters head;
    Tensor w = rng_normal({d, 2}, 0.0, 0.02, mix_seed(seed, kHeadStream));
    w.set_requires_grad(true);
    head.add("cls.w", w);
    head.add("cls.b", Tensor::zeros({2}, true));
    return Classifier(std::move(backbone), std::move(head));
}

Parameters Classifier::all_params() const {
    Parameters all;
    for (const auto& [n, t] : backbone_.params()) all.add(n, t);
    for (const auto& [n, t] : head_) all.add(n, t);
    return all;
}

Tensor Classifier::logits(std::span<const int> ids, std::span<const std::size_t> lengths, std::size_t seq, Mode mode,
                          std::uint64_t dropout_seed) const {
    if (lengths.empty() || ids.size() != lengths.size() * seq)
        throw DimensionError("classifier batch: " + std::to_string(ids.size()) + " ids vs " +
                             std::to_string(lengths.size()) + " rows of " + std::to_string(seq));
    std::vector<std::size_t> last(lengths.size());
    for (std::size_t r = 0; r < lengths.size(); ++r) {
        if (lengths[r] == 0 || lengths[r] > seq) throw InputError("classifier row length out of range");
        last[r] = r * seq + lengths[r] - 1;
    }
    Tensor h = backbone_.hidden(ids, lengths.size(), mode, dropout_seed);
    return ops::add(ops::matmul(ops::select_rows(h, last), head_.at("cls.w")), head_.at("cls.b"));
}

std::vector<int> classifier_ids(const TokenizerModel& tok, std::string_view text, std::size_t ctx_len) {
    auto ids = tok.encode(text);
    ids.push_back(kEosId);
    if (ids.size() > ctx_len) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(ctx_len));
    return ids;
}

TrainingReport finetune_classifier(Classifier& clf, const TokenizerModel& tok, std::span<const LabeledText> records,
                                   const TrainConfig& config, const StepCallback& on_step) {
    const std::size_t ctx = static_cast<std::size_t>(clf.backbone().config().ctx_len);
    std::vector<std::vector<int>> encoded;
    encoded.reserve(records.size());
    for (const auto& r : records) {
        if (r.label != 0 && r.label != 1) throw RangeError("label " + std::to_string(r.label) + " is not 0 or 1");
        encoded.push_back(classifier_ids(tok, r.text, ctx));
    }
    auto loss_fn = [&](std::span<const std::size_t> idx, std::uint64_t dropout_seed) {
        std::size_t seq = 0;
        for (auto i : idx) seq = std::max(seq, encoded[i].size());
        std::vector<int> ids(idx.size() * seq, 0);
        std::vector<std::size_t> lengths;
        std::vector<int> labels;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto& e = encoded[idx[r]];
            std::copy(e.begin(), e.end(), ids.begin() + static_cast<std::ptrdiff_t>(r * seq));
            lengths.push_back(e.size());
            labels.push_back(records[idx[r]].label);
        }
        Tensor logits = clf.logits(ids, lengths, seq, Mode::train, dropout_seed);
        return StepLoss{ops::cross_entropy(logits, labels), static_cast<long>(idx.size())};
    };
    return run_loop(clf.all_params(), records.size(), config, loss_fn, on_step);
}

Prediction classify(const Classifier& clf, const TokenizerModel& tok, std::string_view text) {
    NoGradGuard no_grad;
    const auto ids = classifier_ids(tok, text, static_cast<std::size_t>(clf.backbone().config().ctx_len));
    const std::size_t len = ids.size();
    const Tensor logits = clf.logits(ids, std::span<const std::size_t>(&len, 1), len, Mode::eval, 0);
    const Tensor p = ops::softmax(logits);
    Prediction out;
    out.probs = {p.at(0), p.at(1)};
    out.label = out.probs[1] > out.probs[0] ? 1 : 0;
    out.score = out.probs[static_cast<std::size_t>(out.label)];
    return out;
}

}  // namespace alm
