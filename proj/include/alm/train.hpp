#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/gpt.hpp"
#include "alm/tokenizer.hpp"

namespace alm {

struct TrainConfig {
    int batch_size = 8;
    int seq_len = 64;
    // 0 derives the step count from epochs * ceil(examples / batch_size).
    long max_steps = 0;
    int epochs = 1;
    double lr_initial = 4e-5;
    std::optional<double> lr_final;   // default lr_initial / 10
    std::optional<long> warmup_steps; // default 1% of the total steps
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 0.0;  // 0 disables clipping
    std::uint64_t seed = 0;
    long eval_every = 1;          // loss-curve sampling interval

    double final_lr() const { return lr_final.value_or(lr_initial / 10.0); }
    long warmup(long total_steps) const { return warmup_steps.value_or(total_steps / 100); }
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear warmup 0 -> lr_initial over the warmup steps, then linear decay to
// lr_final at total_steps. Steps count completed updates, 1-based in training.
double lr_at(long step, long total_steps, const TrainConfig& config);

struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long t = 0;

    static OptimizerState for_params(const Parameters& params);
};

// One bias-corrected Adam update from the gradients currently stored on the
// parameters (missing gradients count as zero). Clipping by global norm is
// applied first when config.grad_clip_norm > 0. All gradients are checked
// before anything is written; a non-finite one throws DivergenceError naming
// the parameter. Returns the global gradient norm before clipping.
double adam_step(Parameters& params, OptimizerState& state, double rate, const TrainConfig& config);

// Mean next-token NLL; targets equal to ops::kIgnoreIndex are skipped.
Tensor clm_loss(const Tensor& logits, std::span<const int> targets);

// Documents joined by `eos` into one stream.
std::vector<int> join_documents(std::span<const std::vector<int>> docs, int eos);
// Consecutive non-overlapping blocks; the partial tail is dropped.
std::vector<std::vector<int>> pack_sequences(std::span<const int> stream, std::size_t block_len);

struct LossPoint {
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
    long tokens_seen = 0;
};

void to_json(nlohmann::json& j, const LossPoint& p);
void from_json(const nlohmann::json& j, LossPoint& p);

struct TrainingReport {
    std::vector<LossPoint> curve;
    double final_loss = 0.0;
    long steps = 0;
    long tokens_seen = 0;
    long truncated_records = 0;
    double wall_time_s = 0.0;

    std::string to_jsonl() const;
};

using StepCallback = std::function<void(const LossPoint&)>;

// A training example: input ids and per-position targets of equal length.
struct LmExample {
    std::vector<int> input;
    std::vector<int> target;
};

// Shared loop: per-epoch shuffle seeded by (seed, epoch), right-padded
// batches, forward -> loss -> backward -> Adam. The model is updated in place.
TrainingReport train_lm(GptModel& model, std::span<const LmExample> examples, const TrainConfig& config,
                        const StepCallback& on_step = {});

// Blocks of seq_len + 1 tokens from the eos-joined corpus.
std::vector<LmExample> pretraining_examples(const TokenizerModel& tok, std::span<const std::string> documents,
                                            std::size_t seq_len);

TrainingReport pretrain(GptModel& model, const TokenizerModel& tok, std::span<const std::string> documents,
                        const TrainConfig& config, const StepCallback& on_step = {});

struct PromptCompletion {
    std::string prompt;
    std::string completion;
};

// Renders prompt ++ eos ++ completion ++ eos. Targets at prompt and separator
// positions are masked. Over-long records lose tokens from the prompt head.
struct RenderedExample {
    LmExample example;
    bool truncated = false;
};
RenderedExample render_prompt_completion(const TokenizerModel& tok, const PromptCompletion& record,
                                         std::size_t ctx_len);

TrainingReport finetune_lm(GptModel& model, const TokenizerModel& tok, std::span<const PromptCompletion> records,
                           const TrainConfig& config, const StepCallback& on_step = {});

// Prompt ids followed by the eos separator, truncated from the head to fit.
std::vector<int> completion_prompt(const TokenizerModel& tok, std::string_view prompt, std::size_t ctx_len);
// Generates after prompt ++ eos and decodes up to the next eos.
std::string complete(const GptModel& model, const TokenizerModel& tok, std::string_view prompt, std::size_t max_new,
                     const Sampling& sampling, std::uint64_t seed);

struct LabeledText {
    std::string text;
    int label = 0;
};

// Backbone plus an affine head [d_model, 2] read from the last real position.
class Classifier {
public:
    Classifier(GptModel backbone, Parameters head);
    static Classifier attach(GptModel backbone, std::uint64_t seed);

    const GptModel& backbone() const noexcept { return backbone_; }
    GptModel& backbone() noexcept { return backbone_; }
    const Parameters& head() const noexcept { return head_; }
    // Backbone parameters followed by cls.w, cls.b (shared storage).
    Parameters all_params() const;

    // Logits [batch, 2]; `lengths` gives each row's real length.
    Tensor logits(std::span<const int> ids, std::span<const std::size_t> lengths, std::size_t seq, Mode mode,
                  std::uint64_t dropout_seed) const;

private:
    GptModel backbone_;
    Parameters head_;
};

// Text ids followed by eos; the head is dropped when longer than ctx_len.
std::vector<int> classifier_ids(const TokenizerModel& tok, std::string_view text, std::size_t ctx_len);

struct Prediction {
    int label = 0;
    double score = 0.0;  // probability of the predicted label
    std::array<double, 2> probs{};
};

TrainingReport finetune_classifier(Classifier& clf, const TokenizerModel& tok, std::span<const LabeledText> records,
                                   const TrainConfig& config, const StepCallback& on_step = {});
Prediction classify(const Classifier& clf, const TokenizerModel& tok, std::string_view text);

}  // namespace alm
