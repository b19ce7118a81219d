#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/arabic_norm.hpp"
#include "alm/gpt.hpp"
#include "alm/tokenizer.hpp"

namespace alm {

// Normalized text split on whitespace; the unit for BLEU and ROUGE.
std::vector<std::string> metric_tokens(std::string_view text, const NormalizerConfig& normalizer = {});

inline constexpr double kBleuEpsilon = 1e-9;

// Sentence BLEU: geometric mean of clipped n-gram precisions over the orders
// the hypothesis actually has (zero matches become eps / total), times the
// brevity penalty. Empty hypothesis scores 0.
double bleu(std::string_view hypothesis, std::string_view reference, int max_n = 4);
// ROUGE-N F-measure, 0 when there is no overlap.
double rouge_n(std::string_view hypothesis, std::string_view reference, int n = 1);
double f1_bleu_rouge(double b, double r);
double accuracy(std::span<const int> predictions, std::span<const int> golds);

struct GenerationScores {
    double bleu = 0.0;
    double rouge = 0.0;
    double f1 = 0.0;
};
GenerationScores score_generation(std::string_view hypothesis, std::string_view reference, int max_n = 4,
                                  int rouge_order = 1);

struct ChoiceScore {
    double logprob = 0.0;
    std::size_t byte_len = 0;
};

// Sum of log P(choice token | prefix) over the choice tokens. Context and
// choice are encoded separately and concatenated; an empty context becomes a
// single eos. When too long, tokens are dropped from the context head.
ChoiceScore choice_loglik(const GptModel& model, const TokenizerModel& tok, std::string_view context,
                          std::string_view choice);

struct McRecord {
    std::string context;
    std::vector<std::string> choices;
    std::vector<int> true_set;

    void validate() const;
};

void to_json(nlohmann::json& j, const McRecord& r);
void from_json(const nlohmann::json& j, McRecord& r);

struct McTask {
    std::vector<McRecord> records;
    std::vector<McRecord> pool;  // few-shot exemplars
};

enum class McMetric { acc, acc_norm, mc2 };
McMetric parse_mc_metric(std::string_view name);
std::string_view to_string(McMetric m);

struct MetricReport {
    std::string metric;
    double value = 0.0;
    std::size_t sample_count = 0;
    nlohmann::json config = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const MetricReport& r);

// Exemplars are drawn per record without replacement from Rng(mix_seed(seed, i))
// and rendered "context\nanswer\n\n" (answer = first true choice).
std::string fewshot_prompt(const McTask& task, std::size_t record_index, std::size_t k, std::uint64_t seed);

MetricReport fewshot_eval(const GptModel& model, const TokenizerModel& tok, const McTask& task, std::size_t k,
                          McMetric metric, std::uint64_t seed);

}  // namespace alm
