#include "alm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "alm/error.hpp"
#include "alm/ops.hpp"
#include "alm/rng.hpp"
#include "alm/utf8.hpp"

namespace alm {

namespace {

using Ngrams = std::map<std::vector<std::string>, long>;

Ngrams ngrams(const std::vector<std::string>& toks, std::size_t n) {
    Ngrams out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                       toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
}

long clipped_overlap(const Ngrams& hyp, const Ngrams& ref) {
    long m = 0;
    for (const auto& [g, c] : hyp)
        if (auto it = ref.find(g); it != ref.end()) m += std::min(c, it->second);
    return m;
}

long total(const Ngrams& g) {
    long n = 0;
    for (const auto& [_, c] : g) n += c;
    return n;
}

}  // namespace

std::vector<std::string> metric_tokens(std::string_view text, const NormalizerConfig& normalizer) {
    std::vector<std::string> out;
    std::string cur;
    for (char32_t cp : normalize(utf8::decode(text), normalizer)) {
        if (is_whitespace(cp)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            utf8::append(cur, cp);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double bleu(std::string_view hypothesis, std::string_view reference, int max_n) {
    if (max_n < 1) throw ConfigError("bleu: max_n must be >= 1");
    const auto h = metric_tokens(hypothesis), r = metric_tokens(reference);
    if (h.empty()) return 0.0;
    double log_sum = 0.0;
    int orders = 0;
    for (std::size_t n = 1; n <= static_cast<std::size_t>(max_n); ++n) {
        const auto hg = ngrams(h, n);
        const long t = total(hg);
        if (t == 0) break;  // longer orders are empty too
        const long m = clipped_overlap(hg, ngrams(r, n));
        const double p = m > 0 ? static_cast<double>(m) / static_cast<double>(t) : kBleuEpsilon / static_cast<double>(t);
        log_sum += std::log(p);
        ++orders;
    }
    const double hl = static_cast<double>(h.size()), rl = static_cast<double>(r.size());
    const double bp = hl < rl ? std::exp(1.0 - rl / hl) : 1.0;
    return bp * std::exp(log_sum / orders);
}

double rouge_n(std::string_view hypothesis, std::string_view reference, int n) {
    if (n < 1) throw ConfigError("rouge: n must be >= 1");
    const auto hg = ngrams(metric_tokens(hypothesis), static_cast<std::size_t>(n));
    const auto rg = ngrams(metric_tokens(reference), static_cast<std::size_t>(n));
    const long overlap = clipped_overlap(hg, rg);
    if (overlap == 0) return 0.0;
    // 2PR/(P+R) with P = o/|h|, R = o/|r|
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(total(hg) + total(rg));
}

double f1_bleu_rouge(double b, double r) {
    if (!(b >= 0.0 && b <= 1.0 && r >= 0.0 && r <= 1.0)) throw RangeError("f1: scores must lie in [0,1]");
    if (b + r == 0.0) return 0.0;
    return 2.0 * b * r / (b + r);
}

double accuracy(std::span<const int> predictions, std::span<const int> golds) {
    if (predictions.size() != golds.size())
        throw InputError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " labels");
    if (predictions.empty()) throw InputError("accuracy: no samples");
    std::size_t same = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) same += predictions[i] == golds[i];
    return static_cast<double>(same) / static_cast<double>(golds.size());
}

GenerationScores score_generation(std::string_view hypothesis, std::string_view reference, int max_n,
                                  int rouge_order) {
    GenerationScores s;
    s.bleu = bleu(hypothesis, reference, max_n);
    s.rouge = rouge_n(hypothesis, reference, rouge_order);
    s.f1 = f1_bleu_rouge(s.bleu, s.rouge);
    return s;
}

ChoiceScore choice_loglik(const GptModel& model, const TokenizerModel& tok, std::string_view context,
                          std::string_view choice) {
    if (choice.empty()) throw InputError("choice_loglik: empty choice");
    const auto ch = tok.encode(choice);
    if (ch.empty()) throw InputError("choice_loglik: choice encodes to no tokens");
    auto ctx = tok.encode(context);
    if (ctx.empty()) ctx.push_back(kEosId);
    const std::size_t window = static_cast<std::size_t>(model.config().ctx_len);
    // the model sees ctx ++ ch minus the last token
    if (ch.size() >= window + 1)
        throw ContextOverflowError("choice of " + std::to_string(ch.size()) + " tokens does not fit the context window");
    const std::size_t keep = std::min(ctx.size(), window + 1 - ch.size());
    ctx.erase(ctx.begin(), ctx.end() - static_cast<std::ptrdiff_t>(keep));

    std::vector<int> ids = ctx;
    ids.insert(ids.end(), ch.begin(), ch.end());
    ids.pop_back();
    NoGradGuard no_grad;
    const Tensor logp = ops::log_softmax(model.forward(ids));
    double sum = 0.0;
    for (std::size_t i = 0; i < ch.size(); ++i)
        sum += logp.at(ctx.size() - 1 + i, static_cast<std::size_t>(ch[i]));
    return {sum, choice.size()};
}

void McRecord::validate() const {
    if (choices.size() < 2) throw InputError("multiple-choice record needs at least 2 choices");
    if (true_set.empty()) throw InputError("multiple-choice record has no true choice");
    std::vector<int> seen;
    for (int t : true_set) {
        if (t < 0 || static_cast<std::size_t>(t) >= choices.size())
            throw RangeError("true choice index " + std::to_string(t) + " out of range");
        if (std::find(seen.begin(), seen.end(), t) != seen.end())
            throw InputError("true choice index " + std::to_string(t) + " repeated");
        seen.push_back(t);
    }
}

void to_json(nlohmann::json& j, const McRecord& r) {
    j = nlohmann::json{{"context", r.context}, {"choices", r.choices}, {"true", r.true_set}};
}

void from_json(const nlohmann::json& j, McRecord& r) {
    try {
        McRecord out;
        j.at("context").get_to(out.context);
        j.at("choices").get_to(out.choices);
        j.at("true").get_to(out.true_set);
        out.validate();
        r = std::move(out);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("multiple-choice record: ") + e.what());
    }
}

McMetric parse_mc_metric(std::string_view name) {
    if (name == "acc") return McMetric::acc;
    if (name == "acc_norm") return McMetric::acc_norm;
    if (name == "mc2") return McMetric::mc2;
    throw ConfigError("unknown metric '" + std::string(name) + "' (expected acc, acc_norm or mc2)");
}

std::string_view to_string(McMetric m) {
    switch (m) {
        case McMetric::acc: return "acc";
        case McMetric::acc_norm: return "acc_norm";
        case McMetric::mc2: return "mc2";
    }
    return "?";
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json{{"metric", r.metric}, {"value", r.value}, {"sample_count", r.sample_count}, {"config", r.config}};
}

std::string fewshot_prompt(const McTask& task, std::size_t record_index, std::size_t k, std::uint64_t seed) {
    if (k > task.pool.size())
        throw ConfigError("k=" + std::to_string(k) + " exceeds few-shot pool of " + std::to_string(task.pool.size()));
    std::vector<std::size_t> idx(task.pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(mix_seed(seed, record_index));
    // partial Fisher-Yates: the first k slots end up a uniform sample
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    std::string prompt;
    for (std::size_t i = 0; i < k; ++i) {
        const auto& ex = task.pool[idx[i]];
        prompt += ex.context + "\n" + ex.choices[static_cast<std::size_t>(ex.true_set.front())] + "\n\n";
    }
    return prompt + task.records.at(record_index).context;
}

MetricReport fewshot_eval(const GptModel& model, const TokenizerModel& tok, const McTask& task, std::size_t k,
                          McMetric metric, std::uint64_t seed) {
    if (task.records.empty()) throw InputError("multiple-choice task has no records");
    if (k > task.pool.size())
        throw ConfigError("k=" + std::to_string(k) + " exceeds few-shot pool of " + std::to_string(task.pool.size()));
    for (const auto& r : task.records) r.validate();
    for (const auto& r : task.pool) r.validate();

    double total_score = 0.0;
    for (std::size_t i = 0; i < task.records.size(); ++i) {
        const auto& rec = task.records[i];
        const std::string prompt = fewshot_prompt(task, i, k, seed);
        std::vector<double> score(rec.choices.size());
        for (std::size_t c = 0; c < rec.choices.size(); ++c) {
            const auto s = choice_loglik(model, tok, prompt, rec.choices[c]);
            score[c] = metric == McMetric::acc_norm ? s.logprob / static_cast<double>(s.byte_len) : s.logprob;
        }
        auto is_true = [&](std::size_t c) {
            return std::find(rec.true_set.begin(), rec.true_set.end(), static_cast<int>(c)) != rec.true_set.end();
        };
        if (metric == McMetric::mc2) {
            const double top = *std::max_element(score.begin(), score.end());
            double all = 0.0, good = 0.0;
            for (std::size_t c = 0; c < score.size(); ++c) {
                const double p = std::exp(score[c] - top);
                all += p;
                if (is_true(c)) good += p;
            }
            total_score += good / all;
        } else {
            // max_element returns the first maximum: ties go to the lowest index
            const auto best = static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
            total_score += is_true(best) ? 1.0 : 0.0;
        }
    }
    MetricReport rep;
    rep.metric = std::string(to_string(metric));
    rep.sample_count = task.records.size();
    rep.value = total_score / static_cast<double>(task.records.size());
    rep.config = {{"k", k}, {"seed", seed}, {"pool_size", task.pool.size()}};
    return rep;
}

}  // namespace alm
