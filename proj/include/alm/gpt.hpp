#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "alm/tensor.hpp"

namespace alm {

struct ModelConfig {
    int n_layers = 12;
    int n_heads = 12;
    int d_model = 768;
    int d_ff = 0;  // 0 means 4 * d_model
    int vocab_size = 64000;
    int ctx_len = 768;
    double attn_dropout = 0.1;
    double embd_dropout = 0.1;
    double resid_dropout = 0.1;
    bool tie_lm_head = true;

    int ff_dim() const noexcept { return d_ff > 0 ? d_ff : 4 * d_model; }
    // Throws ConfigError naming the first violated constraint.
    void validate() const;

    // d_ff compares by resolved width, so 0 equals an explicit 4 * d_model.
    bool operator==(const ModelConfig& o) const {
        return n_layers == o.n_layers && n_heads == o.n_heads && d_model == o.d_model && ff_dim() == o.ff_dim() &&
               vocab_size == o.vocab_size && ctx_len == o.ctx_len && attn_dropout == o.attn_dropout &&
               embd_dropout == o.embd_dropout && resid_dropout == o.resid_dropout && tie_lm_head == o.tie_lm_head;
    }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// "0.1B": 12 layers, 12 heads, d=768, ctx=768. "0.3B": 24 layers, 16 heads,
// d=1024, ctx=1024. Both V=64000 with 0.1 dropouts.
ModelConfig preset(std::string_view name);

// Closed form: V*d + ctx*d + L*(4d^2 + 2*d*ff + 9d + ff) + 2d (+ V*d untied);
// with ff = 4d the per-layer term is 12d^2 + 13d.
std::uint64_t param_count(const ModelConfig& config);

// Named parameter tensors in canonical order. Copies share storage; use
// clone() for an independent set.
class Parameters {
public:
    void add(std::string name, Tensor tensor);
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    const Tensor* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    std::size_t size() const noexcept { return entries_.size(); }
    std::uint64_t scalar_count() const;

    void zero_grad();
    Parameters clone() const;
    bool bit_equal(const Parameters& other) const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Canonical names: tok_emb, pos_emb, h.{i}.ln_1.{g,b}, h.{i}.attn.qkv.{w,b},
// h.{i}.attn.proj.{w,b}, h.{i}.ln_2.{g,b}, h.{i}.mlp.fc.{w,b},
// h.{i}.mlp.proj.{w,b}, ln_f.{g,b}, and lm_head when the head is untied.
std::vector<std::string> parameter_names(const ModelConfig& config);
std::vector<Shape> parameter_shapes(const ModelConfig& config);

// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1. Tensor i draws from
// its own stream mix_seed(seed, i).
Parameters init_parameters(const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

class GptModel {
public:
    GptModel(ModelConfig config, Parameters params);
    static GptModel initialize(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const Parameters& params() const noexcept { return params_; }
    Parameters& params() noexcept { return params_; }
    // The matrix used by the LM projection (tok_emb itself when tied).
    const Tensor& lm_head() const;

    // Final-layer-norm hidden states, [batch*seq, d_model]. `ids` holds
    // `batch` rows of equal length `seq` laid out contiguously.
    Tensor hidden(std::span<const int> ids, std::size_t batch, Mode mode, std::uint64_t dropout_seed = 0) const;
    // Logits [batch*seq, vocab_size].
    Tensor forward_batch(std::span<const int> ids, std::size_t batch, Mode mode, std::uint64_t dropout_seed = 0) const;
    // Logits [T, vocab_size] for one sequence.
    Tensor forward(std::span<const int> ids, Mode mode = Mode::eval, std::uint64_t dropout_seed = 0) const;

private:
    ModelConfig config_;
    Parameters params_;
};

struct Sampling {
    enum class Kind { greedy, temperature, top_k };
    Kind kind = Kind::greedy;
    double temperature = 1.0;
    int top_k = 1;

    static Sampling greedy() { return {}; }
    static Sampling with_temperature(double t) { return {Kind::temperature, t, 1}; }
    static Sampling with_top_k(int k, double t = 1.0) { return {Kind::top_k, t, k}; }
};

// Returns prompt ++ generated ids. Stops after max_new ids or right after
// emitting `stop_id` (if given). The window slides to the last ctx_len ids.
std::vector<int> generate(const GptModel& model, std::span<const int> prompt, std::size_t max_new,
                          const Sampling& sampling, std::uint64_t seed, std::optional<int> stop_id = std::nullopt);

}  // namespace alm
