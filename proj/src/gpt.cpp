#include "alm/gpt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "alm/error.hpp"
#include "alm/ops.hpp"
#include "alm/rng.hpp"

namespace alm {

namespace {

constexpr double kInitStd = 0.02;

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
}

bool is_prob(double p) { return std::isfinite(p) && p >= 0.0 && p < 1.0; }

std::string layer(int i, const char* suffix) { return "h." + std::to_string(i) + "." + suffix; }

enum class InitKind { normal, zeros, ones };

InitKind init_kind(const std::string& name) {
    if (name.ends_with(".g")) return InitKind::ones;
    if (name.ends_with(".b")) return InitKind::zeros;
    return InitKind::normal;
}

}  // namespace

void ModelConfig::validate() const {
    require(n_layers >= 0, "n_layers must be >= 0");
    require(n_heads > 0, "n_heads must be positive");
    require(d_model > 0, "d_model must be positive");
    require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(d_ff >= 0, "d_ff must be positive (or 0 for 4*d_model)");
    require(vocab_size > 0, "vocab_size must be positive");
    require(ctx_len > 0, "ctx_len must be positive");
    require(is_prob(attn_dropout), "attn_dropout must be in [0,1)");
    require(is_prob(embd_dropout), "embd_dropout must be in [0,1)");
    require(is_prob(resid_dropout), "resid_dropout must be in [0,1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"n_layers", c.n_layers},         {"n_heads", c.n_heads},
                       {"d_model", c.d_model},           {"d_ff", c.ff_dim()},
                       {"vocab_size", c.vocab_size},     {"ctx_len", c.ctx_len},
                       {"attn_dropout", c.attn_dropout}, {"embd_dropout", c.embd_dropout},
                       {"resid_dropout", c.resid_dropout}, {"tie_lm_head", c.tie_lm_head}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig out;
    auto get = [&](const char* key, auto& field) {
        if (auto it = j.find(key); it != j.end()) {
            try {
                it->get_to(field);
            } catch (const nlohmann::json::exception&) {
                throw ConfigError(std::string("model config: bad value for ") + key);
            }
        }
    };
    get("n_layers", out.n_layers);
    get("n_heads", out.n_heads);
    get("d_model", out.d_model);
    get("d_ff", out.d_ff);
    get("vocab_size", out.vocab_size);
    get("ctx_len", out.ctx_len);
    get("attn_dropout", out.attn_dropout);
    get("embd_dropout", out.embd_dropout);
    get("resid_dropout", out.resid_dropout);
    get("tie_lm_head", out.tie_lm_head);
    for (const auto& [key, _] : j.items()) {
        static const char* known[] = {"n_layers",     "n_heads",      "d_model",       "d_ff",       "vocab_size",
                                      "ctx_len",      "attn_dropout", "embd_dropout",  "resid_dropout", "tie_lm_head"};
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known))
            throw ConfigError("model config: unknown key '" + key + "'");
    }
    out.validate();
    c = out;
}

ModelConfig preset(std::string_view name) {
    ModelConfig c;
    if (name == "0.1B") {
        c.n_layers = 12;
        c.n_heads = 12;
        c.d_model = 768;
        c.ctx_len = 768;
    } else if (name == "0.3B") {
        c.n_layers = 24;
        c.n_heads = 16;
        c.d_model = 1024;
        c.ctx_len = 1024;
    } else {
        throw ConfigError("unknown model preset '" + std::string(name) + "' (expected 0.1B or 0.3B)");
    }
    c.vocab_size = 64000;
    c.d_ff = 0;
    return c;
}

std::uint64_t param_count(const ModelConfig& c) {
    c.validate();
    const std::uint64_t V = c.vocab_size, d = c.d_model, ctx = c.ctx_len, L = c.n_layers, ff = c.ff_dim();
    std::uint64_t n = V * d + ctx * d + L * (4 * d * d + 2 * d * ff + 9 * d + ff) + 2 * d;
    if (!c.tie_lm_head) n += V * d;
    return n;
}

// ---- Parameters

void Parameters::add(std::string name, Tensor tensor) {
    if (find(name)) throw ContractError("duplicate parameter '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor* Parameters::find(std::string_view name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Parameters::at(std::string_view name) const {
    if (const Tensor* t = find(name)) return *t;
    throw ContractError("no parameter named '" + std::string(name) + "'");
}

Tensor& Parameters::at(std::string_view name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }

std::uint64_t Parameters::scalar_count() const {
    std::uint64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
}

void Parameters::zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
}

Parameters Parameters::clone() const {
    Parameters out;
    for (const auto& [n, t] : entries_) {
        Tensor c = t.detach();
        c.set_requires_grad(t.requires_grad());
        out.entries_.emplace_back(n, std::move(c));
    }
    return out;
}

bool Parameters::bit_equal(const Parameters& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& [na, a] = entries_[i];
        const auto& [nb, b] = other.entries_[i];
        if (na != nb || a.shape() != b.shape()) return false;
        if (std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) != 0) return false;
    }
    return true;
}

std::vector<std::string> parameter_names(const ModelConfig& c) {
    std::vector<std::string> names{"tok_emb", "pos_emb"};
    for (int i = 0; i < c.n_layers; ++i) {
        for (const char* s : {"ln_1.g", "ln_1.b", "attn.qkv.w", "attn.qkv.b", "attn.proj.w", "attn.proj.b", "ln_2.g",
                              "ln_2.b", "mlp.fc.w", "mlp.fc.b", "mlp.proj.w", "mlp.proj.b"})
            names.push_back(layer(i, s));
    }
    names.emplace_back("ln_f.g");
    names.emplace_back("ln_f.b");
    if (!c.tie_lm_head) names.emplace_back("lm_head");
    return names;
}

std::vector<Shape> parameter_shapes(const ModelConfig& c) {
    const std::size_t V = c.vocab_size, d = c.d_model, ctx = c.ctx_len, ff = c.ff_dim();
    std::vector<Shape> shapes{{V, d}, {ctx, d}};
    for (int i = 0; i < c.n_layers; ++i) {
        const std::vector<Shape> block{{d}, {d}, {d, 3 * d}, {3 * d}, {d, d}, {d}, {d}, {d}, {d, ff}, {ff}, {ff, d}, {d}};
        shapes.insert(shapes.end(), block.begin(), block.end());
    }
    shapes.push_back({d});
    shapes.push_back({d});
    if (!c.tie_lm_head) shapes.push_back({V, d});
    return shapes;
}

Parameters init_parameters(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    const auto names = parameter_names(c);
    const auto shapes = parameter_shapes(c);
    Parameters p;
    for (std::size_t i = 0; i < names.size(); ++i) {
        Tensor t;
        switch (init_kind(names[i])) {
            case InitKind::ones: t = Tensor::full(shapes[i], 1.0); break;
            case InitKind::zeros: t = Tensor::zeros(shapes[i]); break;
            case InitKind::normal: t = rng_normal(shapes[i], 0.0, kInitStd, mix_seed(seed, i)); break;
        }
        t.set_requires_grad(true);
        p.add(names[i], std::move(t));
    }
    return p;
}

// ---- model

GptModel::GptModel(ModelConfig config, Parameters params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto names = parameter_names(config_);
    const auto shapes = parameter_shapes(config_);
    if (params_.size() != names.size())
        throw ContractError("parameter set has " + std::to_string(params_.size()) + " tensors, config expects " +
                            std::to_string(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Tensor& t = params_.at(names[i]);
        if (t.shape() != shapes[i])
            throw DimensionError("parameter " + names[i] + " has shape " + shape_str(t.shape()) + ", expected " +
                                 shape_str(shapes[i]));
    }
}

GptModel GptModel::initialize(const ModelConfig& config, std::uint64_t seed) {
    return GptModel(config, init_parameters(config, seed));
}

const Tensor& GptModel::lm_head() const {
    return config_.tie_lm_head ? params_.at("tok_emb") : params_.at("lm_head");
}

Tensor GptModel::hidden(std::span<const int> ids, std::size_t batch, Mode mode, std::uint64_t dropout_seed) const {
    if (batch == 0 || ids.empty() || ids.size() % batch != 0)
        throw InputError("forward: " + std::to_string(ids.size()) + " ids cannot form " + std::to_string(batch) +
                         " equal non-empty rows");
    const std::size_t T = ids.size() / batch;
    if (T > static_cast<std::size_t>(config_.ctx_len))
        throw ContextOverflowError("sequence length " + std::to_string(T) + " exceeds context window " +
                                   std::to_string(config_.ctx_len));
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= config_.vocab_size)
            throw RangeError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                             " outside vocabulary of size " + std::to_string(config_.vocab_size));

    const bool train = mode == Mode::train;
    std::uint64_t stream = 0;
    auto drop = [&](const Tensor& x, double p) { return ops::dropout(x, p, mix_seed(dropout_seed, stream++), train); };
    auto linear = [&](const Tensor& x, const std::string& prefix) {
        return ops::add(ops::matmul(x, params_.at(prefix + ".w")), params_.at(prefix + ".b"));
    };
    auto norm = [&](const Tensor& x, const std::string& prefix) {
        return ops::layer_norm(x, params_.at(prefix + ".g"), params_.at(prefix + ".b"));
    };

    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i % T);

    Tensor x = ops::add(ops::embedding(params_.at("tok_emb"), ids), ops::embedding(params_.at("pos_emb"), positions));
    x = drop(x, config_.embd_dropout);
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string h = "h." + std::to_string(l) + ".";
        Tensor qkv = linear(norm(x, h + "ln_1"), h + "attn.qkv");
        Tensor a = ops::causal_attention(qkv, batch, T, static_cast<std::size_t>(config_.n_heads),
                                         config_.attn_dropout, mix_seed(dropout_seed, stream++), train);
        x = ops::add(x, drop(linear(a, h + "attn.proj"), config_.resid_dropout));
        Tensor m = ops::gelu(linear(norm(x, h + "ln_2"), h + "mlp.fc"));
        x = ops::add(x, drop(linear(m, h + "mlp.proj"), config_.resid_dropout));
    }
    return norm(x, "ln_f");
}

Tensor GptModel::forward_batch(std::span<const int> ids, std::size_t batch, Mode mode,
                               std::uint64_t dropout_seed) const {
    return ops::matmul_nt(hidden(ids, batch, mode, dropout_seed), lm_head());
}

Tensor GptModel::forward(std::span<const int> ids, Mode mode, std::uint64_t dropout_seed) const {
    return forward_batch(ids, 1, mode, dropout_seed);
}

// ---- generation

namespace {

std::size_t argmax(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Draws an index from softmax(logits[candidates] / temperature).
std::size_t sample(std::span<const double> row, const std::vector<std::size_t>& candidates, double temperature,
                   Rng& rng) {
    double top = -INFINITY;
    for (auto c : candidates) top = std::max(top, row[c] / temperature);
    std::vector<double> w(candidates.size());
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        w[i] = std::exp(row[candidates[i]] / temperature - top);
        total += w[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (u < w[i]) return candidates[i];
        u -= w[i];
    }
    return candidates.back();  // rounding tail
}

}  // namespace

std::vector<int> generate(const GptModel& model, std::span<const int> prompt, std::size_t max_new,
                          const Sampling& sampling, std::uint64_t seed, std::optional<int> stop_id) {
    if (sampling.kind != Sampling::Kind::greedy && !(sampling.temperature > 0.0 && std::isfinite(sampling.temperature)))
        throw ConfigError("sampling temperature must be > 0");
    if (sampling.kind == Sampling::Kind::top_k && sampling.top_k < 1) throw ConfigError("top_k must be >= 1");
    if (prompt.empty()) throw InputError("generate: prompt must not be empty");

    std::vector<int> out(prompt.begin(), prompt.end());
    const std::size_t ctx = static_cast<std::size_t>(model.config().ctx_len);
    const std::size_t V = static_cast<std::size_t>(model.config().vocab_size);
    Rng rng(seed);
    NoGradGuard no_grad;
    for (std::size_t step = 0; step < max_new; ++step) {
        const std::size_t start = out.size() > ctx ? out.size() - ctx : 0;
        const std::span<const int> window(out.data() + start, out.size() - start);
        // Only the last position is needed; skip the head projection for the rest.
        Tensor h = model.hidden(window, 1, Mode::eval);
        const std::size_t last = window.size() - 1;
        Tensor logits = ops::matmul_nt(ops::select_rows(h, std::span<const std::size_t>(&last, 1)), model.lm_head());
        const std::span<const double> row(logits.data().data(), V);

        std::size_t next = 0;
        switch (sampling.kind) {
            case Sampling::Kind::greedy: next = argmax(row); break;
            case Sampling::Kind::temperature: {
                std::vector<std::size_t> all(V);
                std::iota(all.begin(), all.end(), std::size_t{0});
                next = sample(row, all, sampling.temperature, rng);
                break;
            }
            case Sampling::Kind::top_k: {
                const std::size_t k = std::min(V, static_cast<std::size_t>(sampling.top_k));
                std::vector<std::size_t> idx(V);
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                                  [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
                idx.resize(k);
                next = k == 1 ? idx[0] : sample(row, idx, sampling.temperature, rng);
                break;
            }
        }
        out.push_back(static_cast<int>(next));
        if (stop_id && static_cast<int>(next) == *stop_id) break;
    }
    return out;
}

}  // namespace alm
