#include "alm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "alm/error.hpp"
#include "alm/parallel.hpp"
#include "alm/rng.hpp"

namespace alm::ops {
namespace {

using detail::Node;
using Backward = std::function<void(Node&)>;

Tensor make_output(Shape shape, std::vector<double> data, const char* op, std::initializer_list<Tensor> inputs,
                   Backward backward) {
    for (double v : data) {
        if (!std::isfinite(v)) throw OverflowError(std::string(op) + ": non-finite value in output");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(t.shape()));
    }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    parallel_for(m, k * n, [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* c = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double a = A[i * k + p];
                const double* b = B + p * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
            }
        }
    });
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    parallel_for(m, k * n, [=](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* a = A + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = B + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
                C[i * n + j] += acc;
            }
        }
    });
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    parallel_for(k, m * n, [=](std::size_t p0, std::size_t p1) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* b = B + i * n;
            for (std::size_t p = p0; p < p1; ++p) {
                const double a = A[i * k + p];
                double* c = C + p * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
            }
        }
    });
}

std::size_t broadcast_size(const char* op, const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) dim_error(op, as, bs);
    return b.numel();
}

std::size_t resolve_axis(const char* op, const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(x.shape()));
    }
    return static_cast<std::size_t>(a);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) dim_error("matmul", a.shape(), b.shape());
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    return make_output({m, n}, std::move(out), "matmul", {a, b}, [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) gemm_nt(self.grad.data(), bn->data.data(), an->ensure_grad().data(), m, n, k);
        if (bn->requires_grad) gemm_tn(an->data.data(), self.grad.data(), bn->ensure_grad().data(), m, k, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank("matmul_nt", a, 2);
    require_rank("matmul_nt", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) dim_error("matmul_nt", a.shape(), b.shape());
    std::vector<double> out(m * n, 0.0);
    gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    return make_output({m, n}, std::move(out), "matmul_nt", {a, b}, [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) gemm_nn(self.grad.data(), bn->data.data(), an->ensure_grad().data(), m, n, k);
        if (bn->requires_grad) gemm_tn(self.grad.data(), an->data.data(), bn->ensure_grad().data(), m, n, k);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const std::size_t nb = broadcast_size("add", a, b);
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % nb];
    auto an = a.node();
    auto bn = b.node();
    return make_output(a.shape(), std::move(out), "add", {a, b}, [an, bn, nb](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const std::size_t nb = broadcast_size("mul", a, b);
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % nb];
    auto an = a.node();
    auto bn = b.node();
    return make_output(a.shape(), std::move(out), "mul", {a, b}, [an, bn, nb](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i % nb];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= factor;
    auto an = a.node();
    return make_output(a.shape(), std::move(out), "scale", {a}, [an, factor](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return make_output({1}, {s}, "sum", {a}, [an](Node& self) {
        auto& g = an->ensure_grad();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
        dim_error("reshape", a.shape(), shape);
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    auto an = a.node();
    return make_output(shape, std::move(out), "reshape", {a}, [an](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xd[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    auto xn = x.node();
    return make_output(x.shape(), std::move(out), "gelu", {x}, [xn](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xn->data[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const std::size_t ax = resolve_axis("softmax", x, axis);
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[ax];
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = xd[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(xd[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
        }
    }
    auto xn = x.node();
    return make_output(s, std::move(out), "softmax", {x}, [xn, outer, inner, len](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t idx = base + j * inner;
                    g[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("log_softmax: empty shape");
    const std::size_t len = x.shape().back();
    const std::size_t rows = x.numel() / len;
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * len;
        const double mx = *std::max_element(row, row + len);
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] = row[j] - lse;
    }
    auto xn = x.node();
    return make_output(x.shape(), std::move(out), "log_softmax", {x}, [xn, rows, len](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < len; ++j) gsum += self.grad[r * len + j];
            for (std::size_t j = 0; j < len; ++j) {
                const std::size_t idx = r * len + j;
                g[idx] += self.grad[idx] - std::exp(self.data[idx]) * gsum;
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis, double eps) {
    const std::size_t ax = resolve_axis("layer_norm", x, axis);
    if (ax + 1 != x.rank()) throw DimensionError("layer_norm: only the last axis is supported, got axis " + std::to_string(axis));
    if (!(eps > 0)) throw ConfigError("layer_norm: eps must be > 0");
    const std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d}) dim_error("layer_norm", x.shape(), gain.shape());
    if (bias.shape() != Shape{d}) dim_error("layer_norm", x.shape(), bias.shape());
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(rows);
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t idx = r * d + j;
            xhat[idx] = (row[j] - mean) * rstd[r];
            out[idx] = xhat[idx] * gd[j] + bd[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return make_output(x.shape(), std::move(out), "layer_norm", {x, gain, bias},
                       [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](Node& self) {
                           const auto& dy = self.grad;
                           if (gn->requires_grad) {
                               auto& g = gn->ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j] * xhat[r * d + j];
                               }
                           }
                           if (bn->requires_grad) {
                               auto& g = bn->ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j];
                               }
                           }
                           if (xn->requires_grad) {
                               auto& g = xn->ensure_grad();
                               const double inv_d = 1.0 / static_cast<double>(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double dxh = dy[r * d + j] * gn->data[j];
                                       m1 += dxh;
                                       m2 += dxh * xhat[r * d + j];
                                   }
                                   m1 *= inv_d;
                                   m2 *= inv_d;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double dxh = dy[r * d + j] * gn->data[j];
                                       g[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
                                   }
                               }
                           }
                       });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_rank("embedding", table, 2);
    if (ids.empty()) throw DimensionError("embedding: empty id list");
    const std::size_t V = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    const auto td = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
            throw RangeError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(V) + " rows");
        }
        std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    auto tn = table.node();
    std::vector<int> idv(ids.begin(), ids.end());
    return make_output({ids.size(), d}, std::move(out), "embedding", {table}, [tn, idv = std::move(idv), d](Node& self) {
        auto& g = tn->ensure_grad();
        for (std::size_t i = 0; i < idv.size(); ++i) {
            double* row = g.data() + static_cast<std::size_t>(idv[i]) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
        }
    });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank("select_rows", x, 2);
    if (rows.empty()) throw DimensionError("select_rows: empty row list");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) throw RangeError("select_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(x.shape()));
        std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
    }
    auto xn = x.node();
    std::vector<std::size_t> rv(rows.begin(), rows.end());
    return make_output({rows.size(), d}, std::move(out), "select_rows", {x}, [xn, rv = std::move(rv), d](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < rv.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) g[rv[i] * d + j] += self.grad[i * d + j];
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require_rank("cross_entropy", logits, 2);
    const std::size_t N = logits.dim(0), V = logits.dim(1);
    if (targets.size() != N) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    std::vector<double> lse(N, 0.0);
    double total = 0.0;
    std::size_t count = 0;
    const auto ld = logits.data();
    for (std::size_t n = 0; n < N; ++n) {
        if (targets[n] == kIgnoreIndex) continue;
        if (targets[n] < 0 || static_cast<std::size_t>(targets[n]) >= V) {
            throw RangeError("cross_entropy: target " + std::to_string(targets[n]) + " outside " + std::to_string(V) + " classes");
        }
        const double* row = ld.data() + n * V;
        const double mx = *std::max_element(row, row + V);
        double z = 0.0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
        lse[n] = mx + std::log(z);
        total += lse[n] - row[targets[n]];
        ++count;
    }
    const double loss = count ? total / static_cast<double>(count) : 0.0;
    auto ln = logits.node();
    std::vector<int> tv(targets.begin(), targets.end());
    return make_output({1}, {loss}, "cross_entropy", {logits},
                       [ln, tv = std::move(tv), lse = std::move(lse), count, N, V](Node& self) {
                           if (count == 0) return;
                           auto& g = ln->ensure_grad();
                           const double s = self.grad[0] / static_cast<double>(count);
                           for (std::size_t n = 0; n < N; ++n) {
                               if (tv[n] == kIgnoreIndex) continue;
                               for (std::size_t j = 0; j < V; ++j) {
                                   g[n * V + j] += s * std::exp(ln->data[n * V + j] - lse[n]);
                               }
                               g[n * V + static_cast<std::size_t>(tv[n])] -= s;
                           }
                       });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool train) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0, 1)");
    if (!train || p == 0.0) return x;
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
    auto xn = x.node();
    return make_output(x.shape(), std::move(out), "dropout", {x}, [xn, mask = std::move(mask)](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Tensor causal_attention(const Tensor& qkv, std::size_t batch, std::size_t seq, std::size_t heads, double dropout_p,
                        std::uint64_t dropout_seed, bool train) {
    require_rank("causal_attention", qkv, 2);
    if (batch == 0 || seq == 0 || heads == 0 || qkv.dim(0) != batch * seq || qkv.dim(1) % (3 * heads) != 0) {
        throw DimensionError("causal_attention: qkv " + shape_str(qkv.shape()) + " incompatible with batch=" +
                             std::to_string(batch) + " seq=" + std::to_string(seq) + " heads=" + std::to_string(heads));
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("attention dropout must be in [0, 1)");
    const std::size_t d = qkv.dim(1) / 3;
    const std::size_t hd = d / heads;
    const std::size_t row = 3 * d;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool use_drop = train && dropout_p > 0.0;
    const double keep_scale = use_drop ? 1.0 / (1.0 - dropout_p) : 1.0;

    // probs[b][h][t][s] for s <= t (rest stays 0); mask matches when dropout is on.
    std::vector<double> probs(batch * heads * seq * seq, 0.0);
    std::vector<double> mask;
    if (use_drop) {
        Rng rng(dropout_seed);
        mask.resize(probs.size());
        for (double& m : mask) m = rng.uniform() >= dropout_p ? keep_scale : 0.0;
    }
    std::vector<double> out(batch * seq * d, 0.0);
    const double* X = qkv.data().data();

    parallel_for(batch * heads, seq * seq * hd * 2, [&](std::size_t bh0, std::size_t bh1) {
        for (std::size_t bh = bh0; bh < bh1; ++bh) {
            const std::size_t b = bh / heads, h = bh % heads;
            double* P = probs.data() + bh * seq * seq;
            for (std::size_t t = 0; t < seq; ++t) {
                const double* q = X + (b * seq + t) * row + h * hd;
                double mx = -INFINITY;
                for (std::size_t s = 0; s <= t; ++s) {
                    const double* k = X + (b * seq + s) * row + d + h * hd;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < hd; ++j) acc += q[j] * k[j];
                    P[t * seq + s] = acc * sc;
                    mx = std::max(mx, acc * sc);
                }
                double z = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    P[t * seq + s] = std::exp(P[t * seq + s] - mx);
                    z += P[t * seq + s];
                }
                double* o = out.data() + (b * seq + t) * d + h * hd;
                for (std::size_t s = 0; s <= t; ++s) {
                    P[t * seq + s] /= z;
                    const double w = use_drop ? P[t * seq + s] * mask[bh * seq * seq + t * seq + s] : P[t * seq + s];
                    const double* v = X + (b * seq + s) * row + 2 * d + h * hd;
                    for (std::size_t j = 0; j < hd; ++j) o[j] += w * v[j];
                }
            }
        }
    });

    auto xn = qkv.node();
    return make_output({batch * seq, d}, std::move(out), "causal_attention", {qkv},
                       [xn, probs = std::move(probs), mask = std::move(mask), batch, seq, heads, d, hd, row, sc,
                        use_drop](Node& self) {
                           auto& G = xn->ensure_grad();
                           const double* X = xn->data.data();
                           const double* dO = self.grad.data();
                           // Each (b, h) writes a disjoint column slice of G.
                           parallel_for(batch * heads, seq * seq * hd * 4, [&](std::size_t bh0, std::size_t bh1) {
                               std::vector<double> dp(seq);
                               for (std::size_t bh = bh0; bh < bh1; ++bh) {
                                   const std::size_t b = bh / heads, h = bh % heads;
                                   const double* P = probs.data() + bh * seq * seq;
                                   for (std::size_t t = 0; t < seq; ++t) {
                                       const double* go = dO + (b * seq + t) * d + h * hd;
                                       double dot = 0.0;
                                       for (std::size_t s = 0; s <= t; ++s) {
                                           const double m = use_drop ? mask[bh * seq * seq + t * seq + s] : 1.0;
                                           const double* v = X + (b * seq + s) * row + 2 * d + h * hd;
                                           double* gv = G.data() + (b * seq + s) * row + 2 * d + h * hd;
                                           const double w = P[t * seq + s] * m;
                                           double acc = 0.0;
                                           for (std::size_t j = 0; j < hd; ++j) {
                                               gv[j] += w * go[j];
                                               acc += go[j] * v[j];
                                           }
                                           dp[s] = acc * m;
                                           dot += dp[s] * P[t * seq + s];
                                       }
                                       const double* q = X + (b * seq + t) * row + h * hd;
                                       double* gq = G.data() + (b * seq + t) * row + h * hd;
                                       for (std::size_t s = 0; s <= t; ++s) {
                                           const double ds = P[t * seq + s] * (dp[s] - dot) * sc;
                                           const double* k = X + (b * seq + s) * row + d + h * hd;
                                           double* gk = G.data() + (b * seq + s) * row + d + h * hd;
                                           for (std::size_t j = 0; j < hd; ++j) {
                                               gq[j] += ds * k[j];
                                               gk[j] += ds * q[j];
                                           }
                                       }
                                   }
                               }
                           });
                       });
}

}  // namespace alm::ops
