#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tclp/parallel.hpp"
#include "tclp/tensor.hpp"

namespace tclp {

namespace detail {

// Threads engage only above this many multiply-adds; below it, spawn cost
// outweighs the work at these matrix sizes.
constexpr int64_t kParallelWork = 1 << 22;

// Eight independent accumulators, fixed combine order: deterministic and
// wide enough for the compiler to vectorize the reduction.
template <typename T>
inline T lane_dot(const T* __restrict__ a, const T* __restrict__ b, int64_t n) {
    T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
    T acc4 = T(0), acc5 = T(0), acc6 = T(0), acc7 = T(0);
    int64_t p = 0;
    for (; p + 8 <= n; p += 8) {
        acc0 += a[p] * b[p];
        acc1 += a[p + 1] * b[p + 1];
        acc2 += a[p + 2] * b[p + 2];
        acc3 += a[p + 3] * b[p + 3];
        acc4 += a[p + 4] * b[p + 4];
        acc5 += a[p + 5] * b[p + 5];
        acc6 += a[p + 6] * b[p + 6];
        acc7 += a[p + 7] * b[p + 7];
    }
    T acc = ((acc0 + acc4) + (acc1 + acc5)) + ((acc2 + acc6) + (acc3 + acc7));
    for (; p < n; ++p) acc += a[p] * b[p];
    return acc;
}

// C[M,N] = A[M,K] * B[K,N]. ikj order; inner loop contiguous in B and C.
template <typename T>
void matmul_nn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, int64_t m, int64_t k,
               int64_t n) {
    int64_t grain = std::max<int64_t>(1, kParallelWork / std::max<int64_t>(1, k * n));
    parallel_for(m, grain, [=](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            T* __restrict__ crow = c + i * n;
            std::fill(crow, crow + n, T(0));
            const T* arow = a + i * k;
            for (int64_t p = 0; p < k; ++p) {
                T av = arow[p];
                const T* __restrict__ brow = b + p * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

// C[M,K] += A[M,N] * B[K,N]^T. Inner loop contiguous in both operands.
template <typename T>
void matmul_nt_acc(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, int64_t m,
                   int64_t n, int64_t k) {
    int64_t grain = std::max<int64_t>(1, kParallelWork / std::max<int64_t>(1, n * k));
    parallel_for(m, grain, [=](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const T* arow = a + i * n;
            T* __restrict__ crow = c + i * k;
            for (int64_t j = 0; j < k; ++j) crow[j] += lane_dot(arow, b + j * n, n);
        }
    });
}

// C[K,N] += A[M,K]^T * B[M,N]. Parallel over rows of C so writes stay owned.
template <typename T>
void matmul_tn_acc(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, int64_t m,
                   int64_t k, int64_t n) {
    int64_t grain = std::max<int64_t>(1, kParallelWork / std::max<int64_t>(1, m * n));
    parallel_for(k, grain, [=](int64_t lo, int64_t hi) {
        for (int64_t i = 0; i < m; ++i) {
            const T* arow = a + i * k;
            const T* brow = b + i * n;
            for (int64_t j = lo; j < hi; ++j) {
                T av = arow[j];
                if (av == T(0)) continue;
                T* __restrict__ crow = c + j * n;
                for (int64_t p = 0; p < n; ++p) crow[p] += av * brow[p];
            }
        }
    });
}

}  // namespace detail

// Tape of recorded operations. Rebuilt per forward pass, freed after backward.
// Node ids are append order, so operands always precede their consumers and a
// single reverse sweep visits each node exactly once.
template <typename T>
class GraphT {
public:
    using NodeId = int;

    // ---- sources ----

    NodeId input(TensorT<T> value) {
        Node n;
        n.out = std::move(value);
        n.needs_grad = false;
        return push(std::move(n));
    }

    // Leaf backed by an external tensor; backward accumulates into leaf.grad
    // when leaf.requires_grad is set. The tensor must outlive the graph.
    NodeId param(TensorT<T>& leaf) {
        Node n;
        n.out = leaf;
        n.leaf = &leaf;
        n.needs_grad = leaf.requires_grad;
        return push(std::move(n));
    }

    // ---- elementwise ----

    NodeId add(NodeId a, NodeId b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        bool bias = tb.rank() == 1 && ta.rank() == 2 && tb.shape[0] == ta.shape[1];
        if (!bias && ta.shape != tb.shape)
            throw ShapeError("add: mismatched shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
        TensorT<T> out = ta;
        if (bias) {
            int64_t rows = ta.shape[0], cols = ta.shape[1];
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < cols; ++j) out.data[i * cols + j] += tb.data[j];
        } else {
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
        }
        return make(std::move(out), {a, b}, [a, b, bias](GraphT& g, const std::vector<T>& go) {
            if (g.wants(a)) {
                auto& ga = g.grad_buf(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (g.wants(b)) {
                auto& gb = g.grad_buf(b);
                if (bias) {
                    int64_t cols = int64_t(gb.size());
                    int64_t rows = int64_t(go.size()) / cols;
                    for (int64_t i = 0; i < rows; ++i)
                        for (int64_t j = 0; j < cols; ++j) gb[j] += go[i * cols + j];
                } else {
                    for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                }
            }
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.shape != tb.shape)
            throw ShapeError("mul: mismatched shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
        TensorT<T> out = ta;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
        return make(std::move(out), {a, b}, [a, b](GraphT& g, const std::vector<T>& go) {
            if (g.wants(a)) {
                auto& ga = g.grad_buf(a);
                const auto& vb = g.val(b).data;
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
            }
            if (g.wants(b)) {
                auto& gb = g.grad_buf(b);
                const auto& va = g.val(a).data;
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
            }
        });
    }

    NodeId relu(NodeId a) {
        TensorT<T> out = val(a);
        for (T& v : out.data) v = v > T(0) ? v : T(0);
        return make(std::move(out), {a}, [a](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& x = g.val(a).data;
            for (size_t i = 0; i < go.size(); ++i)
                if (x[i] > T(0)) ga[i] += go[i];
        });
    }

    NodeId tanh_(NodeId a) {
        TensorT<T> out = val(a);
        for (T& v : out.data) v = std::tanh(v);
        NodeId id = make(std::move(out), {a}, nullptr);
        nodes_[id].back = [a, id](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& y = g.val(id).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (T(1) - y[i] * y[i]);
        };
        return id;
    }

    NodeId exp_(NodeId a) {
        TensorT<T> out = val(a);
        for (T& v : out.data) v = std::exp(v);
        NodeId id = make(std::move(out), {a}, nullptr);
        nodes_[id].back = [a, id](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& y = g.val(id).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
        };
        return id;
    }

    NodeId log_(NodeId a) {
        TensorT<T> out = val(a);
        for (T& v : out.data) v = std::log(v);
        return make(std::move(out), {a}, [a](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& x = g.val(a).data;
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / x[i];
        });
    }

    NodeId scale(NodeId a, T c) {
        TensorT<T> out = val(a);
        for (T& v : out.data) v *= c;
        return make(std::move(out), {a}, [a, c](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
        });
    }

    // Multiply by a scalar held in a [1] node (the temperature path).
    NodeId scale_by(NodeId a, NodeId s) {
        const auto& ts = val(s);
        if (ts.numel() != 1) throw ShapeError("scale_by: scalar operand has shape " + shape_str(ts.shape));
        T sv = ts.data[0];
        TensorT<T> out = val(a);
        for (T& v : out.data) v *= sv;
        return make(std::move(out), {a, s}, [a, s](GraphT& g, const std::vector<T>& go) {
            if (g.wants(a)) {
                T sv = g.val(s).data[0];
                auto& ga = g.grad_buf(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * sv;
            }
            if (g.wants(s)) {
                const auto& x = g.val(a).data;
                T acc = T(0);
                for (size_t i = 0; i < go.size(); ++i) acc += go[i] * x[i];
                g.grad_buf(s)[0] += acc;
            }
        });
    }

    // ---- linear algebra ----

    NodeId matmul(NodeId a, NodeId b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
            throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
        int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        TensorT<T> out = TensorT<T>::zeros({int(m), int(n)});
        detail::matmul_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
        return make(std::move(out), {a, b}, [a, b, m, k, n](GraphT& g, const std::vector<T>& go) {
            if (g.wants(a))
                detail::matmul_nt_acc(go.data(), g.val(b).data.data(), g.grad_buf(a).data(), m, n, k);
            if (g.wants(b))
                detail::matmul_tn_acc(g.val(a).data.data(), go.data(), g.grad_buf(b).data(), m, k, n);
        });
    }

    NodeId transpose(NodeId a) {
        const auto& ta = val(a);
        if (ta.rank() != 2) throw ShapeError("transpose: expected 2-d, got " + shape_str(ta.shape));
        int64_t m = ta.shape[0], n = ta.shape[1];
        TensorT<T> out = TensorT<T>::zeros({int(n), int(m)});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.data[j * m + i] = ta.data[i * n + j];
        return make(std::move(out), {a}, [a, m, n](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        });
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[1])
            throw ShapeError("concat_rows: incompatible shapes " + shape_str(ta.shape) + " vs " +
                             shape_str(tb.shape));
        int64_t ra = ta.shape[0], rb = tb.shape[0], n = ta.shape[1];
        TensorT<T> out = TensorT<T>::zeros({int(ra + rb), int(n)});
        std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
        std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + ra * n);
        return make(std::move(out), {a, b}, [a, b, ra, rb, n](GraphT& g, const std::vector<T>& go) {
            if (g.wants(a)) {
                auto& ga = g.grad_buf(a);
                for (int64_t i = 0; i < ra * n; ++i) ga[i] += go[i];
            }
            if (g.wants(b)) {
                auto& gb = g.grad_buf(b);
                for (int64_t i = 0; i < rb * n; ++i) gb[i] += go[ra * n + i];
            }
        });
    }

    // ---- reductions ----

    NodeId sum_axis(NodeId a, int axis) { return reduce_axis(a, axis, false); }
    NodeId mean_axis(NodeId a, int axis) { return reduce_axis(a, axis, true); }

    NodeId sum_all(NodeId a) { return reduce_all(a, false); }
    NodeId mean_all(NodeId a) { return reduce_all(a, true); }

    // ---- normalization ----

    // Rows scaled to unit L2 norm. An exactly-zero row passes through as zero
    // (with a warning recorded) and contributes no gradient.
    NodeId l2_normalize_rows(NodeId a) {
        const auto& ta = val(a);
        if (ta.rank() != 2) throw ShapeError("l2_normalize_rows: expected 2-d, got " + shape_str(ta.shape));
        int64_t m = ta.shape[0], n = ta.shape[1];
        TensorT<T> out = ta;
        auto inv_norms = std::make_shared<std::vector<T>>(size_t(m), T(0));
        for (int64_t i = 0; i < m; ++i) {
            T ss = T(0);
            for (int64_t j = 0; j < n; ++j) ss += ta.data[i * n + j] * ta.data[i * n + j];
            if (ss == T(0)) {
                ++zero_norm_warnings_;
                continue;
            }
            T inv = T(1) / std::sqrt(ss);
            (*inv_norms)[size_t(i)] = inv;
            for (int64_t j = 0; j < n; ++j) out.data[i * n + j] *= inv;
        }
        NodeId id = make(std::move(out), {a}, nullptr);
        nodes_[id].back = [a, id, m, n, inv_norms](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& y = g.val(id).data;
            for (int64_t i = 0; i < m; ++i) {
                T inv = (*inv_norms)[size_t(i)];
                if (inv == T(0)) continue;
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j) dot += y[i * n + j] * go[i * n + j];
                for (int64_t j = 0; j < n; ++j) ga[i * n + j] += (go[i * n + j] - y[i * n + j] * dot) * inv;
            }
        };
        return id;
    }

    NodeId layer_norm_rows(NodeId x, NodeId gain, NodeId bias) {
        const auto& tx = val(x);
        const auto& tg = val(gain);
        const auto& tb = val(bias);
        if (tx.rank() != 2) throw ShapeError("layer_norm_rows: expected 2-d, got " + shape_str(tx.shape));
        int64_t m = tx.shape[0], n = tx.shape[1];
        if (tg.numel() != n || tb.numel() != n)
            throw ShapeError("layer_norm_rows: gain/bias " + shape_str(tg.shape) + "/" + shape_str(tb.shape) +
                             " do not match row width " + std::to_string(n));
        const T eps = T(1e-5);
        TensorT<T> out = TensorT<T>::zeros({int(m), int(n)});
        auto xhat = std::make_shared<std::vector<T>>(size_t(m * n));
        auto inv_std = std::make_shared<std::vector<T>>(size_t(m));
        for (int64_t i = 0; i < m; ++i) {
            const T* row = tx.data.data() + i * n;
            T mean = T(0);
            for (int64_t j = 0; j < n; ++j) mean += row[j];
            mean /= T(n);
            T var = T(0);
            for (int64_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= T(n);
            T inv = T(1) / std::sqrt(var + eps);
            (*inv_std)[size_t(i)] = inv;
            for (int64_t j = 0; j < n; ++j) {
                T xh = (row[j] - mean) * inv;
                (*xhat)[size_t(i * n + j)] = xh;
                out.data[i * n + j] = xh * tg.data[j] + tb.data[j];
            }
        }
        return make(std::move(out), {x, gain, bias},
                    [x, gain, bias, m, n, xhat, inv_std](GraphT& g, const std::vector<T>& go) {
                        const auto& vg = g.val(gain).data;
                        if (g.wants(x)) {
                            auto& gx = g.grad_buf(x);
                            for (int64_t i = 0; i < m; ++i) {
                                T sum_dxh = T(0), sum_dxh_xh = T(0);
                                for (int64_t j = 0; j < n; ++j) {
                                    T dxh = go[i * n + j] * vg[j];
                                    sum_dxh += dxh;
                                    sum_dxh_xh += dxh * (*xhat)[size_t(i * n + j)];
                                }
                                T inv = (*inv_std)[size_t(i)];
                                for (int64_t j = 0; j < n; ++j) {
                                    T dxh = go[i * n + j] * vg[j];
                                    T xh = (*xhat)[size_t(i * n + j)];
                                    gx[i * n + j] += inv * (dxh - sum_dxh / T(n) - xh * sum_dxh_xh / T(n));
                                }
                            }
                        }
                        if (g.wants(gain)) {
                            auto& gg = g.grad_buf(gain);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j)
                                    gg[j] += go[i * n + j] * (*xhat)[size_t(i * n + j)];
                        }
                        if (g.wants(bias)) {
                            auto& gb = g.grad_buf(bias);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
                        }
                    });
    }

    // ---- indexed ----

    NodeId gather_rows(NodeId table, std::vector<int> ids) {
        const auto& tt = val(table);
        if (tt.rank() != 2) throw ShapeError("gather_rows: expected 2-d table, got " + shape_str(tt.shape));
        int64_t v = tt.shape[0], n = tt.shape[1];
        for (int id : ids)
            if (id < 0 || id >= v)
                throw ShapeError("gather_rows: index " + std::to_string(id) + " out of range for table with " +
                                 std::to_string(v) + " rows");
        TensorT<T> out = TensorT<T>::zeros({int(ids.size()), int(n)});
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy_n(tt.data.begin() + int64_t(ids[i]) * n, n, out.data.begin() + int64_t(i) * n);
        auto idx = std::make_shared<std::vector<int>>(std::move(ids));
        return make(std::move(out), {table}, [table, n, idx](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(table)) return;
            auto& gt = g.grad_buf(table);
            for (size_t i = 0; i < idx->size(); ++i) {
                T* dst = gt.data() + int64_t((*idx)[i]) * n;
                const T* src = go.data() + int64_t(i) * n;
                for (int64_t j = 0; j < n; ++j) dst[j] += src[j];
            }
        });
    }

    // ---- losses ----

    // Mean over rows of -log softmax(logits)[target]. Log-sum-exp with
    // max subtraction; tau-scaled logits can reach +-100.
    NodeId softmax_xent(NodeId logits, std::vector<int> targets) {
        const auto& tl = val(logits);
        if (tl.rank() != 2) throw ShapeError("softmax_xent: expected 2-d logits, got " + shape_str(tl.shape));
        int64_t m = tl.shape[0], k = tl.shape[1];
        if (int64_t(targets.size()) != m)
            throw ShapeError("softmax_xent: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(m) + " rows");
        for (int t : targets)
            if (t < 0 || t >= k)
                throw ShapeError("softmax_xent: target " + std::to_string(t) + " out of range for " +
                                 std::to_string(k) + " classes");
        auto probs = std::make_shared<std::vector<T>>(size_t(m * k));
        T total = T(0);
        for (int64_t i = 0; i < m; ++i) {
            const T* row = tl.data.data() + i * k;
            T mx = row[0];
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            T denom = T(0);
            for (int64_t j = 0; j < k; ++j) {
                T e = std::exp(row[j] - mx);
                (*probs)[size_t(i * k + j)] = e;
                denom += e;
            }
            T inv = T(1) / denom;
            for (int64_t j = 0; j < k; ++j) (*probs)[size_t(i * k + j)] *= inv;
            total += std::log(denom) + mx - row[targets[size_t(i)]];
        }
        TensorT<T> out = TensorT<T>::scalar(total / T(m));
        auto tg = std::make_shared<std::vector<int>>(std::move(targets));
        return make(std::move(out), {logits}, [logits, m, k, probs, tg](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(logits)) return;
            auto& gl = g.grad_buf(logits);
            T scale = go[0] / T(m);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < k; ++j) gl[i * k + j] += scale * (*probs)[size_t(i * k + j)];
                gl[i * k + (*tg)[size_t(i)]] -= scale;
            }
        });
    }

    // ---- fused sequence ops ----

    // Multi-head self attention over rows laid out as [batch*seq, dim].
    // lengths[b] gives the valid prefix of each example; key positions at or
    // beyond the length are never read and query rows there emit zeros, so
    // results are bit-identical whatever the padded length is.
    NodeId attention(NodeId q, NodeId k, NodeId v, std::vector<int> lengths, int batch, int seq, int heads) {
        const auto& tq = val(q);
        const auto& tk = val(k);
        const auto& tv = val(v);
        if (tq.shape != tk.shape || tq.shape != tv.shape)
            throw ShapeError("attention: q/k/v shapes differ: " + shape_str(tq.shape) + " " +
                             shape_str(tk.shape) + " " + shape_str(tv.shape));
        if (tq.rank() != 2 || tq.shape[0] != batch * seq)
            throw ShapeError("attention: rows " + shape_str(tq.shape) + " do not match batch*seq " +
                             std::to_string(batch * seq));
        int dim = tq.shape[1];
        if (dim % heads != 0)
            throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                             std::to_string(heads));
        if (int(lengths.size()) != batch)
            throw ShapeError("attention: lengths size " + std::to_string(lengths.size()) + " vs batch " +
                             std::to_string(batch));
        int hd = dim / heads;
        T scl = T(1) / std::sqrt(T(hd));
        TensorT<T> out = TensorT<T>::zeros({batch * seq, dim});
        auto probs = std::make_shared<std::vector<T>>(size_t(batch) * heads * seq * seq, T(0));
        auto lens = std::make_shared<std::vector<int>>(std::move(lengths));
        const T* qd = tq.data.data();
        const T* kd = tk.data.data();
        const T* vd = tv.data.data();
        T* od = out.data.data();
        int64_t grain = std::max<int64_t>(
            1, detail::kParallelWork / std::max<int64_t>(1, int64_t(seq) * seq * hd * 3));
        parallel_for(int64_t(batch) * heads, grain, [&](int64_t lo, int64_t hi) {
            std::vector<T> srow(static_cast<size_t>(seq));
            for (int64_t bh = lo; bh < hi; ++bh) {
                int b = int(bh / heads), h = int(bh % heads);
                int len = (*lens)[size_t(b)];
                for (int i = 0; i < len; ++i) {
                    const T* qrow = qd + (int64_t(b) * seq + i) * dim + h * hd;
                    T mx = -std::numeric_limits<T>::infinity();
                    for (int j = 0; j < len; ++j) {
                        const T* krow = kd + (int64_t(b) * seq + j) * dim + h * hd;
                        T s = detail::lane_dot(qrow, krow, hd) * scl;
                        srow[size_t(j)] = s;
                        mx = std::max(mx, s);
                    }
                    T denom = T(0);
                    for (int j = 0; j < len; ++j) {
                        T e = std::exp(srow[size_t(j)] - mx);
                        srow[size_t(j)] = e;
                        denom += e;
                    }
                    T inv = T(1) / denom;
                    T* prow = probs->data() + ((bh * seq) + i) * seq;
                    T* orow = od + (int64_t(b) * seq + i) * dim + h * hd;
                    for (int j = 0; j < len; ++j) {
                        T p = srow[size_t(j)] * inv;
                        prow[j] = p;
                        const T* vrow = vd + (int64_t(b) * seq + j) * dim + h * hd;
                        for (int c = 0; c < hd; ++c) orow[c] += p * vrow[c];
                    }
                }
            }
        });
        return make(std::move(out), {q, k, v},
                    [q, k, v, batch, seq, heads, hd, scl, probs, lens](GraphT& g, const std::vector<T>& go) {
                        int dim = heads * hd;
                        bool wq = g.wants(q), wk = g.wants(k), wv = g.wants(v);
                        if (!wq && !wk && !wv) return;
                        const T* qd = g.val(q).data.data();
                        const T* kd = g.val(k).data.data();
                        const T* vd = g.val(v).data.data();
                        T* gq = wq ? g.grad_buf(q).data() : nullptr;
                        T* gk = wk ? g.grad_buf(k).data() : nullptr;
                        T* gv = wv ? g.grad_buf(v).data() : nullptr;
                        int64_t grain = std::max<int64_t>(
                            1, detail::kParallelWork / std::max<int64_t>(1, int64_t(seq) * seq * hd * 5));
                        parallel_for(int64_t(batch) * heads, grain, [&](int64_t lo, int64_t hi) {
                            std::vector<T> dp(static_cast<size_t>(seq));
                            for (int64_t bh = lo; bh < hi; ++bh) {
                                int b = int(bh / heads), h = int(bh % heads);
                                int len = (*lens)[size_t(b)];
                                for (int i = 0; i < len; ++i) {
                                    const T* prow = probs->data() + ((bh * seq) + i) * seq;
                                    const T* grow = go.data() + (int64_t(b) * seq + i) * dim + h * hd;
                                    T dot_pd = T(0);
                                    for (int j = 0; j < len; ++j) {
                                        const T* vrow = vd + (int64_t(b) * seq + j) * dim + h * hd;
                                        T d = detail::lane_dot(grow, vrow, hd);
                                        dp[size_t(j)] = d;
                                        dot_pd += prow[j] * d;
                                        if (wv) {
                                            T* gvrow = gv + (int64_t(b) * seq + j) * dim + h * hd;
                                            for (int c = 0; c < hd; ++c) gvrow[c] += prow[j] * grow[c];
                                        }
                                    }
                                    if (!wq && !wk) continue;
                                    const T* qrow = qd + (int64_t(b) * seq + i) * dim + h * hd;
                                    T* gqrow = wq ? gq + (int64_t(b) * seq + i) * dim + h * hd : nullptr;
                                    for (int j = 0; j < len; ++j) {
                                        T ds = prow[j] * (dp[size_t(j)] - dot_pd) * scl;
                                        if (ds == T(0)) continue;
                                        const T* krow = kd + (int64_t(b) * seq + j) * dim + h * hd;
                                        if (wq)
                                            for (int c = 0; c < hd; ++c) gqrow[c] += ds * krow[c];
                                        if (wk) {
                                            T* gkrow = gk + (int64_t(b) * seq + j) * dim + h * hd;
                                            for (int c = 0; c < hd; ++c) gkrow[c] += ds * qrow[c];
                                        }
                                    }
                                }
                            }
                        });
                    });
    }

    // Mean over each example's valid rows: [batch*seq, dim] -> [batch, dim].
    NodeId masked_mean_rows(NodeId x, std::vector<int> lengths, int batch, int seq) {
        const auto& tx = val(x);
        if (tx.rank() != 2 || tx.shape[0] != batch * seq)
            throw ShapeError("masked_mean_rows: rows " + shape_str(tx.shape) + " do not match batch*seq " +
                             std::to_string(batch * seq));
        if (int(lengths.size()) != batch)
            throw ShapeError("masked_mean_rows: lengths size " + std::to_string(lengths.size()) + " vs batch " +
                             std::to_string(batch));
        for (int l : lengths)
            if (l < 1 || l > seq)
                throw ShapeError("masked_mean_rows: length " + std::to_string(l) + " outside [1," +
                                 std::to_string(seq) + "]");
        int64_t dim = tx.shape[1];
        TensorT<T> out = TensorT<T>::zeros({batch, int(dim)});
        for (int b = 0; b < batch; ++b) {
            T inv = T(1) / T(lengths[size_t(b)]);
            for (int i = 0; i < lengths[size_t(b)]; ++i) {
                const T* row = tx.data.data() + (int64_t(b) * seq + i) * dim;
                T* orow = out.data.data() + int64_t(b) * dim;
                for (int64_t j = 0; j < dim; ++j) orow[j] += row[j] * inv;
            }
        }
        auto lens = std::make_shared<std::vector<int>>(std::move(lengths));
        return make(std::move(out), {x}, [x, batch, seq, dim, lens](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(x)) return;
            auto& gx = g.grad_buf(x);
            for (int b = 0; b < batch; ++b) {
                T inv = T(1) / T((*lens)[size_t(b)]);
                const T* grow = go.data() + int64_t(b) * dim;
                for (int i = 0; i < (*lens)[size_t(b)]; ++i) {
                    T* gxrow = gx.data() + (int64_t(b) * seq + i) * dim;
                    for (int64_t j = 0; j < dim; ++j) gxrow[j] += grow[j] * inv;
                }
            }
        });
    }

    // ---- reverse sweep ----

    // Seeds d(loss)/d(loss) = 1 and walks the tape backwards once. Gradients
    // of requires_grad leaves are accumulated into their tensors.
    void backward(NodeId loss) {
        check_id(loss);
        if (val(loss).numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(val(loss).shape));
        grad_buf(loss)[0] = T(1);
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (n.grad.empty()) continue;
            if (n.leaf && n.leaf->requires_grad) {
                n.leaf->ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) n.leaf->grad[i] += n.grad[i];
            }
            if (n.back) n.back(*this, n.grad);
        }
    }

    const TensorT<T>& val(NodeId id) const {
        check_id(id);
        return nodes_[size_t(id)].out;
    }

    // Gradient buffer of a node after backward; empty if unreached.
    const std::vector<T>& node_grad(NodeId id) const {
        check_id(id);
        return nodes_[size_t(id)].grad;
    }

    size_t size() const { return nodes_.size(); }
    int zero_norm_warnings() const { return zero_norm_warnings_; }

private:
    struct Node {
        TensorT<T> out;
        std::vector<T> grad;
        std::vector<NodeId> parents;
        std::function<void(GraphT&, const std::vector<T>&)> back;
        TensorT<T>* leaf = nullptr;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    int zero_norm_warnings_ = 0;

    void check_id(NodeId id) const {
        if (id < 0 || size_t(id) >= nodes_.size())
            throw ShapeError("graph: bad node id " + std::to_string(id));
    }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return NodeId(nodes_.size() - 1);
    }

    NodeId make(TensorT<T> out, std::vector<NodeId> parents,
                std::function<void(GraphT&, const std::vector<T>&)> back) {
        Node n;
        n.out = std::move(out);
        n.parents = std::move(parents);
        n.back = std::move(back);
        for (NodeId p : n.parents) {
            check_id(p);
            if (nodes_[size_t(p)].needs_grad) {
                n.needs_grad = true;
                break;
            }
        }
        return push(std::move(n));
    }

    bool wants(NodeId id) { return nodes_[size_t(id)].needs_grad; }

    std::vector<T>& grad_buf(NodeId id) {
        Node& n = nodes_[size_t(id)];
        if (n.grad.empty()) n.grad.assign(n.out.data.size(), T(0));
        return n.grad;
    }

    NodeId reduce_axis(NodeId a, int axis, bool mean) {
        const auto& ta = val(a);
        if (ta.rank() != 2) throw ShapeError("reduce_axis: expected 2-d, got " + shape_str(ta.shape));
        if (axis != 0 && axis != 1) throw ShapeError("reduce_axis: axis must be 0 or 1");
        int64_t m = ta.shape[0], n = ta.shape[1];
        int64_t out_len = axis == 0 ? n : m;
        int64_t count = axis == 0 ? m : n;
        TensorT<T> out = TensorT<T>::zeros({int(out_len)});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.data[axis == 0 ? j : i] += ta.data[i * n + j];
        if (mean)
            for (T& v : out.data) v /= T(count);
        T w = mean ? T(1) / T(count) : T(1);
        return make(std::move(out), {a}, [a, axis, m, n, w](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ga[i * n + j] += go[size_t(axis == 0 ? j : i)] * w;
        });
    }

    NodeId reduce_all(NodeId a, bool mean) {
        const auto& ta = val(a);
        T acc = T(0);
        for (T v : ta.data) acc += v;
        int64_t count = ta.numel();
        if (mean) acc /= T(count);
        T w = mean ? T(1) / T(count) : T(1);
        return make(TensorT<T>::scalar(acc), {a}, [a, w](GraphT& g, const std::vector<T>& go) {
            if (!g.wants(a)) return;
            auto& ga = g.grad_buf(a);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[0] * w;
        });
    }
};

using Graph = GraphT<float>;

}  // namespace tclp
