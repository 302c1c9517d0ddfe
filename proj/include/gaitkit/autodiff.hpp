#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gaitkit/tensor.hpp"

namespace gaitkit {

template <typename S>
class TapeT;

// Handle into a tape node. Cheap to copy; only valid while the tape lives.
template <typename S>
struct VarT {
    TapeT<S>* tape = nullptr;
    size_t id = 0;

    const TensorT<S>& val() const { return tape->value(id); }
    const Shape& shape() const { return tape->value(id).shape(); }
};

// Reverse-mode tape. Ops append nodes eagerly (forward value computed at
// call time) together with a closure that propagates gradients to their
// parents. Creation order is a topological order, so running closures in
// reverse creation order is exact reverse topological order.
template <typename S>
class TapeT {
  public:
    using Var = VarT<S>;
    using BackFn = std::function<void(TapeT&)>;

    Var leaf(TensorT<S> v) { return push(std::move(v), nullptr); }

    // Id of the node the next push() will create. Ops capture this in their
    // backward closure to find their own output gradient.
    size_t next_id() const { return nodes_.size(); }

    Var push(TensorT<S> value, BackFn back) {
        nodes_.push_back(Node{std::move(value), TensorT<S>(), std::move(back), false});
        return Var{this, nodes_.size() - 1};
    }

    const TensorT<S>& value(size_t id) const { return nodes_[id].value; }

    // Gradient buffer for accumulation; allocates lazily and marks the node
    // as reached so its own closure will run.
    TensorT<S>& grad_buf(size_t id) {
        Node& n = nodes_[id];
        if (!n.touched) {
            n.grad = TensorT<S>(n.value.shape());
            n.touched = true;
        }
        return n.grad;
    }

    // Read-only gradient of an already-reached node (valid inside closures).
    const TensorT<S>& out_grad(size_t id) const { return nodes_[id].grad; }

    // Gradient of a node after backward(); zeros if unreachable.
    TensorT<S> grad_of(Var v) const {
        const Node& n = nodes_[v.id];
        if (!n.touched) return TensorT<S>(n.value.shape());
        return n.grad;
    }

    void backward(Var loss) {
        if (loss.tape != this)
            throw std::invalid_argument("backward: variable belongs to another tape");
        if (value(loss.id).numel() != 1)
            throw DimensionError("backward: loss must be scalar, got shape " +
                                 value(loss.id).shape_string());
        grad_buf(loss.id)[0] = S(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.touched && n.back) n.back(*this);
        }
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        TensorT<S> value;
        TensorT<S> grad;
        BackFn back;
        bool touched;
    };
    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using Var = VarT<float>;

namespace detail {

template <typename S>
inline void check_same_tape(const VarT<S>& a, const VarT<S>& b, const char* op) {
    if (a.tape != b.tape)
        throw std::invalid_argument(std::string(op) + ": variables from different tapes");
}

template <typename S>
inline void axpy(TensorT<S>& dst, const TensorT<S>& src) {
    S* d = dst.data();
    const S* s = src.data();
    for (size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> add(VarT<S> a, VarT<S> b) {
    detail::check_same_tape(a, b, "add");
    check_same_shape(a.val(), b.val(), "add");
    TensorT<S> out = a.val();
    detail::axpy(out, b.val());
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), [oid, ia, ib](TapeT<S>& t) {
        detail::axpy(t.grad_buf(ia), t.out_grad(oid));
        detail::axpy(t.grad_buf(ib), t.out_grad(oid));
    });
}

template <typename S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
    detail::check_same_tape(a, b, "sub");
    check_same_shape(a.val(), b.val(), "sub");
    TensorT<S> out = a.val();
    const S* pb = b.val().data();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), [oid, ia, ib](TapeT<S>& t) {
        const TensorT<S>& g = t.out_grad(oid);
        detail::axpy(t.grad_buf(ia), g);
        TensorT<S>& gb = t.grad_buf(ib);
        for (size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
    });
}

template <typename S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
    detail::check_same_tape(a, b, "mul");
    check_same_shape(a.val(), b.val(), "mul");
    TensorT<S> out = a.val();
    const S* pb = b.val().data();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), [oid, ia, ib](TapeT<S>& t) {
        const TensorT<S>& g = t.out_grad(oid);
        const TensorT<S>& va = t.value(ia);
        const TensorT<S>& vb = t.value(ib);
        TensorT<S>& ga = t.grad_buf(ia);
        for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * vb[i];
        TensorT<S>& gb = t.grad_buf(ib);
        for (size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * va[i];
    });
}

template <typename S>
VarT<S> scale(VarT<S> a, S c) {
    TensorT<S> out = a.val();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] *= c;
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), [oid, ia, c](TapeT<S>& t) {
        const TensorT<S>& g = t.out_grad(oid);
        TensorT<S>& ga = t.grad_buf(ia);
        for (size_t i = 0; i < ga.numel(); ++i) ga[i] += c * g[i];
    });
}

template <typename S>
VarT<S> add_const(VarT<S> a, S c) {
    TensorT<S> out = a.val();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] += c;
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), [oid, ia](TapeT<S>& t) {
        detail::axpy(t.grad_buf(ia), t.out_grad(oid));
    });
}

template <typename S>
VarT<S> relu(VarT<S> a) {
    TensorT<S> out = a.val();
    S* po = out.data();
    for (size_t i = 0; i < out.numel(); ++i) po[i] = po[i] > S(0) ? po[i] : S(0);
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), [oid, ia](TapeT<S>& t) {
        const TensorT<S>& g = t.out_grad(oid);
        const TensorT<S>& x = t.value(ia);
        TensorT<S>& ga = t.grad_buf(ia);
        for (size_t i = 0; i < ga.numel(); ++i)
            if (x[i] > S(0)) ga[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> sum(VarT<S> a) {
    S acc = S(0);
    const S* pa = a.val().data();
    for (size_t i = 0; i < a.val().numel(); ++i) acc += pa[i];
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id;
    return t.push(TensorT<S>::scalar(acc), [oid, ia](TapeT<S>& t) {
        S g = t.out_grad(oid)[0];
        TensorT<S>& ga = t.grad_buf(ia);
        for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

template <typename S>
VarT<S> mean(VarT<S> a) {
    size_t n = a.val().numel();
    S acc = S(0);
    const S* pa = a.val().data();
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    acc /= S(n);
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id;
    return t.push(TensorT<S>::scalar(acc), [oid, ia, n](TapeT<S>& t) {
        S g = t.out_grad(oid)[0] / S(n);
        TensorT<S>& ga = t.grad_buf(ia);
        for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

// ---------------------------------------------------------------------------
// matmul and friends
// ---------------------------------------------------------------------------

// (m,k) x (k,n) -> (m,n). Backward accumulates g.b^T into a and a^T.g into b.
template <typename S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
    detail::check_same_tape(a, b, "matmul");
    const TensorT<S>& va = a.val();
    const TensorT<S>& vb = b.val();
    if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
        throw DimensionError("matmul: incompatible shapes " + va.shape_string() + " x " +
                             vb.shape_string());
    const size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    TensorT<S> out(Shape{m, n});
    {
        const S* A = va.data();
        const S* B = vb.data();
        S* O = out.data();
        for (size_t i = 0; i < m; ++i)
            for (size_t kk = 0; kk < k; ++kk) {
                S aik = A[i * k + kk];
                const S* Brow = B + kk * n;
                S* Orow = O + i * n;
                for (size_t j = 0; j < n; ++j) Orow[j] += aik * Brow[j];
            }
    }
    TapeT<S>& t = *a.tape;
    size_t oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), [oid, ia, ib, m, k, n](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        const S* A = t.value(ia).data();
        const S* B = t.value(ib).data();
        {
            S* GA = t.grad_buf(ia).data();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    S gij = G[i * n + j];
                    const S* Brow = B + j;  // column j of B
                    S* GArow = GA + i * k;
                    for (size_t kk = 0; kk < k; ++kk) GArow[kk] += gij * Brow[kk * n];
                }
        }
        {
            S* GB = t.grad_buf(ib).data();
            for (size_t kk = 0; kk < k; ++kk)
                for (size_t i = 0; i < m; ++i) {
                    S aik = A[i * k + kk];
                    const S* Grow = G + i * n;
                    S* GBrow = GB + kk * n;
                    for (size_t j = 0; j < n; ++j) GBrow[j] += aik * Grow[j];
                }
        }
    });
}

// x (B,D) plus row vector b (D), broadcast over rows.
template <typename S>
VarT<S> add_rowvec(VarT<S> x, VarT<S> b) {
    detail::check_same_tape(x, b, "add_rowvec");
    const TensorT<S>& vx = x.val();
    const TensorT<S>& vb = b.val();
    if (vx.ndim() != 2 || vb.ndim() != 1 || vx.dim(1) != vb.dim(0))
        throw DimensionError("add_rowvec: shapes " + vx.shape_string() + " + " +
                             vb.shape_string());
    const size_t rows = vx.dim(0), d = vx.dim(1);
    TensorT<S> out = vx;
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] += vb[j];
    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ix = x.id, ib = b.id;
    return t.push(std::move(out), [oid, ix, ib, rows, d](TapeT<S>& t) {
        const TensorT<S>& g = t.out_grad(oid);
        detail::axpy(t.grad_buf(ix), g);
        TensorT<S>& gb = t.grad_buf(ib);
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    });
}

template <typename S>
VarT<S> linear(VarT<S> x, VarT<S> w, VarT<S> b) {
    return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// temporal convolution
// ---------------------------------------------------------------------------

// x: (B,C_in,T,N), w: (C_out,C_in,K,1). Convolves along the time axis only;
// joints stay independent. T' = (T + 2*pad - K)/stride + 1.
template <typename S>
VarT<S> conv_temporal(VarT<S> x, VarT<S> w, size_t stride, size_t pad) {
    detail::check_same_tape(x, w, "conv_temporal");
    const TensorT<S>& vx = x.val();
    const TensorT<S>& vw = w.val();
    if (vx.ndim() != 4)
        throw DimensionError("conv_temporal: input must be 4-d, got " + vx.shape_string());
    if (vw.ndim() != 4 || vw.dim(3) != 1)
        throw DimensionError("conv_temporal: weight must be (C_out,C_in,K,1), got " +
                             vw.shape_string());
    if (vw.dim(1) != vx.dim(1))
        throw DimensionError("conv_temporal: channel mismatch, input " + vx.shape_string() +
                             " weight " + vw.shape_string());
    const size_t K = vw.dim(2);
    if (K % 2 == 0) throw DimensionError("conv_temporal: kernel size must be odd");
    if (stride == 0) throw DimensionError("conv_temporal: stride must be >= 1");
    const size_t B = vx.dim(0), Ci = vx.dim(1), T = vx.dim(2), N = vx.dim(3);
    const size_t Co = vw.dim(0);
    if (T + 2 * pad < K)
        throw DimensionError("conv_temporal: invalid geometry, T=" + std::to_string(T) +
                             " pad=" + std::to_string(pad) + " K=" + std::to_string(K));
    const size_t To = (T + 2 * pad - K) / stride + 1;

    TensorT<S> out(Shape{B, Co, To, N});
    {
        const S* X = vx.data();
        const S* W = vw.data();
        S* O = out.data();
        for (size_t b = 0; b < B; ++b)
            for (size_t co = 0; co < Co; ++co) {
                S* obase = O + (b * Co + co) * To * N;
                for (size_t ci = 0; ci < Ci; ++ci) {
                    const S* xbase = X + (b * Ci + ci) * T * N;
                    const S* wrow = W + (co * Ci + ci) * K;
                    for (size_t to = 0; to < To; ++to) {
                        S* orow = obase + to * N;
                        for (size_t k = 0; k < K; ++k) {
                            long ti = static_cast<long>(to * stride + k) - static_cast<long>(pad);
                            if (ti < 0 || ti >= static_cast<long>(T)) continue;
                            S wv = wrow[k];
                            const S* xrow = xbase + static_cast<size_t>(ti) * N;
                            for (size_t n = 0; n < N; ++n) orow[n] += wv * xrow[n];
                        }
                    }
                }
            }
    }
    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ixid = x.id, iwid = w.id;
    return t.push(std::move(out),
                  [oid, ixid, iwid, B, Ci, Co, T, To, N, K, stride, pad](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        const S* X = t.value(ixid).data();
        const S* W = t.value(iwid).data();
        {
            S* GX = t.grad_buf(ixid).data();
            for (size_t b = 0; b < B; ++b)
                for (size_t ci = 0; ci < Ci; ++ci) {
                    S* gxbase = GX + (b * Ci + ci) * T * N;
                    for (size_t co = 0; co < Co; ++co) {
                        const S* gbase = G + (b * Co + co) * To * N;
                        const S* wrow = W + (co * Ci + ci) * K;
                        for (size_t to = 0; to < To; ++to) {
                            const S* grow = gbase + to * N;
                            for (size_t k = 0; k < K; ++k) {
                                long ti = static_cast<long>(to * stride + k) -
                                          static_cast<long>(pad);
                                if (ti < 0 || ti >= static_cast<long>(T)) continue;
                                S wv = wrow[k];
                                S* gxrow = gxbase + static_cast<size_t>(ti) * N;
                                for (size_t n = 0; n < N; ++n) gxrow[n] += wv * grow[n];
                            }
                        }
                    }
                }
        }
        {
            S* GW = t.grad_buf(iwid).data();
            for (size_t co = 0; co < Co; ++co)
                for (size_t ci = 0; ci < Ci; ++ci) {
                    S* gwrow = GW + (co * Ci + ci) * K;
                    for (size_t b = 0; b < B; ++b) {
                        const S* gbase = G + (b * Co + co) * To * N;
                        const S* xbase = X + (b * Ci + ci) * T * N;
                        for (size_t to = 0; to < To; ++to) {
                            const S* grow = gbase + to * N;
                            for (size_t k = 0; k < K; ++k) {
                                long ti = static_cast<long>(to * stride + k) -
                                          static_cast<long>(pad);
                                if (ti < 0 || ti >= static_cast<long>(T)) continue;
                                const S* xrow = xbase + static_cast<size_t>(ti) * N;
                                S acc = S(0);
                                for (size_t n = 0; n < N; ++n) acc += grow[n] * xrow[n];
                                gwrow[k] += acc;
                            }
                        }
                    }
                }
        }
    });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <typename S>
struct BnStatsT {
    TensorT<S> running_mean;  // (C)
    TensorT<S> running_var;   // (C)

    explicit BnStatsT(size_t channels = 0)
        : running_mean(Shape{channels}, S(0)), running_var(Shape{channels}, S(1)) {}
};

using BnStats = BnStatsT<float>;

// x: (B,C,T,N). Training mode normalizes per channel over (B,T,N) with the
// biased variance and updates running stats (unbiased variance, momentum
// convention: new = (1-m)*old + m*batch). Eval mode uses the running stats.
template <typename S>
VarT<S> batch_norm(VarT<S> x, VarT<S> gamma, VarT<S> beta, BnStatsT<S>& stats,
                   bool training, S eps = S(1e-5), S momentum = S(0.1)) {
    detail::check_same_tape(x, gamma, "batch_norm");
    detail::check_same_tape(x, beta, "batch_norm");
    const TensorT<S>& vx = x.val();
    if (vx.ndim() != 4)
        throw DimensionError("batch_norm: input must be 4-d, got " + vx.shape_string());
    const size_t B = vx.dim(0), C = vx.dim(1), T = vx.dim(2), N = vx.dim(3);
    if (gamma.val().numel() != C || beta.val().numel() != C ||
        stats.running_mean.numel() != C)
        throw DimensionError("batch_norm: channel mismatch, input has C=" +
                             std::to_string(C));
    const size_t plane = T * N;
    const size_t n_per_c = B * plane;

    TensorT<S> mean(Shape{C}), invstd(Shape{C});
    if (training) {
        for (size_t c = 0; c < C; ++c) {
            S acc = S(0);
            for (size_t b = 0; b < B; ++b) {
                const S* row = vx.data() + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) acc += row[i];
            }
            S mu = acc / S(n_per_c);
            S vacc = S(0);
            for (size_t b = 0; b < B; ++b) {
                const S* row = vx.data() + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    S d = row[i] - mu;
                    vacc += d * d;
                }
            }
            S var = vacc / S(n_per_c);
            mean[c] = mu;
            invstd[c] = S(1) / std::sqrt(var + eps);
            S var_unbiased = n_per_c > 1 ? vacc / S(n_per_c - 1) : var;
            stats.running_mean[c] = (S(1) - momentum) * stats.running_mean[c] + momentum * mu;
            stats.running_var[c] =
                (S(1) - momentum) * stats.running_var[c] + momentum * var_unbiased;
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean[c] = stats.running_mean[c];
            invstd[c] = S(1) / std::sqrt(stats.running_var[c] + eps);
        }
    }

    TensorT<S> xhat(vx.shape());
    TensorT<S> out(vx.shape());
    const TensorT<S>& vg = gamma.val();
    const TensorT<S>& vb = beta.val();
    for (size_t b = 0; b < B; ++b)
        for (size_t c = 0; c < C; ++c) {
            const S* row = vx.data() + (b * C + c) * plane;
            S* hrow = xhat.data() + (b * C + c) * plane;
            S* orow = out.data() + (b * C + c) * plane;
            S mu = mean[c], is = invstd[c], ga = vg[c], be = vb[c];
            for (size_t i = 0; i < plane; ++i) {
                S h = (row[i] - mu) * is;
                hrow[i] = h;
                orow[i] = ga * h + be;
            }
        }

    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ix = x.id, ig = gamma.id, ibt = beta.id;
    return t.push(std::move(out),
                  [oid, ix, ig, ibt, B, C, plane, n_per_c, training,
                   xh = std::move(xhat), is = std::move(invstd)](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        const TensorT<S>& vg = t.value(ig);
        S* GG = t.grad_buf(ig).data();
        S* GB = t.grad_buf(ibt).data();
        S* GX = t.grad_buf(ix).data();
        for (size_t c = 0; c < C; ++c) {
            S sum_g = S(0), sum_gh = S(0);
            for (size_t b = 0; b < B; ++b) {
                const S* grow = G + (b * C + c) * plane;
                const S* hrow = xh.data() + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    sum_g += grow[i];
                    sum_gh += grow[i] * hrow[i];
                }
            }
            GB[c] += sum_g;
            GG[c] += sum_gh;
            S ga = vg[c], isc = is[c];
            if (training) {
                S inv_n = S(1) / S(n_per_c);
                for (size_t b = 0; b < B; ++b) {
                    const S* grow = G + (b * C + c) * plane;
                    const S* hrow = xh.data() + (b * C + c) * plane;
                    S* gxrow = GX + (b * C + c) * plane;
                    for (size_t i = 0; i < plane; ++i)
                        gxrow[i] += ga * isc *
                                    (grow[i] - inv_n * sum_g - hrow[i] * inv_n * sum_gh);
                }
            } else {
                for (size_t b = 0; b < B; ++b) {
                    const S* grow = G + (b * C + c) * plane;
                    S* gxrow = GX + (b * C + c) * plane;
                    for (size_t i = 0; i < plane; ++i) gxrow[i] += ga * isc * grow[i];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

// Concatenate (B,C_i,T,N) tensors along the channel axis.
template <typename S>
VarT<S> concat_channels(const std::vector<VarT<S>>& xs) {
    if (xs.empty()) throw DimensionError("concat_channels: empty input list");
    const size_t B = xs[0].val().dim(0), T = xs[0].val().dim(2), N = xs[0].val().dim(3);
    size_t Ctot = 0;
    for (const auto& x : xs) {
        const TensorT<S>& v = x.val();
        if (v.ndim() != 4 || v.dim(0) != B || v.dim(2) != T || v.dim(3) != N)
            throw DimensionError("concat_channels: incompatible shape " + v.shape_string());
        Ctot += v.dim(1);
    }
    TensorT<S> out(Shape{B, Ctot, T, N});
    const size_t plane = T * N;
    std::vector<size_t> ids, chans;
    for (const auto& x : xs) {
        ids.push_back(x.id);
        chans.push_back(x.val().dim(1));
    }
    size_t coff = 0;
    for (size_t s = 0; s < xs.size(); ++s) {
        const TensorT<S>& v = xs[s].val();
        size_t Cs = chans[s];
        for (size_t b = 0; b < B; ++b)
            std::copy(v.data() + b * Cs * plane, v.data() + (b + 1) * Cs * plane,
                      out.data() + (b * Ctot + coff) * plane);
        coff += Cs;
    }
    TapeT<S>& t = *xs[0].tape;
    size_t oid = t.next_id();
    return t.push(std::move(out), [oid, ids, chans, B, Ctot, plane](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        size_t coff = 0;
        for (size_t s = 0; s < ids.size(); ++s) {
            size_t Cs = chans[s];
            S* gx = t.grad_buf(ids[s]).data();
            for (size_t b = 0; b < B; ++b) {
                const S* gsrc = G + (b * Ctot + coff) * plane;
                S* gdst = gx + b * Cs * plane;
                for (size_t i = 0; i < Cs * plane; ++i) gdst[i] += gsrc[i];
            }
            coff += Cs;
        }
    });
}

// (B,C,T,N) -> (B,C), mean over time and joints.
template <typename S>
VarT<S> global_avg_pool(VarT<S> x) {
    const TensorT<S>& vx = x.val();
    if (vx.ndim() != 4)
        throw DimensionError("global_avg_pool: input must be 4-d, got " + vx.shape_string());
    const size_t B = vx.dim(0), C = vx.dim(1), plane = vx.dim(2) * vx.dim(3);
    TensorT<S> out(Shape{B, C});
    for (size_t b = 0; b < B; ++b)
        for (size_t c = 0; c < C; ++c) {
            const S* row = vx.data() + (b * C + c) * plane;
            S acc = S(0);
            for (size_t i = 0; i < plane; ++i) acc += row[i];
            out(b, c) = acc / S(plane);
        }
    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ix = x.id;
    return t.push(std::move(out), [oid, ix, B, C, plane](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        S* GX = t.grad_buf(ix).data();
        for (size_t b = 0; b < B; ++b)
            for (size_t c = 0; c < C; ++c) {
                S g = G[b * C + c] / S(plane);
                S* gxrow = GX + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) gxrow[i] += g;
            }
    });
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

// Named trainable tensor plus its gradient accumulator. Gradients persist
// across tapes and are zeroed by the optimizer between steps.
template <typename S>
struct ParameterT {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;
};

template <typename S>
class ParamStoreT {
  public:
    ParameterT<S>& add(const std::string& name, TensorT<S> value) {
        if (index_.count(name))
            throw ConfigError("duplicate parameter name: " + name);
        index_[name] = params_.size();
        params_.push_back(ParameterT<S>{name, std::move(value), TensorT<S>()});
        ParameterT<S>& p = params_.back();
        p.grad = TensorT<S>(p.value.shape());
        return p;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    ParameterT<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return params_[it->second];
    }
    const ParameterT<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return params_[it->second];
    }

    std::vector<ParameterT<S>>& all() { return params_; }
    const std::vector<ParameterT<S>>& all() const { return params_; }
    size_t count() const { return params_.size(); }

    size_t count_scalars() const {
        size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.grad.fill_(S(0));
    }

    template <typename T>
    ParamStoreT<T> cast() const {
        ParamStoreT<T> out;
        for (const auto& p : params_) out.add(p.name, p.value.template cast<T>());
        return out;
    }

  private:
    std::vector<ParameterT<S>> params_;
    std::unordered_map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Binds parameters to tape leaves for one forward/backward pass and collects
// the resulting gradients back into the store's accumulators.
template <typename S>
class ParamBinderT {
  public:
    ParamBinderT(TapeT<S>& tape, ParamStoreT<S>& store) : tape_(tape), store_(store) {}

    VarT<S> operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return VarT<S>{&tape_, it->second};
        VarT<S> leaf = tape_.leaf(store_.at(name).value);
        bound_[name] = leaf.id;
        return leaf;
    }

    // Adds tape gradients into the store accumulators. Leaves never reached
    // by backward contribute zero.
    void collect_grads() {
        for (const auto& [name, id] : bound_) {
            TensorT<S> g = tape_.grad_of(VarT<S>{&tape_, id});
            detail::axpy(store_.at(name).grad, g);
        }
    }

  private:
    TapeT<S>& tape_;
    ParamStoreT<S>& store_;
    std::unordered_map<std::string, size_t> bound_;
};

using ParamBinder = ParamBinderT<float>;

}  // namespace gaitkit
