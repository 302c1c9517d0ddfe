#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gaitkit/autodiff.hpp"

namespace gaitkit {

// Row-wise L2 normalization of (B,D). Rows with ~zero norm map to zero.
template <typename S>
VarT<S> l2_normalize_rows(VarT<S> x) {
    const TensorT<S>& vx = x.val();
    if (vx.ndim() != 2)
        throw DimensionError("l2_normalize_rows: input must be 2-d, got " +
                             vx.shape_string());
    const size_t B = vx.dim(0), D = vx.dim(1);
    TensorT<S> out(vx.shape());
    TensorT<S> inv_norm(Shape{B});
    for (size_t i = 0; i < B; ++i) {
        const S* row = vx.data() + i * D;
        S acc = S(0);
        for (size_t j = 0; j < D; ++j) acc += row[j] * row[j];
        S nrm = std::sqrt(acc);
        S inv = nrm > S(1e-12) ? S(1) / nrm : S(0);
        inv_norm[i] = inv;
        S* orow = out.data() + i * D;
        for (size_t j = 0; j < D; ++j) orow[j] = row[j] * inv;
    }
    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ix = x.id;
    return t.push(std::move(out), [oid, ix, B, D, inv = std::move(inv_norm)](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        const S* Y = t.value(oid).data();  // normalized rows
        S* GX = t.grad_buf(ix).data();
        for (size_t i = 0; i < B; ++i) {
            const S* g = G + i * D;
            const S* y = Y + i * D;
            S* gx = GX + i * D;
            S dot = S(0);
            for (size_t j = 0; j < D; ++j) dot += g[j] * y[j];
            S s = inv[i];
            for (size_t j = 0; j < D; ++j) gx[j] += s * (g[j] - y[j] * dot);
        }
    });
}

// Gram matrix z z^T of (B,D) -> (B,B); pairwise dot products.
template <typename S>
VarT<S> gram(VarT<S> z) {
    const TensorT<S>& vz = z.val();
    if (vz.ndim() != 2)
        throw DimensionError("gram: input must be 2-d, got " + vz.shape_string());
    const size_t B = vz.dim(0), D = vz.dim(1);
    TensorT<S> out(Shape{B, B});
    for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < B; ++j) {
            const S* a = vz.data() + i * D;
            const S* b = vz.data() + j * D;
            S acc = S(0);
            for (size_t d = 0; d < D; ++d) acc += a[d] * b[d];
            out(i, j) = acc;
        }
    TapeT<S>& t = *z.tape;
    size_t oid = t.next_id(), iz = z.id;
    return t.push(std::move(out), [oid, iz, B, D](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        const S* Z = t.value(iz).data();
        S* GZ = t.grad_buf(iz).data();
        // dz_i += sum_j (G_ij + G_ji) z_j
        for (size_t i = 0; i < B; ++i)
            for (size_t j = 0; j < B; ++j) {
                S g = G[i * B + j] + G[j * B + i];
                if (g == S(0)) continue;
                const S* zj = Z + j * D;
                S* gz = GZ + i * D;
                for (size_t d = 0; d < D; ++d) gz[d] += g * zj[d];
            }
    });
}

template <typename S>
struct SupConResultT {
    VarT<S> loss;
    size_t anchors_used = 0;
    bool degenerate = false;  // no anchor had a positive; loss pinned to 0
};

// Supervised contrastive loss over a matrix of pairwise similarities
// (typically gram of L2-normalized embeddings). For each anchor i with
// positive set P(i) = {p != i : label p == label i}:
//   term_i = (1/|P|) sum_p [ s_ip/tau - logsumexp_{a != i} (s_ia/tau) ]
// and the loss is -mean over anchors with |P| > 0. Anchors without positives
// are ignored. The log-sum-exp subtracts the row max, so tau down to 0.01
// stays finite in either precision.
template <typename S>
SupConResultT<S> supcon_from_logits(VarT<S> sim, const std::vector<int>& labels, S tau) {
    const TensorT<S>& vs = sim.val();
    if (vs.ndim() != 2 || vs.dim(0) != vs.dim(1))
        throw DimensionError("supcon: similarity matrix must be square, got " +
                             vs.shape_string());
    const size_t B = vs.dim(0);
    if (labels.size() != B)
        throw DimensionError("supcon: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(B) + " embeddings");
    if (B < 2) throw DimensionError("supcon: batch must have B >= 2");
    if (!(tau > S(0))) throw NumericError("supcon: temperature must be > 0");

    std::vector<std::vector<size_t>> positives(B);
    for (size_t i = 0; i < B; ++i)
        for (size_t p = 0; p < B; ++p)
            if (p != i && labels[p] == labels[i]) positives[i].push_back(p);

    size_t n_valid = 0;
    for (size_t i = 0; i < B; ++i)
        if (!positives[i].empty()) ++n_valid;

    TapeT<S>& t = *sim.tape;
    SupConResultT<S> res;
    res.anchors_used = n_valid;
    if (n_valid == 0) {
        res.degenerate = true;
        res.loss = t.leaf(TensorT<S>::scalar(S(0)));
        return res;
    }

    // forward + closed-form gradient wrt the similarity matrix
    TensorT<S> dsim(Shape{B, B});
    double loss_acc = 0.0;
    const S inv_tau = S(1) / tau;
    std::vector<S> prob(B);
    for (size_t i = 0; i < B; ++i) {
        if (positives[i].empty()) continue;
        S mx = -std::numeric_limits<S>::infinity();
        for (size_t a = 0; a < B; ++a)
            if (a != i) mx = std::max(mx, vs(i, a) * inv_tau);
        S denom = S(0);
        for (size_t a = 0; a < B; ++a)
            if (a != i) {
                prob[a] = std::exp(vs(i, a) * inv_tau - mx);
                denom += prob[a];
            }
        S lse = mx + std::log(denom);
        const S inv_p = S(1) / S(positives[i].size());
        double term = 0.0;
        for (size_t p : positives[i]) term += double(vs(i, p) * inv_tau - lse);
        loss_acc -= term * double(inv_p);

        // d loss / d s_ia = (1/(M tau)) * (softmax_ia - 1{a in P}/|P|)
        const S coef = inv_tau / S(n_valid);
        for (size_t a = 0; a < B; ++a)
            if (a != i) dsim(i, a) += coef * (prob[a] / denom);
        for (size_t p : positives[i]) dsim(i, p) -= coef * inv_p;
    }
    S loss_val = S(loss_acc / double(n_valid));

    size_t oid = t.next_id(), is = sim.id;
    res.loss = t.push(TensorT<S>::scalar(loss_val),
                      [oid, is, d = std::move(dsim)](TapeT<S>& t) {
        S g = t.out_grad(oid)[0];
        TensorT<S>& gs = t.grad_buf(is);
        for (size_t i = 0; i < gs.numel(); ++i) gs[i] += g * d[i];
    });
    return res;
}

// Full SupCon loss on raw embeddings: L2-normalize rows, form pairwise
// cosine similarities, apply the contrastive objective.
template <typename S>
SupConResultT<S> supcon_loss(VarT<S> embeddings, const std::vector<int>& labels, S tau) {
    VarT<S> z = l2_normalize_rows(embeddings);
    VarT<S> sim = gram(z);
    return supcon_from_logits(sim, labels, tau);
}

}  // namespace gaitkit
