#pragma once

#include <cmath>
#include <vector>

#include "gaitkit/autodiff.hpp"
#include "gaitkit/skeleton.hpp"
#include "gaitkit/tensor.hpp"

namespace gaitkit {

// Symmetric normalization D^{-1/2} A D^{-1/2} with D the row-degree of A.
// Rows (and columns) of zero degree stay zero: 0^{-1/2} * x := 0.
template <typename S>
TensorT<S> normalize_adjacency(const TensorT<S>& adj) {
    if (adj.ndim() != 2 || adj.dim(0) != adj.dim(1))
        throw DimensionError("normalize: adjacency must be square, got " +
                             adj.shape_string());
    const size_t n = adj.dim(0);
    std::vector<S> dscale(n, S(0));
    for (size_t i = 0; i < n; ++i) {
        S deg = S(0);
        for (size_t j = 0; j < n; ++j) deg += adj(i, j);
        dscale[i] = deg > S(0) ? S(1) / std::sqrt(deg) : S(0);
    }
    TensorT<S> out(adj.shape());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) out(i, j) = dscale[i] * adj(i, j) * dscale[j];
    return out;
}

// The three-way spatial partition of A + I: self loops, centripetal edges
// (neighbor strictly closer to the pose center) and centrifugal edges
// (everything else). Raw partitions sum to A + I exactly; each is then
// symmetrically normalized on its own degrees.
struct PartitionedAdjacency {
    size_t n_joints = 0;
    std::vector<Tensor> raw;         // 3 x (N,N), 0/1 entries
    std::vector<Tensor> normalized;  // 3 x (N,N)

    static constexpr size_t kSelf = 0;
    static constexpr size_t kCentripetal = 1;
    static constexpr size_t kCentrifugal = 2;
    static constexpr size_t kParts = 3;
};

inline PartitionedAdjacency spatial_partition(const SkeletonSpec& spec) {
    if (spec.hops_to_center.size() != spec.n_joints)
        throw DataError("spatial_partition: skeleton '" + spec.name +
                        "' has no cached hop distances (call finalize)");
    for (size_t j = 0; j < spec.n_joints; ++j)
        if (spec.hops_to_center[j] == size_t(-1))
            throw DataError("spatial_partition: disconnected skeleton '" + spec.name + "'");

    const size_t n = spec.n_joints;
    PartitionedAdjacency part;
    part.n_joints = n;
    part.raw.assign(PartitionedAdjacency::kParts, Tensor(Shape{n, n}));

    for (size_t i = 0; i < n; ++i) part.raw[PartitionedAdjacency::kSelf](i, i) = 1.0f;
    auto place = [&](size_t anchor, size_t nbr) {
        if (spec.hops_to_center[nbr] < spec.hops_to_center[anchor])
            part.raw[PartitionedAdjacency::kCentripetal](anchor, nbr) = 1.0f;
        else
            part.raw[PartitionedAdjacency::kCentrifugal](anchor, nbr) = 1.0f;
    };
    for (auto [i, j] : spec.edges) {
        place(i, j);
        place(j, i);
    }

    part.normalized.reserve(PartitionedAdjacency::kParts);
    for (const Tensor& r : part.raw) part.normalized.push_back(normalize_adjacency(r));
    return part;
}

// ---------------------------------------------------------------------------
// differentiable graph ops
// ---------------------------------------------------------------------------

// out[b,c,t,i] = sum_j M[i,j] * x[b,c,t,j] with M a constant matrix
// (row index = anchor joint).
template <typename S>
VarT<S> joint_aggregate(VarT<S> x, TensorT<S> M) {
    const TensorT<S>& vx = x.val();
    if (vx.ndim() != 4)
        throw DimensionError("joint_aggregate: input must be 4-d, got " + vx.shape_string());
    const size_t N = vx.dim(3);
    if (M.ndim() != 2 || M.dim(0) != N || M.dim(1) != N)
        throw DimensionError("joint_aggregate: joint-count mismatch, input " +
                             vx.shape_string() + " matrix " + M.shape_string());
    const size_t rows = vx.numel() / N;
    TensorT<S> out(vx.shape());
    {
        const S* X = vx.data();
        S* O = out.data();
        for (size_t r = 0; r < rows; ++r) {
            const S* xrow = X + r * N;
            S* orow = O + r * N;
            for (size_t i = 0; i < N; ++i) {
                const S* mrow = M.data() + i * N;
                S acc = S(0);
                for (size_t j = 0; j < N; ++j) acc += mrow[j] * xrow[j];
                orow[i] = acc;
            }
        }
    }
    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ix = x.id;
    return t.push(std::move(out), [oid, ix, rows, N, M = std::move(M)](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        S* GX = t.grad_buf(ix).data();
        // gx[j] += sum_i M[i,j] * g[i]
        for (size_t r = 0; r < rows; ++r) {
            const S* grow = G + r * N;
            S* gxrow = GX + r * N;
            for (size_t i = 0; i < N; ++i) {
                const S* mrow = M.data() + i * N;
                S gi = grow[i];
                for (size_t j = 0; j < N; ++j) gxrow[j] += mrow[j] * gi;
            }
        }
    });
}

// out[b,o,t,n] = sum_c x[b,c,t,n] * w[c,o]; a 1x1 convolution over channels.
template <typename S>
VarT<S> channel_mix(VarT<S> x, VarT<S> w) {
    detail::check_same_tape(x, w, "channel_mix");
    const TensorT<S>& vx = x.val();
    const TensorT<S>& vw = w.val();
    if (vx.ndim() != 4)
        throw DimensionError("channel_mix: input must be 4-d, got " + vx.shape_string());
    if (vw.ndim() != 2 || vw.dim(0) != vx.dim(1))
        throw DimensionError("channel_mix: channel mismatch, input " + vx.shape_string() +
                             " weight " + vw.shape_string());
    const size_t B = vx.dim(0), C = vx.dim(1), plane = vx.dim(2) * vx.dim(3);
    const size_t Co = vw.dim(1);
    TensorT<S> out(Shape{B, Co, vx.dim(2), vx.dim(3)});
    {
        const S* X = vx.data();
        const S* W = vw.data();
        S* O = out.data();
        for (size_t b = 0; b < B; ++b)
            for (size_t c = 0; c < C; ++c) {
                const S* xrow = X + (b * C + c) * plane;
                const S* wrow = W + c * Co;
                for (size_t o = 0; o < Co; ++o) {
                    S wv = wrow[o];
                    if (wv == S(0)) continue;
                    S* orow = O + (b * Co + o) * plane;
                    for (size_t i = 0; i < plane; ++i) orow[i] += wv * xrow[i];
                }
            }
    }
    TapeT<S>& t = *x.tape;
    size_t oid = t.next_id(), ix = x.id, iw = w.id;
    return t.push(std::move(out), [oid, ix, iw, B, C, Co, plane](TapeT<S>& t) {
        const S* G = t.out_grad(oid).data();
        const S* X = t.value(ix).data();
        const S* W = t.value(iw).data();
        {
            S* GX = t.grad_buf(ix).data();
            for (size_t b = 0; b < B; ++b)
                for (size_t o = 0; o < Co; ++o) {
                    const S* grow = G + (b * Co + o) * plane;
                    for (size_t c = 0; c < C; ++c) {
                        S wv = W[c * Co + o];
                        if (wv == S(0)) continue;
                        S* gxrow = GX + (b * C + c) * plane;
                        for (size_t i = 0; i < plane; ++i) gxrow[i] += wv * grow[i];
                    }
                }
        }
        {
            S* GW = t.grad_buf(iw).data();
            for (size_t b = 0; b < B; ++b)
                for (size_t c = 0; c < C; ++c) {
                    const S* xrow = X + (b * C + c) * plane;
                    S* gwrow = GW + c * Co;
                    for (size_t o = 0; o < Co; ++o) {
                        const S* grow = G + (b * Co + o) * plane;
                        S acc = S(0);
                        for (size_t i = 0; i < plane; ++i) acc += xrow[i] * grow[i];
                        gwrow[o] += acc;
                    }
                }
        }
    });
}

// Partitioned graph convolution: sum_k aggregate(mix(x, theta_k), A_hat_k).
// weights holds one (C,C') matrix per partition.
template <typename S>
VarT<S> graph_conv(VarT<S> x, const PartitionedAdjacency& part,
                   const std::vector<VarT<S>>& weights) {
    if (weights.size() != part.normalized.size())
        throw DimensionError("graph_conv: expected " +
                             std::to_string(part.normalized.size()) + " weight matrices, got " +
                             std::to_string(weights.size()));
    if (x.val().dim(3) != part.n_joints)
        throw DimensionError("graph_conv: joint-count mismatch, input " +
                             x.val().shape_string() + " adjacency has N=" +
                             std::to_string(part.n_joints));
    VarT<S> acc;
    for (size_t k = 0; k < weights.size(); ++k) {
        VarT<S> mixed = channel_mix(x, weights[k]);
        VarT<S> agg = joint_aggregate(mixed, part.normalized[k].template cast<S>());
        acc = (k == 0) ? agg : add(acc, agg);
    }
    return acc;
}

}  // namespace gaitkit
