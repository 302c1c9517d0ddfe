#pragma once

#include <algorithm>
#include <cmath>

#include "gaitkit/pose.hpp"
#include "gaitkit/skeleton.hpp"
#include "gaitkit/tensor.hpp"

namespace gaitkit {

// Pre-computed network inputs for one sequence.
//   joints   (5,T,N): x, y, conf, rx, ry   (coords normalized, r* relative to center)
//   velocity (4,T,N): dx1, dy1, dx2, dy2   (forward differences, trailing zeros)
//   bones    (4,T,N): lx, ly, ax, ay       (parent-bone vector and its axis angles)
struct BranchTensor {
    Tensor joints;
    Tensor velocity;
    Tensor bones;
};

inline constexpr size_t kJointChannels = 5;
inline constexpr size_t kVelocityChannels = 4;
inline constexpr size_t kBoneChannels = 4;

// Per-sequence coordinate normalization: subtract the mean center-joint
// position, divide by half the bounding-box height of the pose over the
// whole sequence. Keeps features comparable across subjects and cameras.
inline PoseSequence normalize_coords(const PoseSequence& seq, const SkeletonSpec& spec) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    double cx = 0.0, cy = 0.0;
    for (size_t t = 0; t < T; ++t) {
        cx += seq.x(t, spec.center);
        cy += seq.y(t, spec.center);
    }
    cx /= double(T);
    cy /= double(T);
    float ymin = seq.y(0, 0), ymax = ymin;
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            ymin = std::min(ymin, seq.y(t, n));
            ymax = std::max(ymax, seq.y(t, n));
        }
    float half_h = 0.5f * (ymax - ymin);
    float s = half_h > 1e-6f ? half_h : 1.0f;

    PoseSequence out = seq;
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            out.frames(t, n, 0) = (seq.x(t, n) - float(cx)) / s;
            out.frames(t, n, 1) = (seq.y(t, n) - float(cy)) / s;
        }
    return out;
}

// R = v_{t,n} - v_{t,center}, per frame. (2,T,N)
inline Tensor relative_positions(const PoseSequence& seq, const SkeletonSpec& spec) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    Tensor out(Shape{2, T, N});
    for (size_t t = 0; t < T; ++t) {
        float cx = seq.x(t, spec.center), cy = seq.y(t, spec.center);
        for (size_t n = 0; n < N; ++n) {
            out(0, t, n) = seq.x(t, n) - cx;
            out(1, t, n) = seq.y(t, n) - cy;
        }
    }
    return out;
}

// F = v_{t+i,n} - v_{t,n} for i in {1,2}; frames with t >= T-i get zeros for
// the delta-i channels. (4,T,N) as dx1, dy1, dx2, dy2.
inline Tensor motion_velocity(const PoseSequence& seq) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    Tensor out(Shape{4, T, N});
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            if (t + 1 < T) {
                out(0, t, n) = seq.x(t + 1, n) - seq.x(t, n);
                out(1, t, n) = seq.y(t + 1, n) - seq.y(t, n);
            }
            if (t + 2 < T) {
                out(2, t, n) = seq.x(t + 2, n) - seq.x(t, n);
                out(3, t, n) = seq.y(t + 2, n) - seq.y(t, n);
            }
        }
    return out;
}

// Bone vector l = v_n - v_parent(n) plus the angles of l against the x and y
// axes: a = arccos(l_component / |l|), clamped into [-1,1] before arccos.
// The root joint and zero-length bones get all-zero channels.
inline Tensor bone_features(const PoseSequence& seq, const SkeletonSpec& spec) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    Tensor out(Shape{4, T, N});
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            if (n == spec.center) continue;  // root: all four channels zero
            size_t p = spec.parent_of[n];
            float lx = seq.x(t, n) - seq.x(t, p);
            float ly = seq.y(t, n) - seq.y(t, p);
            out(0, t, n) = lx;
            out(1, t, n) = ly;
            float len = std::sqrt(lx * lx + ly * ly);
            if (len > 1e-9f) {
                float ux = std::clamp(lx / len, -1.0f, 1.0f);
                float uy = std::clamp(ly / len, -1.0f, 1.0f);
                out(2, t, n) = std::acos(ux);
                out(3, t, n) = std::acos(uy);
            }
        }
    return out;
}

// Assembles the three input branches from a raw sequence. Coordinates are
// normalized first; confidence is carried only in the joints branch.
inline BranchTensor build_branches(const PoseSequence& seq, const SkeletonSpec& spec) {
    seq.validate(spec);
    PoseSequence norm = normalize_coords(seq, spec);
    const size_t T = norm.t_len(), N = norm.n_joints();

    BranchTensor out;
    out.joints = Tensor(Shape{kJointChannels, T, N});
    Tensor rel = relative_positions(norm, spec);
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            out.joints(0, t, n) = norm.x(t, n);
            out.joints(1, t, n) = norm.y(t, n);
            out.joints(2, t, n) = norm.conf(t, n);
            out.joints(3, t, n) = rel(0, t, n);
            out.joints(4, t, n) = rel(1, t, n);
        }
    out.velocity = motion_velocity(norm);
    out.bones = bone_features(norm, spec);

    out.joints.ensure_finite("joints branch");
    out.velocity.ensure_finite("velocity branch");
    out.bones.ensure_finite("bones branch");
    return out;
}

// Joints-only variant used by the temporal-modeling ablation, where the
// velocity and bone branches would leak pre-computed temporal information.
inline Tensor build_joints_branch(const PoseSequence& seq, const SkeletonSpec& spec) {
    return build_branches(seq, spec).joints;
}

}  // namespace gaitkit
