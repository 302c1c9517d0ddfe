#pragma once

#include <string>
#include <vector>

#include "gaitkit/skeleton.hpp"
#include "gaitkit/tensor.hpp"

namespace gaitkit {

enum class Condition { NM, BG, CL, NA };

inline std::string condition_name(Condition c) {
    switch (c) {
        case Condition::NM: return "nm";
        case Condition::BG: return "bg";
        case Condition::CL: return "cl";
        case Condition::NA: return "na";
    }
    return "na";
}

inline Condition condition_from(const std::string& s) {
    if (s == "nm" || s == "NM") return Condition::NM;
    if (s == "bg" || s == "BG") return Condition::BG;
    if (s == "cl" || s == "CL") return Condition::CL;
    if (s == "na" || s == "NA") return Condition::NA;
    throw DataError("unknown walking condition: " + s);
}

// One walking sequence: T frames of N keypoints, each (x px, y px, conf).
// Stored as a (T,N,3) tensor plus identity labels.
struct PoseSequence {
    std::string subject_id;
    int view = 0;  // degrees
    Condition condition = Condition::NA;
    int seq_index = 1;               // sequence number within (subject, condition)
    Tensor frames;                   // (T,N,3)

    size_t t_len() const { return frames.empty() ? 0 : frames.dim(0); }
    size_t n_joints() const { return frames.empty() ? 0 : frames.dim(1); }

    float x(size_t t, size_t n) const { return frames(t, n, 0); }
    float y(size_t t, size_t n) const { return frames(t, n, 1); }
    float conf(size_t t, size_t n) const { return frames(t, n, 2); }

    void validate(const SkeletonSpec& spec) const {
        if (t_len() < 1) throw DataError("pose sequence must have T >= 1 frames");
        if (n_joints() != spec.n_joints)
            throw DataError("pose sequence has " + std::to_string(n_joints()) +
                            " joints, skeleton '" + spec.name + "' expects " +
                            std::to_string(spec.n_joints));
        for (size_t t = 0; t < t_len(); ++t)
            for (size_t n = 0; n < n_joints(); ++n) {
                float c = conf(t, n);
                if (!(c >= 0.0f && c <= 1.0f))
                    throw DataError("keypoint confidence outside [0,1] at frame " +
                                    std::to_string(t));
            }
    }
};

}  // namespace gaitkit
