#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gaitkit/data.hpp"
#include "gaitkit/pose.hpp"
#include "gaitkit/rng.hpp"
#include "gaitkit/skeleton.hpp"

namespace gaitkit {

inline constexpr double kSynthFps = 30.0;
inline constexpr double kPi = 3.14159265358979323846;

// Planar kinematic walker on the COCO-17 schema. Limb lengths are in pixels;
// angles in radians. Sequences from the same identity share everything below
// and differ only through per-sequence phase, speed jitter and noise.
struct SyntheticIdentity {
    std::string subject_id;

    // limb-length vector (px)
    double height = 190.0;        // head to ankle
    double thigh = 47.0;
    double shin = 47.0;
    double torso = 61.0;          // hip line to shoulder line
    double upper_arm = 30.0;
    double forearm = 30.0;
    double shoulder_halfw = 21.0;
    double hip_halfw = 15.0;
    double head_rise = 21.0;      // shoulder line to nose

    // gait dynamics
    double stride_freq = 1.0;     // Hz, in [0.5, 1.5]
    double leg_swing = 0.45;      // hip amplitude
    double knee_bend = 0.6;
    double arm_swing = 0.35;
    double phase_leg = 0.0;
    double phase_arm = 0.0;
    double hip_sway = 3.0;        // px, lateral pelvis oscillation
    double bob = 2.5;             // px, vertical oscillation at 2f

    double noise_sigma = 1.0;     // px, gaussian keypoint noise
    double drift = 1.0;           // forward-speed factor; 0 = treadmill

    std::vector<double> limb_vector() const {
        return {thigh, shin, torso, upper_arm, forearm, shoulder_halfw, hip_halfw,
                head_rise};
    }
};

// What varies between identities. Regimes:
//   bones+dynamics: the verification dataset;
//   dynamics only : identical skeleton proportions, distinct gait dynamics;
//   bones only    : distinct proportions, shared dynamics.
// frequency_only narrows "dynamics" to the stride frequency: amplitudes stay
// pinned so frame-shuffled sequences carry no identity signal in their pose
// marginals, which is the point of the temporal-modeling control.
struct SynthVariation {
    bool vary_bones = true;
    bool vary_dynamics = true;
    bool frequency_only = false;
};

inline SyntheticIdentity sample_identity(const std::string& subject_id, Rng& rng,
                                         SynthVariation var = {}) {
    SyntheticIdentity id;
    id.subject_id = subject_id;
    if (var.vary_bones) {
        // Coordinates are normalized by pose height downstream, so identity
        // must live in the proportions, not the absolute size.
        double h = rng.uniform(172.0, 205.0);
        double scale = h / 190.0;
        id.height = h;
        auto limb = [&](double base) { return base * scale * rng.uniform(0.82, 1.18); };
        id.thigh = limb(47.0);
        id.shin = limb(47.0);
        id.torso = limb(61.0);
        id.upper_arm = limb(30.0);
        id.forearm = limb(30.0);
        id.shoulder_halfw = limb(21.0);
        id.hip_halfw = limb(15.0);
        id.head_rise = limb(21.0);
    }
    if (var.vary_dynamics) {
        if (var.frequency_only) {
            id.stride_freq = rng.uniform(0.6, 1.4);  // usually re-stratified per id
            id.phase_leg = rng.uniform(0.0, 2.0 * kPi);
            id.phase_arm = id.phase_leg + kPi + rng.uniform(-0.1, 0.1);
        } else {
            id.stride_freq = rng.uniform(0.65, 1.35);
            id.leg_swing = rng.uniform(0.28, 0.62);
            id.knee_bend = rng.uniform(0.35, 0.9);
            id.arm_swing = rng.uniform(0.15, 0.6);
            id.phase_leg = rng.uniform(0.0, 2.0 * kPi);
            id.phase_arm = id.phase_leg + kPi + rng.uniform(-0.6, 0.6);
            id.hip_sway = rng.uniform(1.0, 6.0);
            id.bob = rng.uniform(1.0, 5.0);
        }
    }
    return id;
}

// One sequence from the walker. The sagittal plane carries the gait; camera
// rotation compresses in-plane x by a view factor and mixes in the static
// out-of-plane joint widths. y is unaffected by the camera angle.
inline PoseSequence generate_synthetic(const SyntheticIdentity& id, size_t T,
                                       int view_deg, Rng& rng) {
    if (T < 1) throw DataError("generate_synthetic: T must be >= 1");
    const double gamma = double(view_deg) * kPi / 180.0;
    const double sx = 0.35 + 0.65 * std::fabs(std::cos(gamma));
    const double sz = std::sin(gamma);
    const double f = id.stride_freq;
    const double leg_len = id.thigh + id.shin;
    // forward speed coupled to swing so that zero amplitude means standing
    const double speed = 2.0 * f * leg_len * std::sin(id.leg_swing) * id.drift;

    // per-sequence variation within the identity
    const double seq_phase = rng.uniform(0.0, 2.0 * kPi);
    const double speed_jitter = rng.uniform(0.95, 1.05);

    const double cx = 320.0, ground_y = 440.0;
    const double hip_y0 = ground_y - leg_len;
    const double shoulder_y0 = hip_y0 - id.torso;
    const double nose_y0 = shoulder_y0 - id.head_rise;

    // static out-of-plane widths per joint (px), mixed in by sin(view)
    // joint order: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles
    std::vector<double> zoff(17, 0.0);
    auto set_lr = [&](size_t l, size_t r, double w) {
        zoff[l] = w;
        zoff[r] = -w;
    };
    set_lr(1, 2, id.shoulder_halfw * 0.18);   // eyes
    set_lr(3, 4, id.shoulder_halfw * 0.42);   // ears
    set_lr(5, 6, id.shoulder_halfw);          // shoulders
    set_lr(7, 8, id.shoulder_halfw * 1.05);   // elbows
    set_lr(9, 10, id.shoulder_halfw * 1.05);  // wrists
    set_lr(11, 12, id.hip_halfw);             // hips
    set_lr(13, 14, id.hip_halfw * 1.1);       // knees
    set_lr(15, 16, id.hip_halfw * 1.15);      // ankles

    PoseSequence seq;
    seq.frames = Tensor(Shape{T, 17, 3});
    for (size_t t = 0; t < T; ++t) {
        const double tt = double(t) / kSynthFps;
        const double w = 2.0 * kPi * f * tt + seq_phase;
        double sag_x[17], sag_y[17];

        const double pelvis_x =
            speed * speed_jitter * tt + id.hip_sway * std::sin(w + id.phase_leg);
        const double pelvis_y = hip_y0 + id.bob * std::sin(2.0 * (w + id.phase_leg));
        const double shoulder_x = pelvis_x + 0.35 * id.hip_sway * std::sin(w + id.phase_leg + kPi);
        const double shoulder_y = shoulder_y0 + 0.6 * id.bob * std::sin(2.0 * (w + id.phase_leg));

        // head cluster
        sag_x[0] = shoulder_x;
        sag_y[0] = nose_y0 + 0.5 * id.bob * std::sin(2.0 * (w + id.phase_leg));
        for (size_t e : {size_t(1), size_t(2)}) {
            sag_x[e] = sag_x[0] + 0.12 * id.head_rise;
            sag_y[e] = sag_y[0] - 0.15 * id.head_rise;
        }
        for (size_t e : {size_t(3), size_t(4)}) {
            sag_x[e] = sag_x[0] - 0.05 * id.head_rise;
            sag_y[e] = sag_y[0] - 0.05 * id.head_rise;
        }

        // legs: left side = 0 phase, right side = anti-phase
        for (int side = 0; side < 2; ++side) {
            const double ph = w + id.phase_leg + side * kPi;
            const double hip_angle = id.leg_swing * std::sin(ph);
            const double knee_flex = id.knee_bend * 0.5 * (1.0 - std::cos(ph));
            const size_t hip_j = side == 0 ? 11 : 12;
            const size_t knee_j = side == 0 ? 13 : 14;
            const size_t ankle_j = side == 0 ? 15 : 16;
            sag_x[hip_j] = pelvis_x;
            sag_y[hip_j] = pelvis_y;
            sag_x[knee_j] = sag_x[hip_j] + id.thigh * std::sin(hip_angle);
            sag_y[knee_j] = sag_y[hip_j] + id.thigh * std::cos(hip_angle);
            const double shank_angle = hip_angle - knee_flex;
            sag_x[ankle_j] = sag_x[knee_j] + id.shin * std::sin(shank_angle);
            sag_y[ankle_j] = sag_y[knee_j] + id.shin * std::cos(shank_angle);
        }

        // arms: opposite phase to the same-side leg
        for (int side = 0; side < 2; ++side) {
            const double ph = w + id.phase_arm + side * kPi;
            const double arm_angle = id.arm_swing * std::sin(ph);
            const double elbow_flex = 0.35 * id.arm_swing * (1.0 + std::sin(ph));
            const size_t sh_j = side == 0 ? 5 : 6;
            const size_t el_j = side == 0 ? 7 : 8;
            const size_t wr_j = side == 0 ? 9 : 10;
            sag_x[sh_j] = shoulder_x;
            sag_y[sh_j] = shoulder_y;
            sag_x[el_j] = sag_x[sh_j] + id.upper_arm * std::sin(arm_angle);
            sag_y[el_j] = sag_y[sh_j] + id.upper_arm * std::cos(arm_angle);
            const double fore_angle = arm_angle + elbow_flex;
            sag_x[wr_j] = sag_x[el_j] + id.forearm * std::sin(fore_angle);
            sag_y[wr_j] = sag_y[el_j] + id.forearm * std::cos(fore_angle);
        }

        for (size_t n = 0; n < 17; ++n) {
            double px = cx + sag_x[n] * sx + zoff[n] * sz;
            double py = sag_y[n];
            if (id.noise_sigma > 0.0) {
                px += rng.normal(0.0, id.noise_sigma);
                py += rng.normal(0.0, id.noise_sigma);
            }
            seq.frames(t, n, 0) = float(px);
            seq.frames(t, n, 1) = float(py);
            double conf = 0.92 + rng.uniform(-0.05, 0.07);
            seq.frames(t, n, 2) = float(std::clamp(conf, 0.0, 1.0));
        }
    }
    seq.subject_id = id.subject_id;
    seq.view = view_deg;
    seq.condition = Condition::NA;
    return seq;
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

struct SynthDatasetConfig {
    size_t n_identities = 20;
    size_t seqs_per_id = 8;             // spread round-robin over the views
    std::vector<int> views = {0, 30, 60, 90};
    size_t min_len = 60;
    size_t max_len = 90;
    SynthVariation variation;
    double noise_sigma = 1.0;
    double drift = 1.0;                 // forward-speed factor; 0 = treadmill
    uint64_t seed = 1;
};

inline DatasetIndex make_synthetic_dataset(const SynthDatasetConfig& cfg) {
    if (cfg.n_identities == 0 || cfg.seqs_per_id == 0 || cfg.views.empty())
        throw ConfigError("synthetic dataset: identities, sequences and views must be > 0");
    DatasetIndex idx;
    idx.schema_name = "coco17";
    SkeletonSpec spec = coco17();
    Rng root(cfg.seed);
    for (size_t i = 0; i < cfg.n_identities; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "%03zu", i + 1);
        Rng id_rng = root.split("identity", i);
        SyntheticIdentity id = sample_identity(name, id_rng, cfg.variation);
        id.noise_sigma = cfg.noise_sigma;
        id.drift = cfg.drift;
        if (cfg.variation.frequency_only) {
            // stratified frequencies: uniform draws can collide, which would
            // cap even a perfect temporal model below 100%
            double lo = 0.6, hi = 1.4;
            double width = (hi - lo) / double(cfg.n_identities);
            id.stride_freq = lo + width * (double(i) + 0.3 + 0.4 * id_rng.uniform());
        }
        for (size_t s = 0; s < cfg.seqs_per_id; ++s) {
            int view = cfg.views[s % cfg.views.size()];
            Rng seq_rng = root.split("sequence", i * 1000 + s);
            size_t T = cfg.min_len +
                       (cfg.max_len > cfg.min_len
                            ? seq_rng.uniform_int(cfg.max_len - cfg.min_len + 1)
                            : 0);
            PoseSequence seq = generate_synthetic(id, T, view, seq_rng);
            SequenceRecord rec;
            rec.subject = name;
            rec.view = view;
            rec.condition = Condition::NA;
            rec.seq_index = int(s / cfg.views.size()) + 1;
            rec.path = sequence_rel_path(rec);
            idx.records.push_back(rec);
            idx.in_memory.push_back(std::move(seq));
        }
    }
    return idx;
}

}  // namespace gaitkit
