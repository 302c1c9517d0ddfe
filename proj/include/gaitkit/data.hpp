#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaitkit/branches.hpp"
#include "gaitkit/pose.hpp"
#include "gaitkit/rng.hpp"
#include "gaitkit/skeleton.hpp"

namespace gaitkit {

// ---------------------------------------------------------------------------
// sequence CSV files
// ---------------------------------------------------------------------------
// One file per sequence, header `frame,joint,x,y,conf`, rows in frame-major
// order. Directory layout: <root>/<subject>/<condition-seq>/<view>.csv

inline void write_sequence_csv(const std::string& path, const PoseSequence& seq) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write sequence file: " + path);
    out << "frame,joint,x,y,conf\n";
    char buf[128];
    for (size_t t = 0; t < seq.t_len(); ++t)
        for (size_t n = 0; n < seq.n_joints(); ++n) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f,%.6f,%.6f\n", t, n,
                          double(seq.x(t, n)), double(seq.y(t, n)), double(seq.conf(t, n)));
            out << buf;
        }
}

inline PoseSequence read_sequence_csv(const std::string& path, size_t n_joints) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open sequence file: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("frame,joint", 0) != 0)
        throw DataError("bad sequence header in " + path);
    struct Row {
        size_t t, n;
        float x, y, c;
    };
    std::vector<Row> rows;
    size_t max_t = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Row r;
        double x, y, c;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf", &r.t, &r.n, &x, &y, &c) != 5)
            throw DataError("bad row in " + path + ": " + line);
        r.x = float(x);
        r.y = float(y);
        r.c = float(c);
        if (r.n >= n_joints)
            throw DataError("joint index out of range in " + path);
        max_t = std::max(max_t, r.t);
        rows.push_back(r);
    }
    if (rows.empty()) throw DataError("empty sequence file: " + path);
    const size_t T = max_t + 1;
    if (rows.size() != T * n_joints)
        throw DataError("sequence file " + path + " has " + std::to_string(rows.size()) +
                        " rows, expected " + std::to_string(T * n_joints));
    PoseSequence seq;
    seq.frames = Tensor(Shape{T, n_joints, 3});
    for (const Row& r : rows) {
        seq.frames(r.t, r.n, 0) = r.x;
        seq.frames(r.t, r.n, 1) = r.y;
        seq.frames(r.t, r.n, 2) = r.c;
    }
    return seq;
}

// ---------------------------------------------------------------------------
// dataset index + manifest
// ---------------------------------------------------------------------------

struct SequenceRecord {
    std::string subject;
    int view = 0;
    Condition condition = Condition::NA;
    int seq_index = 1;
    std::string path;  // relative to the dataset root; empty for in-memory data
};

inline std::string sequence_rel_path(const SequenceRecord& r) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/%s-%02d/%03d.csv", r.subject.c_str(),
                  condition_name(r.condition).c_str(), r.seq_index, r.view);
    return buf;
}

enum class Protocol { casiab, oumvlp, synth };

inline Protocol protocol_from(const std::string& s) {
    if (s == "casiab" || s == "casia-b") return Protocol::casiab;
    if (s == "oumvlp") return Protocol::oumvlp;
    if (s == "synth" || s == "synthetic") return Protocol::synth;
    throw ConfigError("unknown protocol: " + s);
}

class DatasetIndex {
  public:
    std::string schema_name = "coco17";
    std::string root;
    std::vector<SequenceRecord> records;
    std::vector<PoseSequence> in_memory;  // parallel to records when non-empty

    size_t size() const { return records.size(); }

    PoseSequence load(size_t i, const SkeletonSpec& spec) const {
        const SequenceRecord& r = records.at(i);
        PoseSequence seq;
        if (!in_memory.empty()) {
            seq = in_memory[i];
        } else {
            seq = read_sequence_csv(root + "/" + r.path, spec.n_joints);
        }
        seq.subject_id = r.subject;
        seq.view = r.view;
        seq.condition = r.condition;
        seq.seq_index = r.seq_index;
        seq.validate(spec);
        return seq;
    }

    std::vector<std::string> subjects() const {
        std::set<std::string> s;
        for (const auto& r : records) s.insert(r.subject);
        return {s.begin(), s.end()};
    }

    nlohmann::json manifest_json() const {
        nlohmann::json j;
        j["schema"] = schema_name;
        auto& arr = j["sequences"] = nlohmann::json::array();
        for (const auto& r : records)
            arr.push_back({{"subject", r.subject},
                           {"view", r.view},
                           {"condition", condition_name(r.condition)},
                           {"seq", r.seq_index},
                           {"path", r.path}});
        return j;
    }

    static DatasetIndex from_manifest(const std::string& manifest_path) {
        std::ifstream in(manifest_path);
        if (!in) throw DataError("cannot open dataset manifest: " + manifest_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw DataError("bad dataset manifest " + manifest_path + ": " + e.what());
        }
        DatasetIndex idx;
        idx.schema_name = j.at("schema").get<std::string>();
        idx.root = std::filesystem::path(manifest_path).parent_path().string();
        if (idx.root.empty()) idx.root = ".";
        for (const auto& e : j.at("sequences")) {
            SequenceRecord r;
            r.subject = e.at("subject").get<std::string>();
            r.view = e.at("view").get<int>();
            r.condition = condition_from(e.at("condition").get<std::string>());
            r.seq_index = e.at("seq").get<int>();
            r.path = e.at("path").get<std::string>();
            idx.records.push_back(std::move(r));
        }
        return idx;
    }

    void save(const std::string& dir, const SkeletonSpec& spec) {
        std::filesystem::create_directories(dir);
        for (size_t i = 0; i < records.size(); ++i) {
            if (records[i].path.empty()) records[i].path = sequence_rel_path(records[i]);
            write_sequence_csv(dir + "/" + records[i].path, load(i, spec));
        }
        std::ofstream out(dir + "/manifest.json", std::ios::binary);
        out << manifest_json().dump(2) << "\n";
        std::ofstream sk(dir + "/" + schema_name + ".schema.json", std::ios::binary);
        sk << spec.to_json().dump(2) << "\n";
    }
};

// ---------------------------------------------------------------------------
// protocol splits
// ---------------------------------------------------------------------------

struct EvalSplit {
    std::vector<size_t> gallery;
    std::map<Condition, std::vector<size_t>> probes;
};

// CASIA-B large-sample protocol: first 74 subjects (sorted id) train, rest
// test; gallery NM#1-4; probes NM#5-6, BG#1-2, CL#1-2.
// OUMVLP: first 5153 subjects train; gallery seq #1, probes the rest.
// synth: every subject trains; evaluation splits by camera view.
struct ProtocolSplit {
    static std::vector<size_t> train_indices(const DatasetIndex& idx, Protocol proto) {
        if (proto == Protocol::synth) {
            std::vector<size_t> all(idx.size());
            for (size_t i = 0; i < all.size(); ++i) all[i] = i;
            return all;
        }
        auto subjects = idx.subjects();
        const size_t n_train = proto == Protocol::casiab ? 74 : 5153;
        std::set<std::string> train_set(subjects.begin(),
                                        subjects.begin() +
                                            std::min(n_train, subjects.size()));
        std::vector<size_t> out;
        for (size_t i = 0; i < idx.size(); ++i)
            if (train_set.count(idx.records[i].subject)) out.push_back(i);
        return out;
    }

    static EvalSplit eval_split(const DatasetIndex& idx, Protocol proto,
                                const std::vector<int>& gallery_views = {},
                                const std::vector<int>& probe_views = {}) {
        EvalSplit out;
        if (proto == Protocol::synth) {
            auto in_views = [](int v, const std::vector<int>& vs) {
                return std::find(vs.begin(), vs.end(), v) != vs.end();
            };
            for (size_t i = 0; i < idx.size(); ++i) {
                const auto& r = idx.records[i];
                if (in_views(r.view, gallery_views))
                    out.gallery.push_back(i);
                else if (probe_views.empty() || in_views(r.view, probe_views))
                    out.probes[Condition::NA].push_back(i);
            }
            return out;
        }
        auto subjects = idx.subjects();
        const size_t n_train = proto == Protocol::casiab ? 74 : 5153;
        std::set<std::string> test_set;
        for (size_t s = std::min(n_train, subjects.size()); s < subjects.size(); ++s)
            test_set.insert(subjects[s]);
        for (size_t i = 0; i < idx.size(); ++i) {
            const auto& r = idx.records[i];
            if (!test_set.count(r.subject)) continue;
            if (proto == Protocol::casiab) {
                if (r.condition == Condition::NM && r.seq_index <= 4)
                    out.gallery.push_back(i);
                else if (r.condition == Condition::NM)
                    out.probes[Condition::NM].push_back(i);
                else if (r.condition == Condition::BG)
                    out.probes[Condition::BG].push_back(i);
                else if (r.condition == Condition::CL)
                    out.probes[Condition::CL].push_back(i);
            } else {  // oumvlp
                if (r.seq_index == 1)
                    out.gallery.push_back(i);
                else
                    out.probes[r.condition].push_back(i);
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

struct AugmentationConfig {
    size_t target_len = 60;   // T*: 60 for CASIA-B, 30 for OUMVLP
    double flip_prob = 0.5;
    double noise_xy = 2.0;    // px, uniform amplitude, applied pre-normalization
    double noise_conf = 0.05;
};

// Reflect-pad without edge duplication until length >= target:
// [a,b,c] -> [a,b,c,b,a,b,c,...]. Sequences already long enough pass through.
inline PoseSequence mirror_pad(const PoseSequence& seq, size_t target) {
    const size_t T = seq.t_len();
    if (T >= target) return seq;
    const size_t N = seq.n_joints();
    PoseSequence out = seq;
    out.frames = Tensor(Shape{target, N, 3});
    const size_t period = T > 1 ? 2 * T - 2 : 1;
    for (size_t t = 0; t < target; ++t) {
        size_t m = t % period;
        size_t src = (T == 1) ? 0 : (m < T ? m : period - m);
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < 3; ++c) out.frames(t, n, c) = seq.frames(src, n, c);
    }
    return out;
}

namespace detail {
inline PoseSequence crop(const PoseSequence& seq, size_t offset, size_t len) {
    PoseSequence out = seq;
    const size_t N = seq.n_joints();
    out.frames = Tensor(Shape{len, N, 3});
    for (size_t t = 0; t < len; ++t)
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < 3; ++c)
                out.frames(t, n, c) = seq.frames(offset + t, n, c);
    return out;
}
}  // namespace detail

inline PoseSequence random_crop(const PoseSequence& seq, size_t target, Rng& rng) {
    const size_t T = seq.t_len();
    if (T < target)
        throw DataError("random_crop: sequence length " + std::to_string(T) +
                        " below target " + std::to_string(target) + " (mirror_pad first)");
    if (T == target) return seq;
    size_t offset = rng.uniform_int(T - target + 1);
    return detail::crop(seq, offset, target);
}

inline PoseSequence center_crop(const PoseSequence& seq, size_t target) {
    const size_t T = seq.t_len();
    if (T < target)
        throw DataError("center_crop: sequence length " + std::to_string(T) +
                        " below target " + std::to_string(target) + " (mirror_pad first)");
    if (T == target) return seq;
    return detail::crop(seq, (T - target) / 2, target);
}

// Left/right flip: mirror x about the per-sequence mean center-joint x (the
// image-flip analogue; a constant axis keeps the motion rigid), then swap
// left and right joints. y and confidence ride along with their joint.
inline PoseSequence flip_lr(const PoseSequence& seq, const SkeletonSpec& spec) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    double axis = 0.0;
    for (size_t t = 0; t < T; ++t) axis += seq.x(t, spec.center);
    axis /= double(T);
    PoseSequence out = seq;
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            size_t src = spec.lr_swap[n];
            out.frames(t, n, 0) = float(2.0 * axis) - seq.x(t, src);
            out.frames(t, n, 1) = seq.y(t, src);
            out.frames(t, n, 2) = seq.conf(t, src);
        }
    return out;
}

// Uniform keypoint noise: x,y +- U(-a,a); conf clamped back into [0,1].
inline PoseSequence jitter(const PoseSequence& seq, const AugmentationConfig& cfg,
                           Rng& rng) {
    PoseSequence out = seq;
    const size_t T = seq.t_len(), N = seq.n_joints();
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n) {
            out.frames(t, n, 0) += float(rng.uniform(-cfg.noise_xy, cfg.noise_xy));
            out.frames(t, n, 1) += float(rng.uniform(-cfg.noise_xy, cfg.noise_xy));
            float c = out.frames(t, n, 2) +
                      float(rng.uniform(-cfg.noise_conf, cfg.noise_conf));
            out.frames(t, n, 2) = std::clamp(c, 0.0f, 1.0f);
        }
    return out;
}

inline PoseSequence shuffle_frames(const PoseSequence& seq, Rng& rng) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    std::vector<size_t> perm(T);
    for (size_t t = 0; t < T; ++t) perm[t] = t;
    for (size_t t = T; t > 1; --t) std::swap(perm[t - 1], perm[rng.uniform_int(t)]);
    PoseSequence out = seq;
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < 3; ++c) out.frames(t, n, c) = seq.frames(perm[t], n, c);
    return out;
}

inline PoseSequence time_reverse(const PoseSequence& seq) {
    const size_t T = seq.t_len(), N = seq.n_joints();
    PoseSequence out = seq;
    for (size_t t = 0; t < T; ++t)
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < 3; ++c)
                out.frames(t, n, c) = seq.frames(T - 1 - t, n, c);
    return out;
}

// ---------------------------------------------------------------------------
// batch sampling
// ---------------------------------------------------------------------------

// P distinct subjects, K sequences each (with replacement when a subject has
// fewer than K), drawn from the given record indices.
inline std::vector<size_t> sample_batch(const DatasetIndex& idx,
                                        const std::vector<size_t>& pool, size_t P,
                                        size_t K, Rng& rng) {
    std::map<std::string, std::vector<size_t>> by_subject;
    for (size_t i : pool) by_subject[idx.records[i].subject].push_back(i);
    if (by_subject.size() < P)
        throw DataError("sample_batch: need " + std::to_string(P) + " subjects, pool has " +
                        std::to_string(by_subject.size()));
    std::vector<std::string> subjects;
    subjects.reserve(by_subject.size());
    for (const auto& [s, _] : by_subject) subjects.push_back(s);
    // partial Fisher-Yates: pick P distinct subjects
    for (size_t i = 0; i < P; ++i) {
        size_t j = i + rng.uniform_int(subjects.size() - i);
        std::swap(subjects[i], subjects[j]);
    }
    std::vector<size_t> out;
    out.reserve(P * K);
    for (size_t i = 0; i < P; ++i) {
        const auto& seqs = by_subject[subjects[i]];
        if (seqs.size() >= K) {
            // without replacement
            std::vector<size_t> local = seqs;
            for (size_t k = 0; k < K; ++k) {
                size_t j = k + rng.uniform_int(local.size() - k);
                std::swap(local[k], local[j]);
                out.push_back(local[k]);
            }
        } else {
            for (size_t k = 0; k < K; ++k) out.push_back(seqs[rng.uniform_int(seqs.size())]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

// Stacks per-sequence branch tensors into (B,C,T,N) network inputs.
inline std::vector<Tensor> stack_branches(const std::vector<BranchTensor>& batch,
                                          size_t n_branches) {
    if (batch.empty()) throw DataError("stack_branches: empty batch");
    const size_t B = batch.size();
    std::vector<const Tensor BranchTensor::*> members = {
        &BranchTensor::joints, &BranchTensor::velocity, &BranchTensor::bones};
    std::vector<Tensor> out;
    for (size_t br = 0; br < n_branches; ++br) {
        const Tensor& first = batch[0].*members[br];
        Tensor stacked(Shape{B, first.dim(0), first.dim(1), first.dim(2)});
        for (size_t b = 0; b < B; ++b) {
            const Tensor& src = batch[b].*members[br];
            if (!src.same_shape(first))
                throw DimensionError("stack_branches: ragged batch, " + src.shape_string() +
                                     " vs " + first.shape_string());
            std::copy(src.data(), src.data() + src.numel(),
                      stacked.data() + b * src.numel());
        }
        out.push_back(std::move(stacked));
    }
    return out;
}

}  // namespace gaitkit
