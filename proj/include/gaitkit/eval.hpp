#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gaitkit/data.hpp"
#include "gaitkit/model.hpp"
#include "gaitkit/train.hpp"

namespace gaitkit {

// ---------------------------------------------------------------------------
// embedding extraction with test-time augmentation
// ---------------------------------------------------------------------------

struct EmbeddingEntry {
    std::vector<float> emb;  // 3*D with TTA, D without
    std::string subject;
    int view = 0;
    Condition condition = Condition::NA;
};

namespace detail {

inline void l2_normalize_inplace(float* v, size_t d) {
    double acc = 0.0;
    for (size_t i = 0; i < d; ++i) acc += double(v[i]) * v[i];
    double n = std::sqrt(acc);
    if (n > 1e-12)
        for (size_t i = 0; i < d; ++i) v[i] = float(v[i] / n);
    else
        for (size_t i = 0; i < d; ++i) v[i] = 0.0f;
}

}  // namespace detail

// Embeds a batch of already-prepared sequences (one forward pass, eval mode)
// and returns one L2-normalized row per sequence.
inline std::vector<std::vector<float>> embed_prepared(ModelBundle& mb,
                                                      const std::vector<PoseSequence>& seqs,
                                                      size_t workers = 1) {
    const size_t B = seqs.size();
    std::vector<BranchTensor> branches(B);
    parallel_slots(B, workers, [&](size_t b) {
        branches[b] = build_branches(seqs[b], mb.skeleton);
    });
    std::vector<Tensor> inputs = stack_branches(branches, mb.cfg.n_branches());
    Tensor emb = embed_batch(mb.cfg, mb.part, mb.state, inputs);
    const size_t D = emb.dim(1);
    std::vector<std::vector<float>> out(B, std::vector<float>(D));
    for (size_t b = 0; b < B; ++b) {
        std::copy(emb.data() + b * D, emb.data() + (b + 1) * D, out[b].data());
        detail::l2_normalize_inplace(out[b].data(), D);
    }
    return out;
}

// TTA embedding: mirror-pad + center-crop, then three eval-mode passes
// (identity, left/right flip, time reversal), each L2-normalized and
// concatenated into a 3*D descriptor.
inline std::vector<EmbeddingEntry> embed_tta_batch(ModelBundle& mb,
                                                   const std::vector<PoseSequence>& seqs,
                                                   size_t target_len, bool tta = true,
                                                   bool shuffle = false,
                                                   uint64_t shuffle_seed = 0,
                                                   size_t workers = 1) {
    const size_t B = seqs.size();
    std::vector<PoseSequence> prepared(B);
    parallel_slots(B, workers, [&](size_t b) {
        PoseSequence s = mirror_pad(seqs[b], target_len);
        s = center_crop(s, target_len);
        if (shuffle) {
            Rng rng = Rng(shuffle_seed).split("test-shuffle", b);
            s = shuffle_frames(s, rng);
        }
        prepared[b] = std::move(s);
    });

    std::vector<PoseSequence> variants;
    variants.reserve(tta ? 3 * B : B);
    for (const auto& s : prepared) variants.push_back(s);
    if (tta) {
        for (const auto& s : prepared) variants.push_back(flip_lr(s, mb.skeleton));
        for (const auto& s : prepared) variants.push_back(time_reverse(s));
    }

    // chunked forward passes keep peak memory bounded
    const size_t chunk = 48;
    std::vector<std::vector<float>> rows(variants.size());
    for (size_t start = 0; start < variants.size(); start += chunk) {
        size_t end = std::min(variants.size(), start + chunk);
        std::vector<PoseSequence> slice(variants.begin() + start, variants.begin() + end);
        auto embs = embed_prepared(mb, slice, workers);
        for (size_t i = 0; i < embs.size(); ++i) rows[start + i] = std::move(embs[i]);
    }

    std::vector<EmbeddingEntry> out(B);
    const size_t D = rows[0].size();
    for (size_t b = 0; b < B; ++b) {
        EmbeddingEntry& e = out[b];
        e.subject = seqs[b].subject_id;
        e.view = seqs[b].view;
        e.condition = seqs[b].condition;
        if (tta) {
            e.emb.resize(3 * D);
            std::copy(rows[b].begin(), rows[b].end(), e.emb.begin());
            std::copy(rows[B + b].begin(), rows[B + b].end(), e.emb.begin() + D);
            std::copy(rows[2 * B + b].begin(), rows[2 * B + b].end(), e.emb.begin() + 2 * D);
        } else {
            e.emb = rows[b];
        }
    }
    return out;
}

inline EmbeddingEntry embed_tta(ModelBundle& mb, const PoseSequence& seq,
                                size_t target_len) {
    return embed_tta_batch(mb, {seq}, target_len, true)[0];
}

// ---------------------------------------------------------------------------
// rank-1 retrieval
// ---------------------------------------------------------------------------

inline double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size())
        throw DimensionError("cosine_similarity: dimension mismatch " +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Cross-view accuracy matrix for one condition. Cells with an empty gallery
// are undefined and excluded from every mean.
struct RankTable {
    std::string condition = "na";
    std::vector<int> probe_views;
    std::vector<int> gallery_views;
    std::vector<std::vector<double>> acc;  // % or NaN, [probe][gallery]
    std::vector<double> probe_mean;        // per probe view
    double overall_mean = 0.0;
    bool exclude_identical = true;
    size_t undefined_cells = 0;

    void to_csv(std::ostream& out) const {
        char buf[32];
        out << "probe_view";
        for (int gv : gallery_views) {
            std::snprintf(buf, sizeof(buf), ",gallery_%03d", gv);
            out << buf;
        }
        out << ",mean\n";
        for (size_t p = 0; p < probe_views.size(); ++p) {
            std::snprintf(buf, sizeof(buf), "%03d", probe_views[p]);
            out << buf;
            for (size_t g = 0; g < gallery_views.size(); ++g) {
                if (std::isnan(acc[p][g])) {
                    out << ",";
                } else {
                    std::snprintf(buf, sizeof(buf), ",%.2f", acc[p][g]);
                    out << buf;
                }
            }
            std::snprintf(buf, sizeof(buf), ",%.2f\n", probe_mean[p]);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), "overall,%.2f\n", overall_mean);
        out << buf;
    }
};

// Per-cell protocol: probes of view pv against gallery entries of view gv
// only. A probe counts iff its subject has at least one gallery entry in the
// cell; the nearest entry by cosine similarity decides (ties -> lowest
// gallery index, deterministic).
inline RankTable rank1(const std::vector<EmbeddingEntry>& gallery,
                       const std::vector<EmbeddingEntry>& probes,
                       bool exclude_identical_view,
                       const std::string& condition_label = "na") {
    RankTable table;
    table.condition = condition_label;
    table.exclude_identical = exclude_identical_view;

    std::set<int> gv_set, pv_set;
    for (const auto& g : gallery) gv_set.insert(g.view);
    for (const auto& p : probes) pv_set.insert(p.view);
    table.gallery_views.assign(gv_set.begin(), gv_set.end());
    table.probe_views.assign(pv_set.begin(), pv_set.end());

    std::map<int, std::vector<size_t>> gallery_by_view;
    for (size_t i = 0; i < gallery.size(); ++i)
        gallery_by_view[gallery[i].view].push_back(i);

    table.acc.assign(table.probe_views.size(),
                     std::vector<double>(table.gallery_views.size(),
                                         std::numeric_limits<double>::quiet_NaN()));
    table.probe_mean.assign(table.probe_views.size(), 0.0);

    double total_sum = 0.0;
    size_t total_cells = 0;
    for (size_t pi = 0; pi < table.probe_views.size(); ++pi) {
        int pv = table.probe_views[pi];
        double row_sum = 0.0;
        size_t row_cells = 0;
        for (size_t gi = 0; gi < table.gallery_views.size(); ++gi) {
            int gv = table.gallery_views[gi];
            if (exclude_identical_view && pv == gv) continue;
            const auto it = gallery_by_view.find(gv);
            if (it == gallery_by_view.end() || it->second.empty()) {
                ++table.undefined_cells;
                continue;
            }
            const auto& cell_gallery = it->second;
            std::set<std::string> cell_subjects;
            for (size_t g : cell_gallery) cell_subjects.insert(gallery[g].subject);

            size_t hits = 0, counted = 0;
            for (const auto& probe : probes) {
                if (probe.view != pv) continue;
                if (!cell_subjects.count(probe.subject)) continue;  // can never match
                ++counted;
                double best = -std::numeric_limits<double>::infinity();
                size_t best_idx = 0;
                for (size_t g : cell_gallery) {
                    double s = cosine_similarity(probe.emb, gallery[g].emb);
                    if (s > best) {  // strict: ties keep the lowest index
                        best = s;
                        best_idx = g;
                    }
                }
                if (gallery[best_idx].subject == probe.subject) ++hits;
            }
            if (counted == 0) {
                ++table.undefined_cells;
                continue;
            }
            double pct = 100.0 * double(hits) / double(counted);
            table.acc[pi][gi] = pct;
            row_sum += pct;
            ++row_cells;
        }
        table.probe_mean[pi] = row_cells ? row_sum / double(row_cells) : 0.0;
        total_sum += row_sum;
        total_cells += row_cells;
    }
    table.overall_mean = total_cells ? total_sum / double(total_cells) : 0.0;
    return table;
}

// ---------------------------------------------------------------------------
// evaluation driver
// ---------------------------------------------------------------------------

struct EvalResult {
    std::map<Condition, RankTable> tables;
    double mean_of_means = 0.0;
};

inline EvalResult evaluate(ModelBundle& mb, const DatasetIndex& idx,
                           const TrainConfig& cfg) {
    if (cfg.shuffle_test && mb.cfg.n_branches() > 1)
        throw ConfigError(
            "frame shuffling requires the joints-only single-branch model; velocity "
            "and bone branches would leak temporal information");
    Protocol proto = protocol_from(cfg.protocol);
    EvalSplit split =
        ProtocolSplit::eval_split(idx, proto, cfg.gallery_views, cfg.probe_views);
    if (split.gallery.empty()) throw DataError("evaluation: empty gallery");

    std::vector<PoseSequence> gallery_seqs;
    for (size_t i : split.gallery) gallery_seqs.push_back(idx.load(i, mb.skeleton));
    auto gallery = embed_tta_batch(mb, gallery_seqs, cfg.seq_len, cfg.tta,
                                   cfg.shuffle_test, cfg.seed ^ 0x9e3779b9ULL,
                                   cfg.workers);

    EvalResult out;
    double acc_sum = 0.0;
    size_t n_tables = 0;
    for (const auto& [cond, probe_idx] : split.probes) {
        if (probe_idx.empty()) continue;
        std::vector<PoseSequence> probe_seqs;
        for (size_t i : probe_idx) probe_seqs.push_back(idx.load(i, mb.skeleton));
        auto probes = embed_tta_batch(mb, probe_seqs, cfg.seq_len, cfg.tta,
                                      cfg.shuffle_test, cfg.seed ^ 0x51ed2701ULL,
                                      cfg.workers);
        RankTable table =
            rank1(gallery, probes, cfg.exclude_identical_view, condition_name(cond));
        acc_sum += table.overall_mean;
        ++n_tables;
        out.tables.emplace(cond, std::move(table));
    }
    out.mean_of_means = n_tables ? acc_sum / double(n_tables) : 0.0;
    return out;
}

// CSV export: one file per condition, rows = probe views, columns = gallery
// views plus the per-probe-view mean.
inline void write_rank_tables(const EvalResult& res, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [cond, table] : res.tables) {
        std::ofstream out(dir + "/rank1_" + condition_name(cond) + ".csv",
                          std::ios::binary);
        table.to_csv(out);
    }
}

// Activation export: CSV `frame,joint,activation` per sequence.
inline void write_activation_csv(const std::string& path, const ActivationMap& am) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write activation file: " + path);
    out << "frame,joint,activation\n";
    char buf[64];
    for (size_t t = 0; t < am.values.dim(0); ++t)
        for (size_t n = 0; n < am.values.dim(1); ++n) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f\n", t, n,
                          double(am.values(t, n)));
            out << buf;
        }
}

}  // namespace gaitkit
