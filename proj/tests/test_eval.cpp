#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "gaitkit/eval.hpp"
#include "gaitkit/synth.hpp"
#include "helpers.hpp"

using namespace gaitkit;

namespace {

ModelBundle tiny_bundle(uint64_t seed = 3) {
    TrainConfig tc;
    tc.preset = "n21-r8";
    tc.width_mult = 0.25;
    tc.seed = seed;
    return make_model(tc);
}

EmbeddingEntry entry(std::vector<float> emb, const std::string& subject, int view) {
    EmbeddingEntry e;
    e.emb = std::move(emb);
    e.subject = subject;
    e.view = view;
    return e;
}

// brute-force retrieval oracle: argmax cosine per probe within a view cell
double oracle_cell_accuracy(const std::vector<EmbeddingEntry>& gallery,
                            const std::vector<EmbeddingEntry>& probes, int pv, int gv) {
    size_t hits = 0, counted = 0;
    for (const auto& p : probes) {
        if (p.view != pv) continue;
        bool subject_present = false;
        for (const auto& g : gallery)
            if (g.view == gv && g.subject == p.subject) subject_present = true;
        if (!subject_present) continue;
        ++counted;
        double best = -2.0;
        const EmbeddingEntry* best_g = nullptr;
        for (const auto& g : gallery) {
            if (g.view != gv) continue;
            double s = cosine_similarity(p.emb, g.emb);
            if (s > best) {
                best = s;
                best_g = &g;
            }
        }
        if (best_g && best_g->subject == p.subject) ++hits;
    }
    return counted ? 100.0 * double(hits) / double(counted) : -1.0;
}

}  // namespace

TEST_CASE("embed_tta: 384 dims, unit segments, palindromic time reversal") {
    ModelBundle mb = tiny_bundle();
    Rng rng(7);
    SyntheticIdentity id = sample_identity("001", rng);
    id.noise_sigma = 0.0;
    Rng srng(8);
    PoseSequence seq = generate_synthetic(id, 21, 0, srng);

    EmbeddingEntry e = embed_tta(mb, seq, 15);
    REQUIRE(e.emb.size() == 3 * mb.cfg.embedding_dim);
    for (size_t s = 0; s < 3; ++s) {
        double n = 0;
        for (size_t d = 0; d < mb.cfg.embedding_dim; ++d) {
            float v = e.emb[s * mb.cfg.embedding_dim + d];
            n += double(v) * v;
        }
        CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-6);
    }

    // build a temporally palindromic sequence: [f0..f7, f7..f0] has even
    // length; use odd-center palindrome [f0..f7..f0] of length 15
    PoseSequence pal;
    pal.subject_id = "001";
    const size_t T = 15;
    pal.frames = Tensor(Shape{T, 17, 3});
    for (size_t t = 0; t < T; ++t) {
        size_t src = t < 8 ? t : 14 - t;
        for (size_t n = 0; n < 17; ++n)
            for (size_t c = 0; c < 3; ++c) pal.frames(t, n, c) = seq.frames(src, n, c);
    }
    EmbeddingEntry pe = embed_tta(mb, pal, 15);
    for (size_t d = 0; d < mb.cfg.embedding_dim; ++d)
        CHECK(pe.emb[d] ==
              Catch::Approx(pe.emb[2 * mb.cfg.embedding_dim + d]).margin(1e-6));
}

TEST_CASE("rank1: identical gallery and probe embeddings give 100%") {
    std::vector<EmbeddingEntry> gallery, probes;
    Rng rng(5);
    for (int s = 0; s < 6; ++s) {
        std::vector<float> e(8);
        for (auto& x : e) x = float(rng.uniform(-1, 1));
        for (int v : {0, 90}) {
            gallery.push_back(entry(e, std::to_string(s), v));
            probes.push_back(entry(e, std::to_string(s), v));
        }
    }
    RankTable t = rank1(gallery, probes, /*exclude_identical_view=*/false);
    for (size_t p = 0; p < t.probe_views.size(); ++p)
        for (size_t g = 0; g < t.gallery_views.size(); ++g)
            CHECK(t.acc[p][g] == 100.0);
    CHECK(t.overall_mean == 100.0);
}

TEST_CASE("rank1 matches the brute-force oracle on random embeddings") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<EmbeddingEntry> gallery, probes;
        size_t n_subj = 4 + rng.uniform_int(5);
        for (size_t s = 0; s < n_subj; ++s)
            for (int v : {0, 45, 90}) {
                std::vector<float> e(6);
                for (auto& x : e) x = float(rng.uniform(-1, 1));
                gallery.push_back(entry(e, std::to_string(s), v));
                std::vector<float> q(6);
                for (auto& x : q) x = float(rng.uniform(-1, 1));
                probes.push_back(entry(q, std::to_string(s), v));
            }
        RankTable t = rank1(gallery, probes, true);
        for (size_t p = 0; p < t.probe_views.size(); ++p)
            for (size_t g = 0; g < t.gallery_views.size(); ++g) {
                int pv = t.probe_views[p], gv = t.gallery_views[g];
                if (pv == gv) {
                    CHECK(std::isnan(t.acc[p][g]));
                    continue;
                }
                double oracle = oracle_cell_accuracy(gallery, probes, pv, gv);
                CHECK(t.acc[p][g] == Catch::Approx(oracle).margin(1e-9));
            }
    }
}

TEST_CASE("rank1: cosine ties resolve to the lowest gallery index") {
    // two gallery entries with identical embeddings but different subjects
    std::vector<EmbeddingEntry> gallery = {
        entry({1.0f, 0.0f}, "first", 0),
        entry({1.0f, 0.0f}, "second", 0),
    };
    std::vector<EmbeddingEntry> probes = {entry({1.0f, 0.0f}, "second", 90)};
    RankTable t = rank1(gallery, probes, true);
    // the tie goes to index 0 ("first"), so the probe misses
    CHECK(t.acc[0][0] == 0.0);

    std::swap(gallery[0], gallery[1]);
    RankTable t2 = rank1(gallery, probes, true);
    CHECK(t2.acc[0][0] == 100.0);
}

TEST_CASE("rank1: scaling invariance and gallery-removal monotonicity") {
    Rng rng(13);
    std::vector<EmbeddingEntry> gallery, probes;
    for (int s = 0; s < 5; ++s) {
        std::vector<float> e(6), q(6);
        for (auto& x : e) x = float(rng.uniform(-1, 1));
        for (size_t i = 0; i < 6; ++i) q[i] = e[i] + float(rng.uniform(-0.3, 0.3));
        gallery.push_back(entry(e, std::to_string(s), 0));
        probes.push_back(entry(q, std::to_string(s), 90));
    }
    RankTable base = rank1(gallery, probes, true);

    // positive rescaling of every embedding leaves the table unchanged
    auto scaled_g = gallery;
    auto scaled_p = probes;
    for (auto& g : scaled_g)
        for (auto& x : g.emb) x *= 37.5f;
    for (auto& p : scaled_p)
        for (auto& x : p.emb) x *= 0.002f;
    RankTable scaled = rank1(scaled_g, scaled_p, true);
    CHECK(scaled.acc[0][0] == base.acc[0][0]);

    // removing a non-matching gallery entry never decreases any cell
    for (int victim = 0; victim < 5; ++victim) {
        auto pruned = gallery;
        pruned.erase(pruned.begin() + victim);
        auto pruned_probes = probes;
        // drop the probe of the removed subject, its cell entry is undefined
        pruned_probes.erase(pruned_probes.begin() + victim);
        RankTable t = rank1(pruned, pruned_probes, true);
        // accuracy over the remaining probes can only stay or improve
        double base_remaining = 0;
        size_t hits = 0, total = 0;
        for (size_t i = 0; i < probes.size(); ++i) {
            if (int(i) == victim) continue;
            ++total;
            double best = -2;
            size_t bi = 0;
            for (size_t g = 0; g < gallery.size(); ++g) {
                double s = cosine_similarity(probes[i].emb, gallery[g].emb);
                if (s > best) {
                    best = s;
                    bi = g;
                }
            }
            if (gallery[bi].subject == probes[i].subject) ++hits;
        }
        base_remaining = 100.0 * double(hits) / double(total);
        CHECK(t.acc[0][0] >= base_remaining - 1e-9);
    }
}

TEST_CASE("rank1: empty gallery cells are undefined and excluded from means") {
    std::vector<EmbeddingEntry> gallery = {entry({1, 0}, "a", 0)};
    std::vector<EmbeddingEntry> probes = {entry({1, 0}, "a", 0),
                                          entry({0, 1}, "b", 90)};
    RankTable t = rank1(gallery, probes, false);
    // probe view 90 vs gallery view 0: subject b missing -> no counted probes
    size_t p90 = t.probe_views[0] == 90 ? 0 : 1;
    CHECK(std::isnan(t.acc[p90][0]));
    CHECK(t.undefined_cells > 0);
}

TEST_CASE("rank table CSV layout") {
    std::vector<EmbeddingEntry> gallery = {entry({1, 0}, "a", 0), entry({0, 1}, "b", 0)};
    std::vector<EmbeddingEntry> probes = {entry({1, 0}, "a", 90), entry({0, 1}, "b", 90)};
    RankTable t = rank1(gallery, probes, true, "nm");
    std::ostringstream out;
    t.to_csv(out);
    std::string csv = out.str();
    CHECK(csv.find("probe_view,gallery_000,mean") == 0);
    CHECK(csv.find("090,100.00,100.00") != std::string::npos);
    CHECK(csv.find("overall,100.00") != std::string::npos);
}

TEST_CASE("evaluate: synth protocol end to end with an untrained model") {
    SynthDatasetConfig sc;
    sc.n_identities = 4;
    sc.seqs_per_id = 8;
    sc.views = {0, 30, 60, 90};
    sc.min_len = 16;
    sc.max_len = 22;
    sc.seed = 21;
    DatasetIndex idx = make_synthetic_dataset(sc);

    ModelBundle mb = tiny_bundle();
    TrainConfig cfg;
    cfg.protocol = "synth";
    cfg.seq_len = 12;
    cfg.gallery_views = {0, 60};
    cfg.probe_views = {30, 90};
    cfg.exclude_identical_view = false;

    EvalResult res = evaluate(mb, idx, cfg);
    REQUIRE(res.tables.count(Condition::NA) == 1);
    const RankTable& t = res.tables.at(Condition::NA);
    CHECK(t.probe_views == std::vector<int>{30, 90});
    CHECK(t.gallery_views == std::vector<int>{0, 60});
    for (size_t p = 0; p < t.probe_views.size(); ++p)
        for (size_t g = 0; g < t.gallery_views.size(); ++g) {
            CHECK(t.acc[p][g] >= 0.0);
            CHECK(t.acc[p][g] <= 100.0);
        }

    // determinism: the same evaluation twice produces identical tables
    EvalResult res2 = evaluate(mb, idx, cfg);
    const RankTable& t2 = res2.tables.at(Condition::NA);
    for (size_t p = 0; p < t.probe_views.size(); ++p)
        for (size_t g = 0; g < t.gallery_views.size(); ++g)
            CHECK(t.acc[p][g] == t2.acc[p][g]);

    // CSV writer round trip
    std::string dir = "build_test_eval_csv";
    write_rank_tables(res, dir);
    CHECK(std::filesystem::exists(dir + "/rank1_na.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate refuses shuffle with a multi-branch model") {
    SynthDatasetConfig sc;
    sc.n_identities = 2;
    sc.seqs_per_id = 4;
    sc.views = {0, 90};
    sc.min_len = 12;
    sc.max_len = 14;
    DatasetIndex idx = make_synthetic_dataset(sc);
    ModelBundle mb = tiny_bundle();
    TrainConfig cfg;
    cfg.protocol = "synth";
    cfg.seq_len = 10;
    cfg.gallery_views = {0};
    cfg.probe_views = {90};
    cfg.shuffle_test = true;
    CHECK_THROWS_AS(evaluate(mb, idx, cfg), ConfigError);
}

TEST_CASE("activation CSV export") {
    ModelBundle mb = tiny_bundle();
    Rng rng(7);
    SyntheticIdentity id = sample_identity("001", rng);
    Rng srng(8);
    PoseSequence seq = generate_synthetic(id, 18, 0, srng);
    ActivationMap am = activation_map(mb.cfg, mb.part, mb.state, mb.skeleton, seq);
    std::string path = "build_test_activation.csv";
    write_activation_csv(path, am);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "frame,joint,activation");
    size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 18 * 17);
    std::remove(path.c_str());
}
