#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gaitkit/data.hpp"
#include "gaitkit/loss.hpp"
#include "gaitkit/model.hpp"
#include "gaitkit/synth.hpp"
#include "gaitkit/version.hpp"

namespace gaitkit {

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  // decoupled
};

struct AdamState {
    std::vector<Tensor> m;  // aligned with ParamStore order
    std::vector<Tensor> v;
    size_t step = 0;

    static AdamState init(const ParamStore& store) {
        AdamState s;
        for (const auto& p : store.all()) {
            s.m.emplace_back(p.value.shape());
            s.v.emplace_back(p.value.shape());
        }
        return s;
    }
};

// One optimizer step from the accumulated gradients. A non-finite gradient
// aborts before any parameter is touched, naming the offending parameter.
inline void adam_step(ParamStore& store, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
    auto& params = store.all();
    if (state.m.size() != params.size())
        throw ConfigError("adam_step: optimizer state does not match parameter store");
    for (const auto& p : params)
        if (!p.grad.all_finite())
            throw NumericError("non-finite gradient in parameter '" + p.name + "'");

    state.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(state.step));
    const double bc2 = 1.0 - std::pow(b2, double(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        for (size_t j = 0; j < p.value.numel(); ++j) {
            m[j] = float(b1 * m[j] + (1.0 - b1) * g[j]);
            v[j] = float(b2 * v[j] + (1.0 - b2) * double(g[j]) * double(g[j]));
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            double upd = lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (cfg.weight_decay > 0.0) upd += lr * cfg.weight_decay * w[j];
            w[j] = float(w[j] - upd);
        }
    }
}

// ---------------------------------------------------------------------------
// 1-cycle learning-rate schedule
// ---------------------------------------------------------------------------

// Cosine ramp from max_lr/div_init up to max_lr over the warmup fraction,
// cosine decay to max_lr/div_final afterward. Steps past the end clamp to
// the final value.
struct OneCycleSchedule {
    double max_lr = 0.005;
    size_t total_steps = 1;
    double warmup_frac = 0.3;
    double div_init = 25.0;
    double div_final = 1e4;

    double lr(size_t step) const {
        const double lo = max_lr / div_init;
        const double fin = max_lr / div_final;
        const double warm = warmup_frac * double(total_steps);
        if (step >= total_steps) return fin;
        double s = double(step);
        if (s <= warm && warm > 0.0) {
            double u = s / warm;
            return lo + (max_lr - lo) * 0.5 * (1.0 - std::cos(kPi * u));
        }
        double u = (s - warm) / (double(total_steps) - warm);
        return fin + (max_lr - fin) * 0.5 * (1.0 + std::cos(kPi * u));
    }
};

// ---------------------------------------------------------------------------
// stochastic weight averaging
// ---------------------------------------------------------------------------

struct SwaState {
    std::vector<Tensor> avg;  // aligned with ParamStore order
    size_t n = 0;

    void update(const ParamStore& store) {
        const auto& params = store.all();
        if (avg.empty()) {
            for (const auto& p : params) avg.emplace_back(p.value.shape());
        }
        for (size_t i = 0; i < params.size(); ++i) {
            float* a = avg[i].data();
            const float* w = params[i].value.data();
            for (size_t j = 0; j < avg[i].numel(); ++j)
                a[j] = float((double(n) * a[j] + w[j]) / double(n + 1));
        }
        n += 1;
    }

    // Swaps the averaged weights into the store. BN statistics must be
    // re-estimated afterwards; averaged weights invalidate the running stats.
    void apply(ParamStore& store) const {
        if (n == 0) throw ConfigError("swa_finalize: SWA never captured a snapshot");
        auto& params = store.all();
        for (size_t i = 0; i < params.size(); ++i) params[i].value = avg[i];
    }
};

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
// Single file: magic "GGKPT1\n", u64 little-endian manifest byte count, the
// JSON manifest, then a raw little-endian f32 blob in manifest entry order.

struct Checkpoint {
    ModelConfig model_cfg;
    ModelState state;
    std::optional<AdamState> adam;
    std::optional<SwaState> swa;
};

namespace detail {

inline void write_u64_le(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

inline void write_blob(std::ostream& out, const Tensor& t) {
    // assumes little-endian host, which this library targets
    out.write(reinterpret_cast<const char*>(t.data()),
              std::streamsize(t.numel() * sizeof(float)));
}

inline void read_blob(std::istream& in, Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(float)));
    if (!in) throw DataError("checkpoint blob truncated");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["dtype"] = "f32";
    manifest["model"] = ck.model_cfg.to_json();
    manifest["counters"] = {{"step", ck.state.counters.step},
                            {"epoch", ck.state.counters.epoch},
                            {"swa_n", ck.state.counters.swa_n}};
    manifest["has_adam"] = ck.adam.has_value();
    manifest["has_swa"] = ck.swa.has_value() && ck.swa->n > 0;
    if (manifest["has_swa"].get<bool>()) manifest["swa_n"] = ck.swa->n;
    if (ck.adam) manifest["adam_step"] = ck.adam->step;

    auto entries = nlohmann::json::array();
    auto add_entry = [&](const std::string& name, const Shape& shape,
                         const std::string& kind) {
        entries.push_back({{"name", name}, {"shape", shape}, {"kind", kind}});
    };
    for (const auto& p : ck.state.params.all()) add_entry(p.name, p.value.shape(), "param");
    for (const auto& bn_name : ck.state.bn_names) {
        const auto& st = ck.state.bn_at(bn_name);
        add_entry(bn_name + ".running_mean", st.running_mean.shape(), "bn");
        add_entry(bn_name + ".running_var", st.running_var.shape(), "bn");
    }
    if (ck.adam)
        for (const auto& p : ck.state.params.all()) {
            add_entry("adam.m." + p.name, p.value.shape(), "adam");
            add_entry("adam.v." + p.name, p.value.shape(), "adam");
        }
    if (ck.swa && ck.swa->n > 0)
        for (const auto& p : ck.state.params.all())
            add_entry("swa." + p.name, p.value.shape(), "swa");
    manifest["entries"] = std::move(entries);

    std::filesystem::path out_path(path);
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << kCheckpointMagic << "\n";
    std::string mjson = manifest.dump();
    detail::write_u64_le(out, mjson.size());
    out << mjson;
    for (const auto& p : ck.state.params.all()) detail::write_blob(out, p.value);
    for (const auto& bn_name : ck.state.bn_names) {
        const auto& st = ck.state.bn_at(bn_name);
        detail::write_blob(out, st.running_mean);
        detail::write_blob(out, st.running_var);
    }
    if (ck.adam) {
        const auto& a = *ck.adam;
        for (size_t i = 0; i < a.m.size(); ++i) {
            detail::write_blob(out, a.m[i]);
            detail::write_blob(out, a.v[i]);
        }
    }
    if (ck.swa && ck.swa->n > 0)
        for (const auto& t : ck.swa->avg) detail::write_blob(out, t);
    if (!out) throw DataError("failed while writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic)
        throw DataError("bad checkpoint magic in " + path + " (got '" + magic + "')");
    uint64_t mlen = detail::read_u64_le(in);
    std::string mjson(mlen, '\0');
    in.read(mjson.data(), std::streamsize(mlen));
    if (!in) throw DataError("checkpoint manifest truncated: " + path);
    nlohmann::json manifest = nlohmann::json::parse(mjson);

    Checkpoint ck;
    ck.model_cfg = ModelConfig::from_json(manifest.at("model"));
    ck.state = init_model_state<float>(ck.model_cfg, 0);
    ck.state.counters.step = manifest.at("counters").at("step").get<size_t>();
    ck.state.counters.epoch = manifest.at("counters").at("epoch").get<size_t>();
    ck.state.counters.swa_n = manifest.at("counters").at("swa_n").get<size_t>();

    for (auto& p : ck.state.params.all()) detail::read_blob(in, p.value);
    for (const auto& bn_name : ck.state.bn_names) {
        auto& st = ck.state.bn_at(bn_name);
        detail::read_blob(in, st.running_mean);
        detail::read_blob(in, st.running_var);
    }
    if (manifest.at("has_adam").get<bool>()) {
        AdamState a = AdamState::init(ck.state.params);
        a.step = manifest.at("adam_step").get<size_t>();
        for (size_t i = 0; i < a.m.size(); ++i) {
            detail::read_blob(in, a.m[i]);
            detail::read_blob(in, a.v[i]);
        }
        ck.adam = std::move(a);
    }
    if (manifest.at("has_swa").get<bool>()) {
        SwaState s;
        s.n = manifest.at("swa_n").get<size_t>();
        for (const auto& p : ck.state.params.all()) {
            Tensor t(p.value.shape());
            detail::read_blob(in, t);
            s.avg.push_back(std::move(t));
        }
        ck.swa = std::move(s);
    }
    return ck;
}

// ---------------------------------------------------------------------------
// training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string data;             // dataset manifest path
    std::string out = "runs/out";
    std::string preset = "n21-r8";
    std::string skeleton = "coco17";
    std::string protocol = "synth";
    double width_mult = 1.0;
    size_t seq_len = 60;          // T*
    size_t epochs = 200;
    size_t batch_p = 64;
    size_t batch_k = 12;
    double max_lr = 0.005;
    double tau = 0.01;
    double weight_decay = 1e-5;
    uint64_t seed = 1;
    bool swa = true;
    double swa_start_frac = 0.8;
    double flip_prob = 0.5;
    double noise_xy = 2.0;
    double noise_conf = 0.05;
    size_t workers = 1;
    bool joints_only = false;
    bool shuffle_train = false;   // ablation control condition
    std::string resume;           // checkpoint to continue from
    // evaluation-side settings (shared config file)
    std::string checkpoint;
    bool tta = true;
    bool shuffle_test = false;
    bool exclude_identical_view = true;
    std::vector<int> gallery_views = {0, 60};
    std::vector<int> probe_views = {30, 90};

    void set(const std::string& key, const std::string& value);
    nlohmann::json to_json() const;
};

namespace detail {
inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}
inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}
}  // namespace detail

inline void TrainConfig::set(const std::string& key, const std::string& value) {
    try {
        if (key == "data") data = value;
        else if (key == "out") out = value;
        else if (key == "preset") preset = value;
        else if (key == "skeleton") skeleton = value;
        else if (key == "protocol") protocol = value;
        else if (key == "width_mult") width_mult = std::stod(value);
        else if (key == "seq_len") seq_len = std::stoul(value);
        else if (key == "epochs") epochs = std::stoul(value);
        else if (key == "batch_p") batch_p = std::stoul(value);
        else if (key == "batch_k") batch_k = std::stoul(value);
        else if (key == "max_lr") max_lr = std::stod(value);
        else if (key == "tau") tau = std::stod(value);
        else if (key == "weight_decay") weight_decay = std::stod(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "swa") swa = detail::parse_bool(key, value);
        else if (key == "swa_start_frac") swa_start_frac = std::stod(value);
        else if (key == "flip_prob") flip_prob = std::stod(value);
        else if (key == "noise_xy") noise_xy = std::stod(value);
        else if (key == "noise_conf") noise_conf = std::stod(value);
        else if (key == "workers") workers = std::stoul(value);
        else if (key == "joints_only") joints_only = detail::parse_bool(key, value);
        else if (key == "shuffle_train") shuffle_train = detail::parse_bool(key, value);
        else if (key == "resume") resume = value;
        else if (key == "checkpoint") checkpoint = value;
        else if (key == "tta") tta = detail::parse_bool(key, value);
        else if (key == "shuffle_test") shuffle_test = detail::parse_bool(key, value);
        else if (key == "exclude_identical_view")
            exclude_identical_view = detail::parse_bool(key, value);
        else if (key == "gallery_views") gallery_views = detail::parse_int_list(value);
        else if (key == "probe_views") probe_views = detail::parse_int_list(value);
        else throw ConfigError("unknown config key: '" + key + "'");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse value '" + value + "'");
    }
}

inline nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"data", data},
                          {"out", out},
                          {"preset", preset},
                          {"skeleton", skeleton},
                          {"protocol", protocol},
                          {"width_mult", width_mult},
                          {"seq_len", seq_len},
                          {"epochs", epochs},
                          {"batch_p", batch_p},
                          {"batch_k", batch_k},
                          {"max_lr", max_lr},
                          {"tau", tau},
                          {"weight_decay", weight_decay},
                          {"seed", seed},
                          {"swa", swa},
                          {"swa_start_frac", swa_start_frac},
                          {"flip_prob", flip_prob},
                          {"noise_xy", noise_xy},
                          {"noise_conf", noise_conf},
                          {"workers", workers},
                          {"joints_only", joints_only},
                          {"shuffle_train", shuffle_train},
                          {"resume", resume},
                          {"checkpoint", checkpoint},
                          {"tta", tta},
                          {"shuffle_test", shuffle_test},
                          {"exclude_identical_view", exclude_identical_view},
                          {"gallery_views", gallery_views},
                          {"probe_views", probe_views}};
}

// Flat `key = value` file; '#' starts a comment.
inline void apply_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r\n");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r\n");
            return s.substr(a, b - a + 1);
        };
        std::string flat = trim(line);
        if (flat.empty()) continue;
        auto eq = flat.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        cfg.set(trim(flat.substr(0, eq)), trim(flat.substr(eq + 1)));
    }
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

// Model bundle shared by training, evaluation and the CLI.
struct ModelBundle {
    ModelConfig cfg;
    SkeletonSpec skeleton;
    PartitionedAdjacency part;
    ModelState state;
};

inline ModelBundle make_model(const TrainConfig& cfg) {
    ModelBundle mb;
    mb.cfg = make_preset(cfg.preset, cfg.skeleton, cfg.width_mult);
    if (cfg.joints_only) mb.cfg = joints_only(mb.cfg);
    mb.skeleton = resolve_skeleton(cfg.skeleton);
    mb.part = spatial_partition(mb.skeleton);
    mb.state = init_model_state<float>(mb.cfg, cfg.seed);
    return mb;
}

inline ModelBundle bundle_from_checkpoint(const Checkpoint& ck) {
    ModelBundle mb;
    mb.cfg = ck.model_cfg;
    mb.skeleton = resolve_skeleton(ck.model_cfg.skeleton_name);
    mb.part = spatial_partition(mb.skeleton);
    mb.state = ck.state;
    return mb;
}

// Single-sequence train-time augmentation pipeline. The rng must already be
// split per (epoch, step, slot) so worker scheduling cannot change results.
inline PoseSequence augment_sequence(const PoseSequence& raw, const SkeletonSpec& spec,
                                     const AugmentationConfig& aug, double flip_prob,
                                     bool shuffle, Rng& rng) {
    PoseSequence seq = jitter(raw, aug, rng);
    seq = mirror_pad(seq, aug.target_len);
    seq = random_crop(seq, aug.target_len, rng);
    if (flip_prob > 0.0 && rng.uniform() < flip_prob) seq = flip_lr(seq, spec);
    if (shuffle) seq = shuffle_frames(seq, rng);
    return seq;
}

// Bounded-parallel map over batch slots; results land in pre-assigned slots
// so the outcome is independent of scheduling.
template <typename Fn>
void parallel_slots(size_t n, size_t workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t n_threads = std::min(workers, n);
    std::vector<std::thread> pool;
    for (size_t w = 0; w < n_threads; ++w)
        pool.emplace_back([&, w] {
            for (size_t i = w; i < n; i += n_threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

class Trainer {
  public:
    Trainer(TrainConfig cfg, DatasetIndex dataset)
        : cfg_(std::move(cfg)), index_(std::move(dataset)), bundle_(make_model(cfg_)) {
        if (index_.schema_name != cfg_.skeleton)
            throw ConfigError("dataset schema '" + index_.schema_name +
                              "' does not match configured skeleton '" + cfg_.skeleton + "'");
        if (cfg_.shuffle_train && bundle_.cfg.n_branches() > 1)
            throw ConfigError(
                "frame shuffling requires the joints-only single-branch model; velocity "
                "and bone branches would leak temporal information");
        protocol_ = protocol_from(cfg_.protocol);
        train_pool_ = ProtocolSplit::train_indices(index_, protocol_);
        if (train_pool_.empty()) throw DataError("training pool is empty");
        adam_ = AdamState::init(bundle_.state.params);
        adam_cfg_.weight_decay = cfg_.weight_decay;

        steps_per_epoch_ =
            std::max<size_t>(1, train_pool_.size() / (cfg_.batch_p * cfg_.batch_k));
        schedule_.max_lr = cfg_.max_lr;
        schedule_.total_steps = std::max<size_t>(1, cfg_.epochs * steps_per_epoch_);

        if (!cfg_.resume.empty()) {
            Checkpoint ck = load_checkpoint(cfg_.resume);
            if (ck.model_cfg.to_json() != bundle_.cfg.to_json())
                throw ConfigError("resume checkpoint model does not match configuration");
            bundle_.state = ck.state;
            if (ck.adam) adam_ = *ck.adam;
            if (ck.swa) swa_ = *ck.swa;
        }

        aug_.target_len = cfg_.seq_len;
        aug_.noise_xy = cfg_.noise_xy;
        aug_.noise_conf = cfg_.noise_conf;

        // preload the training pool; desk-scale datasets fit in memory
        cache_.resize(index_.size());
        for (size_t i : train_pool_) cache_[i] = index_.load(i, bundle_.skeleton);
    }

    ModelBundle& bundle() { return bundle_; }
    const TrainConfig& config() const { return cfg_; }
    size_t steps_per_epoch() const { return steps_per_epoch_; }
    const OneCycleSchedule& schedule() const { return schedule_; }

    // Runs the remaining epochs (all of them, or up to stop_after_epoch to
    // emulate an interrupted run). Writes metrics.csv and checkpoints under
    // cfg.out; returns the path of the last checkpoint written.
    std::string run(size_t stop_after_epoch = 0) {
        std::filesystem::create_directories(cfg_.out);
        const std::string metrics_path = cfg_.out + "/metrics.csv";
        const bool fresh = bundle_.state.counters.epoch == 0;
        std::ofstream metrics(metrics_path,
                              fresh ? std::ios::binary : std::ios::binary | std::ios::app);
        if (fresh) metrics << "step,epoch,lr,loss,wall_ms\n";

        const size_t ckpt_every = std::max<size_t>(1, cfg_.epochs / 10);
        const size_t swa_threshold = swa_activation_epoch();
        std::string last_path = cfg_.out + "/last.ckpt";
        const size_t end_epoch = stop_after_epoch == 0
                                     ? cfg_.epochs
                                     : std::min(cfg_.epochs, stop_after_epoch);

        for (size_t epoch = bundle_.state.counters.epoch; epoch < end_epoch; ++epoch) {
            for (size_t step = 0; step < steps_per_epoch_; ++step) {
                auto t0 = std::chrono::steady_clock::now();
                double lr = schedule_.lr(bundle_.state.counters.step);
                double loss = train_step(epoch, step, lr);
                auto t1 = std::chrono::steady_clock::now();
                long wall =
                    std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
                char row[160];
                std::snprintf(row, sizeof(row), "%zu,%zu,%.8g,%.8f,%ld\n",
                              bundle_.state.counters.step, epoch, lr, loss, wall);
                metrics << row;
                bundle_.state.counters.step += 1;
                if (!std::isfinite(loss)) {
                    metrics.flush();
                    throw NumericError("non-finite loss at step " +
                                       std::to_string(bundle_.state.counters.step) +
                                       "; last good checkpoint kept at " + last_path);
                }
            }
            bundle_.state.counters.epoch = epoch + 1;
            if (cfg_.swa && epoch + 1 > swa_threshold) {
                swa_.update(bundle_.state.params);
                bundle_.state.counters.swa_n = swa_.n;
            }
            if ((epoch + 1) % ckpt_every == 0 || epoch + 1 == end_epoch)
                save_checkpoint(last_path, snapshot());
        }
        metrics.flush();
        if (end_epoch < cfg_.epochs) return last_path;  // interrupted run

        if (cfg_.swa && swa_.n > 0) finalize_swa();
        const std::string final_path = cfg_.out + "/final.ckpt";
        save_checkpoint(final_path, snapshot());
        return final_path;
    }

    Checkpoint snapshot() const {
        Checkpoint ck;
        ck.model_cfg = bundle_.cfg;
        ck.state = bundle_.state;
        ck.adam = adam_;
        if (swa_.n > 0) ck.swa = swa_;
        return ck;
    }

    // Mean loss of one optimization step (sample -> augment -> forward ->
    // SupCon -> backward -> Adam).
    double train_step(size_t epoch, size_t step, double lr) {
        const uint64_t step_tag = epoch * 1000003ULL + step;
        Rng sample_rng = Rng(cfg_.seed).split("sampler", step_tag);
        std::vector<size_t> picks =
            sample_batch(index_, train_pool_, cfg_.batch_p, cfg_.batch_k, sample_rng);

        const size_t B = picks.size();
        std::vector<BranchTensor> branches(B);
        std::vector<int> labels(B);
        std::map<std::string, int> label_map;
        for (size_t b = 0; b < B; ++b) {
            const std::string& subj = index_.records[picks[b]].subject;
            auto [it, _] = label_map.try_emplace(subj, int(label_map.size()));
            labels[b] = it->second;
        }
        parallel_slots(B, cfg_.workers, [&](size_t b) {
            Rng aug_rng = Rng(cfg_.seed).split("augment", step_tag * 4096 + b);
            PoseSequence seq = augment_sequence(cache_[picks[b]], bundle_.skeleton, aug_,
                                                cfg_.flip_prob, cfg_.shuffle_train, aug_rng);
            branches[b] = build_branches(seq, bundle_.skeleton);
        });
        std::vector<Tensor> inputs = stack_branches(branches, bundle_.cfg.n_branches());

        Tape tape;
        ParamBinder bind(tape, bundle_.state.params);
        auto fwd = forward_model(bundle_.cfg, bundle_.part, bundle_.state, tape, bind,
                                 inputs, true);
        auto res = supcon_loss(fwd.embedding, labels, float(cfg_.tau));
        double loss = res.loss.val().item();
        if (!std::isfinite(loss)) return loss;
        if (!res.degenerate) {
            bundle_.state.params.zero_grads();
            tape.backward(res.loss);
            bind.collect_grads();
            adam_step(bundle_.state.params, adam_, lr, adam_cfg_);
        }
        return loss;
    }

    size_t swa_activation_epoch() const {
        return size_t(std::floor(cfg_.swa_start_frac * double(cfg_.epochs)));
    }

    // Swap in the averaged weights and re-estimate BN running statistics with
    // one deterministic pass over the training data. Momentum 1/(n+1) turns
    // the running update into a cumulative mean over recalibration batches.
    void finalize_swa() {
        swa_.apply(bundle_.state.params);
        for (auto& bn : bundle_.state.bn) {
            bn.running_mean.fill_(0.0f);
            bn.running_var.fill_(1.0f);
        }
        const size_t chunk = std::max<size_t>(2, cfg_.batch_p * cfg_.batch_k);
        size_t n_batches = 0;
        for (size_t start = 0; start < train_pool_.size(); start += chunk) {
            size_t end = std::min(train_pool_.size(), start + chunk);
            const size_t B = end - start;
            if (B < 2) break;  // batch statistics need more than one sample
            std::vector<BranchTensor> branches(B);
            parallel_slots(B, cfg_.workers, [&](size_t b) {
                PoseSequence seq = mirror_pad(cache_[train_pool_[start + b]], cfg_.seq_len);
                seq = center_crop(seq, cfg_.seq_len);
                branches[b] = build_branches(seq, bundle_.skeleton);
            });
            std::vector<Tensor> inputs = stack_branches(branches, bundle_.cfg.n_branches());
            Tape tape;
            ParamBinder bind(tape, bundle_.state.params);
            forward_model(bundle_.cfg, bundle_.part, bundle_.state, tape, bind, inputs,
                          true, 1.0f / float(n_batches + 1));
            ++n_batches;
        }
    }

  private:
    TrainConfig cfg_;
    DatasetIndex index_;
    ModelBundle bundle_;
    Protocol protocol_ = Protocol::synth;
    std::vector<size_t> train_pool_;
    std::vector<PoseSequence> cache_;
    AdamState adam_;
    AdamConfig adam_cfg_;
    OneCycleSchedule schedule_;
    SwaState swa_;
    AugmentationConfig aug_;
    size_t steps_per_epoch_ = 1;
};

}  // namespace gaitkit
