#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gaitkit/autodiff.hpp"
#include "gaitkit/branches.hpp"
#include "gaitkit/graph.hpp"
#include "gaitkit/rng.hpp"
#include "gaitkit/skeleton.hpp"

namespace gaitkit {

enum class BlockKind { basic, bottleneck };
enum class ResidualKind { none, identity, projection };

// One spatial+temporal unit. The spatial half changes channels in->out, the
// temporal half keeps out->out and carries the stride.
struct BlockConfig {
    size_t in_ch = 0;
    size_t out_ch = 0;
    size_t reduction = 1;   // bottleneck channel reduction rate r
    size_t kernel = 9;      // temporal kernel K (odd)
    size_t stride = 1;      // temporal stride
    BlockKind kind = BlockKind::bottleneck;
    ResidualKind residual = ResidualKind::identity;

    void validate(const std::string& where) const {
        if (in_ch == 0 || out_ch == 0)
            throw ConfigError(where + ": zero channel count");
        if (kernel % 2 == 0) throw ConfigError(where + ": temporal kernel must be odd");
        if (stride == 0) throw ConfigError(where + ": stride must be >= 1");
        if (kind == BlockKind::bottleneck && out_ch % reduction != 0)
            throw ConfigError(where + ": out_ch " + std::to_string(out_ch) +
                              " not divisible by reduction " + std::to_string(reduction));
        bool needs_projection = (in_ch != out_ch) || (stride != 1);
        if (residual == ResidualKind::identity && needs_projection)
            throw ConfigError(where + ": identity residual requires in_ch == out_ch and "
                                      "stride == 1");
        if (residual == ResidualKind::projection && !needs_projection)
            throw ConfigError(where + ": projection residual only when in_ch != out_ch "
                                      "or stride != 1");
    }
};

struct ModelConfig {
    std::string preset_name = "custom";
    std::string skeleton_name = "coco17";
    std::vector<size_t> branch_in = {kJointChannels, kVelocityChannels, kBoneChannels};
    std::vector<std::vector<BlockConfig>> branch_blocks;  // one list per branch
    std::vector<BlockConfig> main_blocks;
    size_t embedding_dim = 128;
    double width_mult = 1.0;

    size_t n_branches() const { return branch_in.size(); }

    size_t branch_out_channels() const {
        return branch_blocks.empty() || branch_blocks[0].empty()
                   ? 0
                   : branch_blocks[0].back().out_ch;
    }

    size_t stride_product() const {
        size_t s = 1;
        for (const auto& b : branch_blocks)
            for (const auto& bc : b) s *= bc.stride;
        for (const auto& bc : main_blocks) s *= bc.stride;
        return s;
    }

    void validate() const {
        if (branch_in.empty() || branch_blocks.size() != branch_in.size())
            throw ConfigError("model config: branch_blocks must match branch_in");
        size_t out0 = 0;
        for (size_t i = 0; i < branch_blocks.size(); ++i) {
            const auto& blocks = branch_blocks[i];
            if (blocks.empty()) throw ConfigError("model config: empty branch " +
                                                  std::to_string(i));
            size_t prev = branch_in[i];
            for (size_t j = 0; j < blocks.size(); ++j) {
                std::string where = "branch" + std::to_string(i) + ".b" + std::to_string(j);
                blocks[j].validate(where);
                if (blocks[j].in_ch != prev)
                    throw ConfigError(where + ": in_ch " + std::to_string(blocks[j].in_ch) +
                                      " does not chain from " + std::to_string(prev));
                prev = blocks[j].out_ch;
            }
            if (i == 0)
                out0 = prev;
            else if (prev != out0)
                throw ConfigError("model config: branch output channels differ (" +
                                  std::to_string(prev) + " vs " + std::to_string(out0) + ")");
        }
        if (main_blocks.empty()) throw ConfigError("model config: empty main stream");
        size_t prev = out0 * branch_in.size();
        for (size_t j = 0; j < main_blocks.size(); ++j) {
            std::string where = "main.b" + std::to_string(j);
            main_blocks[j].validate(where);
            if (main_blocks[j].in_ch != prev)
                throw ConfigError(where + ": in_ch " + std::to_string(main_blocks[j].in_ch) +
                                  " does not chain from " + std::to_string(prev));
            prev = main_blocks[j].out_ch;
        }
        if (embedding_dim == 0) throw ConfigError("model config: embedding_dim must be > 0");
    }

    nlohmann::json to_json() const {
        auto block = [](const BlockConfig& b) {
            return nlohmann::json{{"in", b.in_ch},
                                  {"out", b.out_ch},
                                  {"r", b.reduction},
                                  {"k", b.kernel},
                                  {"stride", b.stride},
                                  {"kind", b.kind == BlockKind::basic ? "basic" : "bottleneck"},
                                  {"residual", b.residual == ResidualKind::none
                                                   ? "none"
                                                   : (b.residual == ResidualKind::identity
                                                          ? "identity"
                                                          : "projection")}};
        };
        nlohmann::json j;
        j["preset"] = preset_name;
        j["skeleton"] = skeleton_name;
        j["branch_in"] = branch_in;
        j["embedding_dim"] = embedding_dim;
        j["width_mult"] = width_mult;
        auto& jb = j["branch_blocks"] = nlohmann::json::array();
        for (const auto& blocks : branch_blocks) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& b : blocks) arr.push_back(block(b));
            jb.push_back(arr);
        }
        auto& jm = j["main_blocks"] = nlohmann::json::array();
        for (const auto& b : main_blocks) jm.push_back(block(b));
        return j;
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        auto block = [](const nlohmann::json& b) {
            BlockConfig out;
            out.in_ch = b.at("in").get<size_t>();
            out.out_ch = b.at("out").get<size_t>();
            out.reduction = b.at("r").get<size_t>();
            out.kernel = b.at("k").get<size_t>();
            out.stride = b.at("stride").get<size_t>();
            std::string kind = b.at("kind").get<std::string>();
            out.kind = kind == "basic" ? BlockKind::basic : BlockKind::bottleneck;
            std::string res = b.at("residual").get<std::string>();
            out.residual = res == "none" ? ResidualKind::none
                                         : (res == "identity" ? ResidualKind::identity
                                                              : ResidualKind::projection);
            return out;
        };
        ModelConfig cfg;
        cfg.preset_name = j.at("preset").get<std::string>();
        cfg.skeleton_name = j.at("skeleton").get<std::string>();
        cfg.branch_in = j.at("branch_in").get<std::vector<size_t>>();
        cfg.embedding_dim = j.at("embedding_dim").get<size_t>();
        cfg.width_mult = j.at("width_mult").get<double>();
        cfg.branch_blocks.clear();
        for (const auto& arr : j.at("branch_blocks")) {
            std::vector<BlockConfig> blocks;
            for (const auto& b : arr) blocks.push_back(block(b));
            cfg.branch_blocks.push_back(std::move(blocks));
        }
        for (const auto& b : j.at("main_blocks")) cfg.main_blocks.push_back(block(b));
        cfg.validate();
        return cfg;
    }
};

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

namespace detail {
// Scales a channel width, keeping it a positive multiple of r.
inline size_t scale_width(size_t w, double mult, size_t r) {
    double scaled = double(w) * mult;
    size_t units = static_cast<size_t>(std::llround(scaled / double(r)));
    if (units == 0) units = 1;
    return units * r;
}
}  // namespace detail

// The two named architectures. The paper pins only the parameter budgets
// (~350K for N21-R8, ~765K for N51-R4); the exact block schedule below is
// this library's and its parameter counts are pinned in the tests.
inline ModelConfig make_preset(const std::string& name, const std::string& skeleton_name,
                               double width_mult = 1.0) {
    size_t r;
    std::vector<size_t> main_widths;
    std::vector<size_t> main_strides;
    if (name == "n21-r8") {
        r = 8;
        main_widths = {128, 128, 256, 256};
        main_strides = {2, 1, 2, 1};
    } else if (name == "n51-r4") {
        r = 4;
        main_widths = {128, 128, 128, 256, 256, 256, 256, 256};
        main_strides = {2, 1, 1, 2, 1, 1, 1, 1};
    } else {
        throw ConfigError("unknown preset: " + name + " (known: n21-r8, n51-r4)");
    }

    auto w = [&](size_t base) { return detail::scale_width(base, width_mult, r); };
    const size_t w64 = w(64), w32 = w(32);

    ModelConfig cfg;
    cfg.preset_name = name;
    cfg.skeleton_name = skeleton_name;
    cfg.width_mult = width_mult;

    for (size_t i = 0; i < cfg.branch_in.size(); ++i) {
        std::vector<BlockConfig> stem;
        stem.push_back({cfg.branch_in[i], w64, r, 9, 1, BlockKind::basic,
                        ResidualKind::none});
        stem.push_back({w64, w64, r, 9, 1, BlockKind::bottleneck, ResidualKind::identity});
        stem.push_back({w64, w32, r, 9, 1, BlockKind::bottleneck, ResidualKind::projection});
        cfg.branch_blocks.push_back(std::move(stem));
    }

    size_t prev = w32 * cfg.branch_in.size();
    for (size_t j = 0; j < main_widths.size(); ++j) {
        size_t out = w(main_widths[j]);
        ResidualKind res = (prev != out || main_strides[j] != 1) ? ResidualKind::projection
                                                                 : ResidualKind::identity;
        cfg.main_blocks.push_back({prev, out, r, 9, main_strides[j],
                                   BlockKind::bottleneck, res});
        prev = out;
    }
    cfg.validate();
    return cfg;
}

// Single-branch (joints only) variant for the temporal-modeling ablation.
inline ModelConfig joints_only(ModelConfig cfg) {
    cfg.branch_in = {kJointChannels};
    cfg.branch_blocks.resize(1);
    size_t prev = cfg.branch_blocks[0].back().out_ch;
    for (auto& b : cfg.main_blocks) {
        size_t out = b.out_ch;
        b.in_ch = prev;
        bool needs = (b.in_ch != b.out_ch) || (b.stride != 1);
        if (b.residual != ResidualKind::none)
            b.residual = needs ? ResidualKind::projection : ResidualKind::identity;
        prev = out;
    }
    cfg.preset_name += "-joints";
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// model state: parameters + batch-norm running statistics + counters
// ---------------------------------------------------------------------------

struct TrainCounters {
    size_t step = 0;
    size_t epoch = 0;
    size_t swa_n = 0;
};

template <typename S>
struct ModelStateT {
    ParamStoreT<S> params;
    std::vector<std::string> bn_names;
    std::unordered_map<std::string, size_t> bn_index;
    std::vector<BnStatsT<S>> bn;
    TrainCounters counters;

    BnStatsT<S>& bn_at(const std::string& name) {
        auto it = bn_index.find(name);
        if (it == bn_index.end()) throw ConfigError("unknown batch-norm layer: " + name);
        return bn[it->second];
    }
    const BnStatsT<S>& bn_at(const std::string& name) const {
        auto it = bn_index.find(name);
        if (it == bn_index.end()) throw ConfigError("unknown batch-norm layer: " + name);
        return bn[it->second];
    }

    void register_bn(const std::string& name, size_t channels) {
        if (bn_index.count(name)) throw ConfigError("duplicate batch-norm layer: " + name);
        bn_index[name] = bn.size();
        bn_names.push_back(name);
        bn.push_back(BnStatsT<S>(channels));
    }

    template <typename T>
    ModelStateT<T> cast() const {
        ModelStateT<T> out;
        out.params = params.template cast<T>();
        out.bn_names = bn_names;
        out.bn_index = bn_index;
        for (const auto& b : bn) {
            BnStatsT<T> nb;
            nb.running_mean = b.running_mean.template cast<T>();
            nb.running_var = b.running_var.template cast<T>();
            out.bn.push_back(std::move(nb));
        }
        out.counters = counters;
        return out;
    }
};

using ModelState = ModelStateT<float>;

// ---------------------------------------------------------------------------
// parameter registration (single source of truth for names and shapes)
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void add_bn(ModelStateT<S>& st, Rng& rng, const std::string& name, size_t ch) {
    (void)rng;
    st.params.add(name + ".gamma", TensorT<S>(Shape{ch}, S(1)));
    st.params.add(name + ".beta", TensorT<S>(Shape{ch}, S(0)));
    st.register_bn(name, ch);
}

// fan-out-scaled normal init
template <typename S>
TensorT<S> conv_init(Rng& rng, Shape shape, size_t fan_out) {
    TensorT<S> w(shape);
    double std = std::sqrt(2.0 / double(fan_out));
    for (size_t i = 0; i < w.numel(); ++i) w[i] = S(rng.normal(0.0, std));
    return w;
}

template <typename S>
void add_mix(ModelStateT<S>& st, Rng& rng, const std::string& name, size_t in, size_t out) {
    st.params.add(name, conv_init<S>(rng, Shape{in, out}, out));
}

template <typename S>
void add_gconv(ModelStateT<S>& st, Rng& rng, const std::string& prefix, size_t in,
               size_t out) {
    for (size_t k = 0; k < PartitionedAdjacency::kParts; ++k)
        st.params.add(prefix + ".w" + std::to_string(k),
                      conv_init<S>(rng, Shape{in, out}, out));
}

template <typename S>
void add_tconv(ModelStateT<S>& st, Rng& rng, const std::string& name, size_t out,
               size_t in, size_t K) {
    st.params.add(name, conv_init<S>(rng, Shape{out, in, K, 1}, out * K));
}

template <typename S>
void register_block(ModelStateT<S>& st, Rng& rng, const std::string& pfx,
                    const BlockConfig& bc, bool first) {
    const size_t in = bc.in_ch, out = bc.out_ch;
    if (bc.kind == BlockKind::basic) {
        if (!first) add_bn(st, rng, pfx + ".s.bn", in);
        add_gconv(st, rng, pfx + ".s.gc", in, out);
        add_bn(st, rng, pfx + ".t.bn", out);
        add_tconv(st, rng, pfx + ".t.conv", out, out, bc.kernel);
        if (bc.residual == ResidualKind::projection) {
            if (in != out) add_mix(st, rng, pfx + ".s.proj", in, out);
            if (bc.stride != 1) add_tconv(st, rng, pfx + ".t.proj", out, out, 1);
        }
    } else {
        const size_t mid = out / bc.reduction;
        add_bn(st, rng, pfx + ".s.bn1", in);
        add_mix(st, rng, pfx + ".s.red", in, mid);
        add_bn(st, rng, pfx + ".s.bn2", mid);
        add_gconv(st, rng, pfx + ".s.gc", mid, mid);
        add_bn(st, rng, pfx + ".s.bn3", mid);
        add_mix(st, rng, pfx + ".s.exp", mid, out);
        add_bn(st, rng, pfx + ".t.bn1", out);
        add_mix(st, rng, pfx + ".t.red", out, mid);
        add_bn(st, rng, pfx + ".t.bn2", mid);
        add_tconv(st, rng, pfx + ".t.conv", mid, mid, bc.kernel);
        add_bn(st, rng, pfx + ".t.bn3", mid);
        add_mix(st, rng, pfx + ".t.exp", mid, out);
        if (bc.residual == ResidualKind::projection) {
            if (in != out) add_mix(st, rng, pfx + ".s.proj", in, out);
            if (bc.stride != 1) add_tconv(st, rng, pfx + ".t.proj", out, out, 1);
        }
    }
}

}  // namespace detail

template <typename S = float>
ModelStateT<S> init_model_state(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelStateT<S> st;
    Rng rng = Rng(seed).split("model-init");
    for (size_t i = 0; i < cfg.branch_blocks.size(); ++i) {
        std::string bp = "branch" + std::to_string(i);
        detail::add_bn(st, rng, bp + ".input_bn", cfg.branch_in[i]);
        for (size_t j = 0; j < cfg.branch_blocks[i].size(); ++j)
            detail::register_block(st, rng, bp + ".b" + std::to_string(j),
                                   cfg.branch_blocks[i][j], j == 0);
    }
    for (size_t j = 0; j < cfg.main_blocks.size(); ++j)
        detail::register_block(st, rng, "main.b" + std::to_string(j), cfg.main_blocks[j],
                               false);
    const size_t last = cfg.main_blocks.back().out_ch;
    detail::add_bn(st, rng, "head.bn", last);
    st.params.add("head.fc.w",
                  detail::conv_init<S>(rng, Shape{last, cfg.embedding_dim},
                                       cfg.embedding_dim));
    st.params.add("head.fc.b", TensorT<S>(Shape{cfg.embedding_dim}, S(0)));
    return st;
}

inline size_t count_parameters(const ModelConfig& cfg) {
    return init_model_state<float>(cfg, 0).params.count_scalars();
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

template <typename S>
struct ForwardResultT {
    VarT<S> embedding;     // (B, embedding_dim)
    VarT<S> last_feature;  // (B, C, T', N): main-stream feature map after final BN+ReLU
};

namespace detail {

template <typename S>
struct FwdCtx {
    TapeT<S>& tape;
    ModelStateT<S>& state;
    ParamBinderT<S>& bind;
    const PartitionedAdjacency& part;
    bool training;
    S bn_momentum = S(0.1);

    VarT<S> bn(VarT<S> x, const std::string& name) {
        return batch_norm(x, bind(name + ".gamma"), bind(name + ".beta"),
                          state.bn_at(name), training, S(1e-5), bn_momentum);
    }
    VarT<S> gconv(VarT<S> x, const std::string& prefix) {
        std::vector<VarT<S>> ws;
        for (size_t k = 0; k < PartitionedAdjacency::kParts; ++k)
            ws.push_back(bind(prefix + ".w" + std::to_string(k)));
        return graph_conv(x, part, ws);
    }
};

template <typename S>
VarT<S> run_block(FwdCtx<S>& ctx, VarT<S> x, const std::string& pfx, const BlockConfig& bc,
                  bool first) {
    const size_t pad = (bc.kernel - 1) / 2;
    VarT<S> h;

    // spatial half: in_ch -> out_ch
    if (bc.kind == BlockKind::basic) {
        h = x;
        if (!first) h = relu(ctx.bn(h, pfx + ".s.bn"));
        h = ctx.gconv(h, pfx + ".s.gc");
    } else {
        h = relu(ctx.bn(x, pfx + ".s.bn1"));
        h = channel_mix(h, ctx.bind(pfx + ".s.red"));
        h = relu(ctx.bn(h, pfx + ".s.bn2"));
        h = ctx.gconv(h, pfx + ".s.gc");
        h = relu(ctx.bn(h, pfx + ".s.bn3"));
        h = channel_mix(h, ctx.bind(pfx + ".s.exp"));
    }
    if (bc.residual != ResidualKind::none) {
        VarT<S> shortcut = (bc.in_ch != bc.out_ch)
                               ? channel_mix(x, ctx.bind(pfx + ".s.proj"))
                               : x;
        h = add(h, shortcut);
    }

    // temporal half: out_ch -> out_ch, stride applies here
    VarT<S> y = h;
    VarT<S> f;
    if (bc.kind == BlockKind::basic) {
        f = relu(ctx.bn(y, pfx + ".t.bn"));
        f = conv_temporal(f, ctx.bind(pfx + ".t.conv"), bc.stride, pad);
    } else {
        f = relu(ctx.bn(y, pfx + ".t.bn1"));
        f = channel_mix(f, ctx.bind(pfx + ".t.red"));
        f = relu(ctx.bn(f, pfx + ".t.bn2"));
        f = conv_temporal(f, ctx.bind(pfx + ".t.conv"), bc.stride, pad);
        f = relu(ctx.bn(f, pfx + ".t.bn3"));
        f = channel_mix(f, ctx.bind(pfx + ".t.exp"));
    }
    if (bc.residual != ResidualKind::none) {
        VarT<S> shortcut = (bc.stride != 1)
                               ? conv_temporal(y, ctx.bind(pfx + ".t.proj"), bc.stride, 0)
                               : y;
        f = add(f, shortcut);
    }
    return f;
}

}  // namespace detail

// Runs the multi-branch network. branch_inputs holds one (B,C_i,T,N) tensor
// per configured branch. Training mode updates batch-norm running stats.
template <typename S>
ForwardResultT<S> forward_model(const ModelConfig& cfg, const PartitionedAdjacency& part,
                                ModelStateT<S>& state, TapeT<S>& tape,
                                ParamBinderT<S>& bind,
                                const std::vector<TensorT<S>>& branch_inputs,
                                bool training, S bn_momentum = S(0.1)) {
    if (branch_inputs.size() != cfg.n_branches())
        throw DimensionError("forward: expected " + std::to_string(cfg.n_branches()) +
                             " branch inputs, got " + std::to_string(branch_inputs.size()));
    for (size_t i = 0; i < branch_inputs.size(); ++i)
        if (branch_inputs[i].ndim() != 4 || branch_inputs[i].dim(1) != cfg.branch_in[i])
            throw DimensionError("forward: branch " + std::to_string(i) + " input " +
                                 branch_inputs[i].shape_string() + " does not match config C=" +
                                 std::to_string(cfg.branch_in[i]));

    detail::FwdCtx<S> ctx{tape, state, bind, part, training, bn_momentum};
    std::vector<VarT<S>> branch_out;
    for (size_t i = 0; i < branch_inputs.size(); ++i) {
        std::string bp = "branch" + std::to_string(i);
        VarT<S> x = tape.leaf(branch_inputs[i]);
        x = ctx.bn(x, bp + ".input_bn");
        for (size_t j = 0; j < cfg.branch_blocks[i].size(); ++j)
            x = detail::run_block(ctx, x, bp + ".b" + std::to_string(j),
                                  cfg.branch_blocks[i][j], j == 0);
        branch_out.push_back(x);
    }
    VarT<S> h = branch_out.size() == 1 ? branch_out[0] : concat_channels(branch_out);
    for (size_t j = 0; j < cfg.main_blocks.size(); ++j)
        h = detail::run_block(ctx, h, "main.b" + std::to_string(j), cfg.main_blocks[j],
                              false);
    VarT<S> feat = relu(ctx.bn(h, "head.bn"));
    VarT<S> pooled = global_avg_pool(feat);
    VarT<S> emb = linear(pooled, bind("head.fc.w"), bind("head.fc.b"));
    return ForwardResultT<S>{emb, feat};
}

// Convenience wrapper: one eval-mode forward, returns the embedding values.
template <typename S>
TensorT<S> embed_batch(const ModelConfig& cfg, const PartitionedAdjacency& part,
                       ModelStateT<S>& state, const std::vector<TensorT<S>>& branch_inputs) {
    TapeT<S> tape;
    ParamBinderT<S> bind(tape, state.params);
    auto res = forward_model(cfg, part, state, tape, bind, branch_inputs, false);
    return res.embedding.val();
}

// ---------------------------------------------------------------------------
// joint activation map
// ---------------------------------------------------------------------------

struct ActivationMap {
    Tensor values;  // (T,N) in [0,1]
    bool trained = false;
};

// Per-joint, per-frame activation: channel-wise L2 norm of the final
// main-stream feature map, nearest-neighbor upsampled along time back to the
// input length, then min-max normalized per sequence (flat maps become 0).
inline ActivationMap activation_map(const ModelConfig& cfg, const PartitionedAdjacency& part,
                                    ModelState& state, const SkeletonSpec& spec,
                                    const PoseSequence& seq) {
    BranchTensor br = build_branches(seq, spec);
    const size_t T = seq.t_len(), N = seq.n_joints();
    std::vector<Tensor> inputs;
    std::vector<const Tensor*> parts = {&br.joints, &br.velocity, &br.bones};
    for (size_t i = 0; i < cfg.n_branches(); ++i) {
        const Tensor& src = *parts[i];
        Tensor batched(Shape{1, src.dim(0), T, N});
        std::copy(src.data(), src.data() + src.numel(), batched.data());
        inputs.push_back(std::move(batched));
    }

    Tape tape;
    ParamBinder bind(tape, state.params);
    auto res = forward_model(cfg, part, state, tape, bind, inputs, false);
    const Tensor& feat = res.last_feature.val();  // (1,C,T',N)
    const size_t C = feat.dim(1), To = feat.dim(2);

    Tensor norms(Shape{To, N});
    for (size_t to = 0; to < To; ++to)
        for (size_t n = 0; n < N; ++n) {
            float acc = 0.0f;
            for (size_t c = 0; c < C; ++c) {
                float v = feat(0, c, to, n);
                acc += v * v;
            }
            norms(to, n) = std::sqrt(acc);
        }

    ActivationMap out;
    out.trained = state.counters.step > 0;
    out.values = Tensor(Shape{T, N});
    float lo = norms[0], hi = norms[0];
    for (size_t i = 0; i < norms.numel(); ++i) {
        lo = std::min(lo, norms[i]);
        hi = std::max(hi, norms[i]);
    }
    float range = hi - lo;
    for (size_t t = 0; t < T; ++t) {
        size_t to = std::min(To - 1, t * To / T);
        for (size_t n = 0; n < N; ++n)
            out.values(t, n) = range > 1e-12f ? (norms(to, n) - lo) / range : 0.0f;
    }
    return out;
}

}  // namespace gaitkit
