#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gatenet/gate.hpp"
#include "gatenet/rng.hpp"
#include "gatenet/tensor.hpp"

namespace gatenet {

// Every parameter draws from its own stream keyed by name, so adding or
// removing parameters (e.g. building with gates off) never perturbs the
// initialization of the others.
inline Tensor xavier_param(const std::string& name, Shape shape, long fan_in, long fan_out,
                           std::uint64_t seed, Group group = Group::main) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(param_seed(seed, name));
    std::vector<double> w(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : w) v = rng.uniform(-a, a);
    return Tensor::param(name, std::move(w), std::move(shape), group);
}

inline Tensor normal_param(const std::string& name, Shape shape, double stddev,
                           std::uint64_t seed) {
    Rng rng(param_seed(seed, name));
    std::vector<double> w(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : w) v = rng.normal(0.0, stddev);
    return Tensor::param(name, std::move(w), std::move(shape));
}

inline Tensor const_param(const std::string& name, Shape shape, double v) {
    std::size_t n = static_cast<std::size_t>(numel_of(shape));
    return Tensor::param(name, std::vector<double>(n, v), std::move(shape));
}

inline HardAttentionGate make_gate(const std::string& name, long n, GateMode mode,
                                   std::uint64_t seed) {
    Rng rng(param_seed(seed, name));
    return HardAttentionGate(name, n, mode, rng);
}

struct LinearLayer {
    Tensor weight; // [out, in]
    Tensor bias;   // [out]

    LinearLayer() = default;
    LinearLayer(const std::string& name, long in_f, long out_f, std::uint64_t seed)
        : weight(xavier_param(name + ".w", {out_f, in_f}, in_f, out_f, seed)),
          bias(const_param(name + ".b", {out_f}, 0.0)) {}

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(ParamList& out) const {
        out.push_back(weight);
        out.push_back(bias);
    }
};

struct LayerNormLayer {
    Tensor gamma;
    Tensor beta;

    LayerNormLayer() = default;
    LayerNormLayer(const std::string& name, long n)
        : gamma(const_param(name + ".g", {n}, 1.0)), beta(const_param(name + ".b", {n}, 0.0)) {}

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
    void collect(ParamList& out) const {
        out.push_back(gamma);
        out.push_back(beta);
    }
};

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

struct MHSAParams {
    long heads = 1;
    LinearLayer q, k, v, proj;

    MHSAParams() = default;
    MHSAParams(const std::string& name, long embed, long heads_, std::uint64_t seed)
        : heads(heads_),
          q(name + ".q", embed, embed, seed),
          k(name + ".k", embed, embed, seed),
          v(name + ".v", embed, embed, seed),
          proj(name + ".proj", embed, embed, seed) {
        if (heads_ < 1 || embed % heads_ != 0)
            throw std::invalid_argument("mhsa: embed " + std::to_string(embed) +
                                        " not divisible by heads " + std::to_string(heads_));
    }

    void collect(ParamList& out) const {
        q.collect(out);
        k.collect(out);
        v.collect(out);
        proj.collect(out);
    }
};

// Scaled dot-product attention over tokens; accepts [T,e] or batched [N,T,e].
inline Tensor multi_head_self_attention(const Tensor& tokens, const MHSAParams& p) {
    bool batched = tokens.rank() == 3;
    if (!batched && tokens.rank() != 2)
        throw std::invalid_argument("mhsa: tokens must be [T,e] or [N,T,e], got " +
                                    shape_str(tokens.shape()));
    Tensor x = batched ? tokens : reshape(tokens, {1, tokens.dim(0), tokens.dim(1)});
    long N = x.dim(0), T = x.dim(1), e = x.dim(2);
    long H = p.heads, d = e / H;

    auto split = [&](const Tensor& t) {
        // [N,T,e] -> [N,H,T,d]
        return permute(reshape(t, {N, T, H, d}), {0, 2, 1, 3});
    };
    Tensor Q = split(p.q(x));
    Tensor K = split(p.k(x));
    Tensor V = split(p.v(x));
    Tensor att = softmax(scale(matmul(Q, permute(K, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(d))), -1);
    Tensor out = reshape(permute(matmul(att, V), {0, 2, 1, 3}), {N, T, e});
    Tensor y = p.proj(out);
    return batched ? y : reshape(y, {T, e});
}

// ---------------------------------------------------------------------------
// ViT block
// ---------------------------------------------------------------------------

struct ViTBlockGated {
    LayerNormLayer ln1, ln2;
    MHSAParams attn;
    LinearLayer mlp1, mlp2;
    bool use_hag = false;
    std::vector<HardAttentionGate> gates; // [0]=after attention, [1]=after MLP

    ViTBlockGated() = default;
    ViTBlockGated(const std::string& name, long embed, long heads, bool hag, std::uint64_t seed)
        : ln1(name + ".ln1", embed),
          ln2(name + ".ln2", embed),
          attn(name + ".attn", embed, heads, seed),
          mlp1(name + ".mlp1", embed, 4 * embed, seed),
          mlp2(name + ".mlp2", 4 * embed, embed, seed),
          use_hag(hag) {
        if (hag) {
            gates.push_back(make_gate(name + ".gate_attn", embed, GateMode::embedding, seed));
            gates.push_back(make_gate(name + ".gate_mlp", embed, GateMode::embedding, seed));
        }
    }

    // Pre-norm residual blocks; gates sit on the branch output so a score near
    // zero mutes the branch but never the identity path.
    Tensor operator()(const Tensor& x) const {
        Tensor a = multi_head_self_attention(ln1(x), attn);
        if (use_hag) a = gates[0].apply(a);
        Tensor h = add(x, a);
        Tensor m = mlp2(gelu(mlp1(ln2(h))));
        if (use_hag) m = gates[1].apply(m);
        return add(h, m);
    }

    void collect(ParamList& out) const {
        ln1.collect(out);
        attn.collect(out);
        ln2.collect(out);
        mlp1.collect(out);
        mlp2.collect(out);
        for (const auto& g : gates) out.push_back(g.raw());
    }
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

struct GatePlacement {
    long layer;            // block index / stream index; 0 for input-level gates
    std::string position;  // "attn", "mlp", "stream", "input"
    HardAttentionGate gate;
};

struct ModelConfig {
    std::string arch = "micro_vit"; // micro_vit | multistream_cnn | gated_mlp
    bool use_hag = true;
    long out_dim = 1; // 1 = regression, >1 = class logits
    // micro_vit
    long image_c = 1, image_h = 8, image_w = 8;
    long patch = 4, embed = 16, heads = 2, depth = 2;
    // multistream_cnn
    long streams = 2, stream_in = 1, stream_channels = 4;
    // gated_mlp
    long in_dim = 16, hidden = 32;
};

class Model {
public:
    virtual ~Model() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual ParamList params() const = 0;
    virtual std::vector<GatePlacement> gates() const = 0;
    virtual const ModelConfig& config() const = 0;

    long param_count() const {
        long n = 0;
        for (const auto& p : params()) n += p.numel();
        return n;
    }
    ParamList params_in(Group g) const {
        ParamList out;
        for (const auto& p : params())
            if (p.group() == g) out.push_back(p);
        return out;
    }
};

class MicroViT : public Model {
public:
    MicroViT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.image_h % cfg.patch != 0 || cfg.image_w % cfg.patch != 0)
            throw std::invalid_argument("micro_vit: patch " + std::to_string(cfg.patch) +
                                        " must divide image " + std::to_string(cfg.image_h) + "x" +
                                        std::to_string(cfg.image_w));
        if (cfg.embed % cfg.heads != 0)
            throw std::invalid_argument("micro_vit: heads must divide embed");
        if (cfg.depth < 1)
            throw std::invalid_argument("micro_vit: depth must be >= 1");
        long pd = cfg.image_c * cfg.patch * cfg.patch;
        tokens_ = (cfg.image_h / cfg.patch) * (cfg.image_w / cfg.patch);
        patch_proj_ = LinearLayer("patch", pd, cfg.embed, seed);
        cls_ = normal_param("cls", {1, cfg.embed}, 0.02, seed);
        pos_ = normal_param("pos", {tokens_ + 1, cfg.embed}, 0.02, seed);
        blocks_.reserve(static_cast<std::size_t>(cfg.depth));
        for (long i = 0; i < cfg.depth; ++i)
            blocks_.emplace_back("b" + std::to_string(i), cfg.embed, cfg.heads, cfg.use_hag, seed);
        ln_f_ = LayerNormLayer("ln_f", cfg.embed);
        head_ = LinearLayer("head", cfg.embed, cfg.out_dim, seed);
    }

    Tensor forward(const Tensor& x) override {
        if (x.rank() != 4 || x.dim(1) != cfg_.image_c || x.dim(2) != cfg_.image_h ||
            x.dim(3) != cfg_.image_w)
            throw std::invalid_argument("micro_vit: expected [N," + std::to_string(cfg_.image_c) +
                                        "," + std::to_string(cfg_.image_h) + "," +
                                        std::to_string(cfg_.image_w) + "], got " +
                                        shape_str(x.shape()));
        long N = x.dim(0);
        Tensor tok = patch_proj_(extract_patches(x, cfg_.patch, cfg_.patch)); // [N,T,e]
        Tensor cls = broadcast_to(reshape(cls_, {1, 1, cfg_.embed}), {N, 1, cfg_.embed});
        Tensor h = add(concat({cls, tok}, 1), pos_);
        for (const auto& b : blocks_) h = b(h);
        Tensor cls_out = select(ln_f_(h), 1, 0); // [N,e]
        return head_(cls_out);
    }

    ParamList params() const override {
        ParamList out;
        patch_proj_.collect(out);
        out.push_back(cls_);
        out.push_back(pos_);
        for (const auto& b : blocks_) b.collect(out);
        ln_f_.collect(out);
        head_.collect(out);
        return out;
    }

    std::vector<GatePlacement> gates() const override {
        std::vector<GatePlacement> out;
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            if (blocks_[i].use_hag) {
                out.push_back({static_cast<long>(i), "attn", blocks_[i].gates[0]});
                out.push_back({static_cast<long>(i), "mlp", blocks_[i].gates[1]});
            }
        return out;
    }

    const ModelConfig& config() const override { return cfg_; }
    long token_count() const { return tokens_ + 1; }

private:
    ModelConfig cfg_;
    long tokens_ = 0;
    LinearLayer patch_proj_;
    Tensor cls_, pos_;
    std::vector<ViTBlockGated> blocks_;
    LayerNormLayer ln_f_;
    LinearLayer head_;
};

// Channel-gated fusion: each stream optionally gated, then concatenated on the
// channel axis. Streams must agree on batch and spatial dims.
inline Tensor multistream_fuse(const std::vector<Tensor>& streams,
                               const std::vector<const HardAttentionGate*>& gates = {}) {
    if (streams.empty())
        throw std::invalid_argument("multistream_fuse: no streams");
    if (!gates.empty() && gates.size() != streams.size())
        throw std::invalid_argument("multistream_fuse: gate count mismatch");
    for (std::size_t i = 1; i < streams.size(); ++i) {
        const Shape& a = streams[0].shape();
        const Shape& b = streams[i].shape();
        if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3])
            throw std::invalid_argument("multistream_fuse: spatial mismatch between stream 0 " +
                                        shape_str(a) + " and stream " + std::to_string(i) + " " +
                                        shape_str(b));
    }
    std::vector<Tensor> gated;
    gated.reserve(streams.size());
    for (std::size_t i = 0; i < streams.size(); ++i)
        gated.push_back(gates.empty() || gates[i] == nullptr ? streams[i]
                                                             : gates[i]->apply(streams[i]));
    return gated.size() == 1 ? gated[0] : concat(gated, 1);
}

struct ConvLayer {
    Tensor weight; // [Co,Ci,kh,kw]
    Tensor bias;   // [Co]
    long stride = 1, pad = 0;

    ConvLayer() = default;
    ConvLayer(const std::string& name, long ci, long co, long k, long stride_, long pad_,
              std::uint64_t seed)
        : weight(xavier_param(name + ".w", {co, ci, k, k}, ci * k * k, co * k * k, seed)),
          bias(const_param(name + ".b", {co}, 0.0)),
          stride(stride_), pad(pad_) {}

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
    void collect(ParamList& out) const {
        out.push_back(weight);
        out.push_back(bias);
    }
};

class MultiStreamCNN : public Model {
public:
    MultiStreamCNN(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.streams < 1)
            throw std::invalid_argument("multistream_cnn: streams must be >= 1");
        if (cfg.stream_in < 1 || cfg.stream_channels < 1)
            throw std::invalid_argument("multistream_cnn: stream_in and stream_channels must be >= 1");
        if (cfg.image_h < 8 || cfg.image_w < 8)
            throw std::invalid_argument("multistream_cnn: image must be at least 8x8 for 3 stride-2 stages");
        if (cfg.image_c != cfg.streams * cfg.stream_in)
            throw std::invalid_argument("multistream_cnn: image_c " + std::to_string(cfg.image_c) +
                                        " != streams*stream_in " +
                                        std::to_string(cfg.streams * cfg.stream_in));
        for (long s = 0; s < cfg.streams; ++s) {
            std::string base = "s" + std::to_string(s);
            StreamStack st;
            st.c1 = ConvLayer(base + ".c1", cfg.stream_in, cfg.stream_channels, 3, 2, 1, seed);
            st.c2 = ConvLayer(base + ".c2", cfg.stream_channels, cfg.stream_channels, 3, 2, 1, seed);
            st.c3 = ConvLayer(base + ".c3", cfg.stream_channels, cfg.stream_channels, 3, 2, 1, seed);
            if (cfg.use_hag)
                st.gate = std::make_shared<HardAttentionGate>(
                    make_gate(base + ".gate", cfg.stream_channels, GateMode::channel, seed));
            streams_.push_back(std::move(st));
        }
        head_ = LinearLayer("head", cfg.streams * cfg.stream_channels, cfg.out_dim, seed);
    }

    Tensor forward(const Tensor& x) override {
        if (x.rank() != 4 || x.dim(1) != cfg_.image_c)
            throw std::invalid_argument("multistream_cnn: expected [N," +
                                        std::to_string(cfg_.image_c) + ",H,W], got " +
                                        shape_str(x.shape()));
        std::vector<Tensor> feats;
        std::vector<const HardAttentionGate*> gates;
        for (long s = 0; s < cfg_.streams; ++s) {
            Tensor xs = narrow(x, 1, s * cfg_.stream_in, cfg_.stream_in);
            const auto& st = streams_[static_cast<std::size_t>(s)];
            Tensor h = relu(st.c1(xs));
            h = relu(st.c2(h));
            h = relu(st.c3(h));
            feats.push_back(h);
            gates.push_back(st.gate.get());
        }
        Tensor fused = multistream_fuse(feats, gates);
        Tensor pooled = mean(fused, {2, 3}); // [N, S*C]
        return head_(pooled);
    }

    ParamList params() const override {
        ParamList out;
        for (const auto& st : streams_) {
            st.c1.collect(out);
            st.c2.collect(out);
            st.c3.collect(out);
            if (st.gate) out.push_back(st.gate->raw());
        }
        head_.collect(out);
        return out;
    }

    std::vector<GatePlacement> gates() const override {
        std::vector<GatePlacement> out;
        for (std::size_t i = 0; i < streams_.size(); ++i)
            if (streams_[i].gate)
                out.push_back({static_cast<long>(i), "stream", *streams_[i].gate});
        return out;
    }

    const ModelConfig& config() const override { return cfg_; }

private:
    struct StreamStack {
        ConvLayer c1, c2, c3;
        std::shared_ptr<HardAttentionGate> gate;
    };
    ModelConfig cfg_;
    std::vector<StreamStack> streams_;
    LinearLayer head_;
};

// Flat-vector model with an input-level gate: the feature-selection testbed.
class GatedMLP : public Model {
public:
    GatedMLP(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.in_dim < 1 || cfg.hidden < 1)
            throw std::invalid_argument("gated_mlp: in_dim and hidden must be >= 1");
        if (cfg.use_hag)
            gate_ = std::make_shared<HardAttentionGate>(
                make_gate("input.gate", cfg.in_dim, GateMode::embedding, seed));
        fc1_ = LinearLayer("fc1", cfg.in_dim, cfg.hidden, seed);
        fc2_ = LinearLayer("fc2", cfg.hidden, cfg.out_dim, seed);
    }

    Tensor forward(const Tensor& x) override {
        if (x.rank() != 2 || x.dim(1) != cfg_.in_dim)
            throw std::invalid_argument("gated_mlp: expected [N," + std::to_string(cfg_.in_dim) +
                                        "], got " + shape_str(x.shape()));
        Tensor h = gate_ ? gate_->apply(x) : x;
        return fc2_(relu(fc1_(h)));
    }

    ParamList params() const override {
        ParamList out;
        if (gate_) out.push_back(gate_->raw());
        fc1_.collect(out);
        fc2_.collect(out);
        return out;
    }

    std::vector<GatePlacement> gates() const override {
        std::vector<GatePlacement> out;
        if (gate_) out.push_back({0, "input", *gate_});
        return out;
    }

    const ModelConfig& config() const override { return cfg_; }

private:
    ModelConfig cfg_;
    std::shared_ptr<HardAttentionGate> gate_;
    LinearLayer fc1_, fc2_;
};

inline std::unique_ptr<Model> model_build(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.out_dim < 1)
        throw std::invalid_argument("model_build: out_dim must be >= 1");
    if (cfg.arch == "micro_vit") return std::make_unique<MicroViT>(cfg, seed);
    if (cfg.arch == "multistream_cnn") return std::make_unique<MultiStreamCNN>(cfg, seed);
    if (cfg.arch == "gated_mlp") return std::make_unique<GatedMLP>(cfg, seed);
    throw std::invalid_argument("model_build: unknown arch \"" + cfg.arch +
                                "\" (expected micro_vit, multistream_cnn, or gated_mlp)");
}

} // namespace gatenet
