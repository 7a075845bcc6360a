#include "darn/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "darn/error.hpp"
#include "darn/ops.hpp"

namespace darn {

namespace {

constexpr std::array<std::size_t, 3> kPpmScales{1, 2, 4};

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, std);
    return Tensor::from(std::move(shape), std::move(v), true);
}

std::uint64_t name_hash(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

Tensor zero_bias(std::size_t n) { return Tensor::zeros({n}, true); }

void require_unit_interval(const Tensor& c, const char* op) {
    for (double v : c.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(op) + ": complexity " + std::to_string(v) + " outside [0,1]");
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::string arm_name(AblationArm arm) {
    switch (arm) {
        case AblationArm::Baseline: return "Baseline Decoder";
        case AblationArm::Tcp: return "+ TCP (Features Only)";
        case AblationArm::TcpAdm: return "+ ADM (w/ TCP)";
        case AblationArm::TcpDcg: return "+ DCG (w/ TCP, No ADM)";
        case AblationArm::Full: return "Full DARN (TCP+ADM+DCG)";
    }
    return "?";
}

DecoderConfig with_arm(DecoderConfig cfg, AblationArm arm) {
    switch (arm) {
        case AblationArm::Baseline: cfg.tcp = false; cfg.adm = false; cfg.dcg = false; break;
        case AblationArm::Tcp: cfg.tcp = true; cfg.adm = false; cfg.dcg = false; break;
        case AblationArm::TcpAdm: cfg.tcp = true; cfg.adm = true; cfg.dcg = false; break;
        case AblationArm::TcpDcg: cfg.tcp = true; cfg.adm = false; cfg.dcg = true; break;
        case AblationArm::Full: cfg.tcp = true; cfg.adm = true; cfg.dcg = true; break;
    }
    return cfg;
}

DropoutMask DropoutMask::draw(const Shape& shape, Rng& rng) {
    std::vector<double> u(shape_numel(shape));
    for (auto& v : u) v = rng.uniform();
    return {Tensor::from(shape, std::move(u)), Mode::Train};
}

// ---------------------------------------------------------------------------

Tensor tcp_forward(const Tensor& f1, const TcpParams& p) {
    if (f1.rank() != 4 || f1.dim(1) != p.conv_w.dim(1)) {
        throw DimensionError("tcp_forward: feature " + shape_str(f1.shape()) + " does not match TCP input channels " +
                             std::to_string(p.conv_w.dim(1)));
    }
    Tensor h = ops::relu(ops::conv2d(f1, p.conv_w, p.conv_b, 1, 1));
    Tensor z = ops::relu(ops::linear(ops::gap(h), p.fc1_w, p.fc1_b));
    Tensor c = ops::sigmoid(ops::linear(z, p.fc2_w, p.fc2_b));
    return ops::reshape(c, {f1.dim(0)});
}

Tensor adm_rate(const Tensor& c, double p_min, double p_max) {
    require_unit_interval(c, "adm_rate");
    // Convex form: hits p_max, p_min and the midpoint exactly in f64.
    return ops::add(ops::mul_const(c, p_min), ops::mul_const(ops::add_const(ops::neg(c), 1.0), p_max));
}

Tensor gate_factor(const Tensor& c, double alpha) {
    require_unit_interval(c, "gate_factor");
    // c + alpha (1 - c) rather than alpha + (1 - alpha) c: the latter rounds
    // 0.3 + 0.7 * 0.5 to one ulp below 0.65.
    return ops::add(c, ops::mul_const(ops::add_const(ops::neg(c), 1.0), alpha));
}

double relaxed_keep(double p, double u, double temperature) {
    const double z = (std::log(p) - std::log1p(-p) + std::log(u) - std::log1p(-u)) / temperature;
    return 1.0 - stable_sigmoid(z);
}

Tensor adm_apply(const Tensor& x, const Tensor& p, const DropoutMask& noise, double temperature) {
    if (noise.mode == Mode::Eval) return x;
    if (!(temperature > 0.0)) throw DomainError("adm_apply: temperature must be positive");
    if (!noise.u.defined() || noise.u.shape() != x.shape()) {
        throw DimensionError("adm_apply: noise shape does not match input " + shape_str(x.shape()));
    }
    if (p.rank() != 1 || p.dim(0) != x.dim(0)) {
        throw DimensionError("adm_apply: rate must be [B], got " + shape_str(p.shape()));
    }
    for (double v : p.data()) {
        if (!(v > 0.0 && v < 1.0)) throw DomainError("adm_apply: dropout rate " + std::to_string(v) + " outside (0,1)");
    }
    const std::size_t batch = x.dim(0);
    const std::size_t inner = x.numel() / batch;
    const auto xs = x.data();
    const auto us = noise.u.data();
    const auto ps = p.data();

    std::vector<double> keep(x.numel());
    std::vector<double> y(x.numel());
    for (std::size_t b = 0; b < batch; ++b) {
        const double pb = ps[b];
        const double logit_p = std::log(pb) - std::log1p(-pb);
        const double inv_keep = 1.0 / (1.0 - pb);
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = b * inner + i;
            const double u = us[k];
            if (!(u > 0.0 && u < 1.0)) throw DomainError("adm_apply: noise outside (0,1)");
            const double z = (logit_p + std::log(u) - std::log1p(-u)) / temperature;
            keep[k] = 1.0 - stable_sigmoid(z);
            y[k] = xs[k] * keep[k] * inv_keep;
        }
    }
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (should_record({&x, &p})) {
        Tape::active()->record("adm_apply", out, [x, p, out, keep = std::move(keep), batch, inner, temperature]() mutable {
            const auto go = out.grad();
            const auto xs = x.data();
            const auto ps = p.data();
            if (x.requires_grad()) {
                auto gx = x.mutable_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double inv_keep = 1.0 / (1.0 - ps[b]);
                    for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t k = b * inner + i;
                        gx[k] += go[k] * keep[k] * inv_keep;
                    }
                }
            }
            if (p.requires_grad()) {
                auto gp = p.mutable_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double pb = ps[b];
                    const double q = 1.0 - pb;
                    // dz/dp = 1 / (T p (1-p)); dm/dp = -s(1-s) dz/dp with s = 1 - m
                    const double dz_dp = 1.0 / (temperature * pb * q);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t k = b * inner + i;
                        const double m = keep[k];
                        const double dm_dp = -(1.0 - m) * m * dz_dp;
                        acc += go[k] * xs[k] * (dm_dp / q + m / (q * q));
                    }
                    gp[b] += acc;
                }
            }
        });
    }
    return out;
}

Tensor se_attention(const Tensor& f, const SeParams& p) {
    if (f.rank() != 4 || f.dim(1) != p.fc1_w.dim(1)) {
        throw DimensionError("se_attention: feature " + shape_str(f.shape()) + " does not match SE width " +
                             std::to_string(p.fc1_w.dim(1)));
    }
    Tensor squeezed = ops::gap(f);
    Tensor z = ops::relu(ops::linear(squeezed, p.fc1_w, p.fc1_b));
    return ops::sigmoid(ops::linear(z, p.fc2_w, p.fc2_b));
}

Tensor dcg_apply(const Tensor& f, const Tensor& c, const SeParams& params, double alpha) {
    if (c.rank() != 1 || f.rank() != 4 || c.dim(0) != f.dim(0)) {
        throw DimensionError("dcg_apply: complexity " + shape_str(c.shape()) + " does not match feature batch");
    }
    Tensor a = se_attention(f, params);
    Tensor gate = ops::scale(a, gate_factor(c, alpha));
    return ops::scale(f, gate);
}

// ---------------------------------------------------------------------------

std::size_t Decoder::tcp_param_count(std::size_t c1, std::size_t channels, std::size_t hidden) {
    return 9 * c1 * channels + channels + channels * hidden + hidden + hidden + 1;
}

Decoder Decoder::build(const DecoderConfig& cfg, std::uint64_t seed) {
    if (cfg.adm && !cfg.tcp) throw ConfigError("decoder: adaptive dropout requires the complexity head (tcp)");
    if (cfg.width == 0 || cfg.num_classes == 0) throw ConfigError("decoder: width and num_classes must be positive");
    for (auto w : cfg.in_widths)
        if (w == 0) throw ConfigError("decoder: input widths must be positive");
    if (!(cfg.fixed_p >= 0.0 && cfg.fixed_p < 1.0)) throw ConfigError("decoder: fixed_p must lie in [0,1)");
    if (!(cfg.p_min > 0.0 && cfg.p_min <= cfg.p_max && cfg.p_max < 1.0)) {
        throw ConfigError("decoder: require 0 < p_min <= p_max < 1");
    }
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ConfigError("decoder: alpha must lie in [0,1]");
    if (!(cfg.temperature > 0.0)) throw ConfigError("decoder: temperature must be positive");
    if (cfg.se_reduction == 0) throw ConfigError("decoder: se_reduction must be positive");

    Decoder dec;
    dec.cfg_ = cfg;
    auto& P = dec.params_;
    // One init stream per parameter name, so layers shared between ablation
    // arms start from identical weights.
    auto weight = [&](const std::string& name, Shape shape, std::size_t fan_in) {
        Rng rng(mix_seed(seed, name_hash(name)));
        P.push_back({name, he_normal(rng, std::move(shape), fan_in)});
    };
    auto bias = [&](const std::string& name, std::size_t n) { P.push_back({name, zero_bias(n)}); };
    const std::size_t D = cfg.width;
    const auto& C = cfg.in_widths;

    if (cfg.tcp) {
        const std::size_t tc = cfg.tcp_channels, th = cfg.tcp_hidden;
        weight("tcp.conv.w", {tc, C[0], 3, 3}, 9 * C[0]);
        bias("tcp.conv.b", tc);
        weight("tcp.fc1.w", {th, tc}, tc);
        bias("tcp.fc1.b", th);
        weight("tcp.fc2.w", {1, th}, th);
        bias("tcp.fc2.b", 1);
    }
    if (cfg.dcg) {
        for (std::size_t l = 1; l < 4; ++l) {
            const std::size_t hidden = std::max<std::size_t>(1, C[l] / cfg.se_reduction);
            const std::string p = "se" + std::to_string(l + 1);
            weight(p + ".fc1.w", {hidden, C[l]}, C[l]);
            bias(p + ".fc1.b", hidden);
            weight(p + ".fc2.w", {C[l], hidden}, hidden);
            bias(p + ".fc2.b", C[l]);
        }
    }
    for (auto s : kPpmScales) {
        const std::string p = "ppm.s" + std::to_string(s);
        weight(p + ".w", {D, C[3], 1, 1}, C[3]);
        bias(p + ".b", D);
    }
    const std::size_t ppm_in = C[3] + kPpmScales.size() * D;
    weight("ppm.fuse.w", {D, ppm_in, 3, 3}, 9 * ppm_in);
    bias("ppm.fuse.b", D);
    for (std::size_t l = 0; l < 3; ++l) {
        const std::string p = "fpn" + std::to_string(l + 1);
        weight(p + ".lateral.w", {D, C[l], 1, 1}, C[l]);
        bias(p + ".lateral.b", D);
        weight(p + ".fuse.w", {D, D, 3, 3}, 9 * D);
        bias(p + ".fuse.b", D);
    }
    weight("classifier.w", {cfg.num_classes, D, 1, 1}, D);
    bias("classifier.b", cfg.num_classes);
    return dec;
}

const Tensor& Decoder::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.tensor;
    throw ConfigError("decoder: no parameter named " + name);
}

Tensor& Decoder::param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p.tensor;
    throw ConfigError("decoder: no parameter named " + name);
}

TcpParams Decoder::tcp_params() const {
    return {param("tcp.conv.w"), param("tcp.conv.b"), param("tcp.fc1.w"),
            param("tcp.fc1.b"),  param("tcp.fc2.w"),  param("tcp.fc2.b")};
}

SeParams Decoder::se_params(std::size_t level) const {
    const std::string p = "se" + std::to_string(level + 1);
    return {param(p + ".fc1.w"), param(p + ".fc1.b"), param(p + ".fc2.w"), param(p + ".fc2.b")};
}

ParamBreakdown Decoder::param_count() const {
    ParamBreakdown b;
    for (const auto& p : params_) {
        const std::size_t n = p.tensor.numel();
        if (p.name.starts_with("tcp.")) b.tcp += n;
        else if (p.name.starts_with("se")) b.se += n;
        else if (p.name.starts_with("ppm.")) b.ppm += n;
        else if (p.name.starts_with("fpn")) b.fpn += n;
        else b.classifier += n;
    }
    return b;
}

Tensor Decoder::dropout(const Tensor& x, const ComplexityState& st, Mode mode, Rng& noise) const {
    if (mode == Mode::Eval) return x;
    Tensor p;
    if (cfg_.adm) {
        p = st.p;
    } else if (cfg_.fixed_p > 0.0) {
        p = Tensor::full({x.dim(0)}, cfg_.fixed_p);
    } else {
        return x;
    }
    return adm_apply(x, p, DropoutMask::draw(x.shape(), noise), cfg_.temperature);
}

DecodeResult Decoder::decode(const FeaturePyramid& pyr, Mode mode, Rng& noise) const {
    for (std::size_t l = 0; l < 4; ++l) {
        const auto& f = pyr[l];
        if (!f.defined() || f.rank() != 4 || f.dim(1) != cfg_.in_widths[l]) {
            throw DimensionError("decode: pyramid level " + std::to_string(l + 1) + " has shape " +
                                 (f.defined() ? shape_str(f.shape()) : std::string("<undefined>")) +
                                 ", expected " + std::to_string(cfg_.in_widths[l]) + " channels");
        }
        if (l > 0 && (f.dim(2) * 2 != pyr[l - 1].dim(2) || f.dim(3) * 2 != pyr[l - 1].dim(3))) {
            throw GeometryError("decode: pyramid extents must halve level to level");
        }
    }

    DecodeResult res;
    auto& st = res.state;
    if (cfg_.tcp) {
        st.c = tcp_forward(pyr[0], tcp_params());
        st.p = adm_rate(st.c, cfg_.p_min, cfg_.p_max);
        st.gate_scale = gate_factor(st.c, cfg_.alpha);
    }

    std::array<Tensor, 4> g = pyr.levels;
    if (cfg_.dcg) {
        for (std::size_t l = 1; l < 4; ++l) {
            const SeParams se = se_params(l);
            if (cfg_.tcp) {
                g[l] = dcg_apply(pyr[l], st.c, se, cfg_.alpha);
            } else {
                g[l] = ops::scale(pyr[l], ops::mul_const(se_attention(pyr[l], se), cfg_.fixed_gate));
            }
        }
    }

    // Pyramid pooling on the deepest map.
    const Tensor& top = g[3];
    const std::size_t h4 = top.dim(2), w4 = top.dim(3);
    std::vector<Tensor> parts{top};
    for (auto s : kPpmScales) {
        const std::string p = "ppm.s" + std::to_string(s);
        Tensor pooled = ops::adaptive_avg_pool(top, s, s);
        Tensor z = ops::relu(ops::conv2d(pooled, param(p + ".w"), param(p + ".b"), 1, 0));
        parts.push_back(ops::resize_bilinear(z, h4, w4));
    }
    Tensor fused = ops::relu(ops::conv2d(ops::concat_channels(parts), param("ppm.fuse.w"), param("ppm.fuse.b"), 1, 1));

    // Top-down pathway to the finest level.
    for (std::size_t l = 3; l-- > 0;) {
        const std::string p = "fpn" + std::to_string(l + 1);
        Tensor lateral = ops::relu(ops::conv2d(g[l], param(p + ".lateral.w"), param(p + ".lateral.b"), 1, 0));
        Tensor up = ops::resize_bilinear(fused, g[l].dim(2), g[l].dim(3));
        fused = ops::relu(ops::conv2d(ops::add(lateral, up), param(p + ".fuse.w"), param(p + ".fuse.b"), 1, 1));
        if (cfg_.adm_per_level && l > 0) fused = dropout(fused, st, mode, noise);
    }

    Tensor feat = dropout(fused, st, mode, noise);
    Tensor logits = ops::conv2d(feat, param("classifier.w"), param("classifier.b"), 1, 0);
    res.logits = ops::resize_bilinear(logits, pyr.input_h, pyr.input_w);
    return res;
}

}  // namespace darn
