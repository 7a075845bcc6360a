#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "darn/encoder.hpp"
#include "darn/rng.hpp"
#include "darn/tensor.hpp"

namespace darn {

enum class Mode { Train, Eval };

struct DecoderConfig {
    std::array<std::size_t, 4> in_widths{16, 32, 64, 128};
    std::size_t width = 64;
    std::size_t num_classes = 3;

    // Component switches. adm requires tcp; dcg without tcp is a plain SE
    // block scaled by `fixed_gate`.
    bool tcp = true;
    bool adm = true;
    bool dcg = true;

    double fixed_p = 0.3;  // dropout rate whenever adm is off; 0 disables dropout
    double p_min = 0.1;
    double p_max = 0.5;
    double alpha = 0.3;
    double temperature = 0.1;
    double fixed_gate = 1.0;
    bool adm_per_level = false;  // extra ADM sites after the 1/8 and 1/4 fusion convs
    std::size_t se_reduction = 4;
    std::size_t tcp_channels = 64;
    std::size_t tcp_hidden = 32;
};

// Rungs of the sequential component ablation, bottom to top.
enum class AblationArm { Baseline, Tcp, TcpAdm, TcpDcg, Full };

inline constexpr std::array<AblationArm, 5> kAblationLadder{AblationArm::Baseline, AblationArm::Tcp,
                                                            AblationArm::TcpAdm, AblationArm::TcpDcg,
                                                            AblationArm::Full};

std::string arm_name(AblationArm arm);
DecoderConfig with_arm(DecoderConfig cfg, AblationArm arm);

// Per-sample complexity c, dropout rate p(c) and gate factor g(c).
// Tensors are undefined when the complexity head is disabled.
struct ComplexityState {
    Tensor c;
    Tensor p;
    Tensor gate_scale;
};

// Explicit uniform noise for the relaxed dropout mask. In Eval mode the mask
// is identically one and `u` is unused.
struct DropoutMask {
    Tensor u;
    Mode mode = Mode::Eval;

    static DropoutMask draw(const Shape& shape, Rng& rng);
    static DropoutMask eval() { return {}; }
};

struct TcpParams {
    Tensor conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

struct SeParams {
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

// ---------------------------------------------------------------------------
// Building blocks (free functions so they can be tested in isolation).

// c = sigmoid(fc2(relu(fc1(gap(relu(conv3x3(f1))))))) -> [B]
Tensor tcp_forward(const Tensor& f1, const TcpParams& params);

// p = p_max - (p_max - p_min) * c. Throws DomainError when c leaves [0,1].
Tensor adm_rate(const Tensor& c, double p_min = 0.1, double p_max = 0.5);

// alpha + (1 - alpha) * c. Throws DomainError when c leaves [0,1].
Tensor gate_factor(const Tensor& c, double alpha = 0.3);

// Concrete relaxation of a keep mask for one unit:
//   1 - sigmoid((log p - log(1-p) + log u - log(1-u)) / temperature)
double relaxed_keep(double p, double u, double temperature);

// x [B,...] scaled by the relaxed keep mask and 1/(1-p[b]). Differentiable in
// x and p. Eval mode returns x itself.
Tensor adm_apply(const Tensor& x, const Tensor& p, const DropoutMask& noise, double temperature);

// Squeeze-excitation attention a = sigmoid(fc2(relu(fc1(gap(f))))) -> [B,C]
Tensor se_attention(const Tensor& f, const SeParams& params);

// f * [a * (alpha + (1-alpha) c)] broadcast over the spatial axes.
Tensor dcg_apply(const Tensor& f, const Tensor& c, const SeParams& params, double alpha = 0.3);

// ---------------------------------------------------------------------------

struct DecodeResult {
    Tensor logits;  // [B,K,H,W]
    ComplexityState state;
};

struct ParamBreakdown {
    std::size_t tcp = 0;
    std::size_t se = 0;
    std::size_t ppm = 0;
    std::size_t fpn = 0;
    std::size_t classifier = 0;
    std::size_t total() const { return tcp + se + ppm + fpn + classifier; }
};

// UPerNet-style decoder with optional complexity head, complexity-gated SE
// attention on levels 2..4, and relaxed adaptive dropout before the classifier.
class Decoder {
   public:
    static Decoder build(const DecoderConfig& cfg, std::uint64_t seed);

    // `noise` is consulted only in Train mode when a dropout site is active.
    DecodeResult decode(const FeaturePyramid& pyr, Mode mode, Rng& noise) const;

    const DecoderConfig& config() const { return cfg_; }
    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    ParamBreakdown param_count() const;

    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    TcpParams tcp_params() const;
    SeParams se_params(std::size_t level) const;  // level in {1,2,3} (zero-based pyramid index)

    static std::size_t tcp_param_count(std::size_t c1, std::size_t channels = 64, std::size_t hidden = 32);

   private:
    Tensor dropout(const Tensor& x, const ComplexityState& st, Mode mode, Rng& noise) const;

    DecoderConfig cfg_;
    std::vector<NamedTensor> params_;
};

}  // namespace darn
