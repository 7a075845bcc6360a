#include <cmath>
#include <vector>

#include "darn/decoder.hpp"
#include "darn/error.hpp"
#include "darn/gradcheck.hpp"
#include "darn/objectives.hpp"
#include "darn/ops.hpp"
#include "doctest.h"

using namespace darn;

namespace {

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

FeaturePyramid random_pyramid(std::uint64_t seed, std::array<std::size_t, 4> widths, std::size_t batch,
                              std::size_t input = 32) {
    Rng rng(seed);
    FeaturePyramid p;
    p.input_h = p.input_w = input;
    for (std::size_t l = 0; l < 4; ++l) {
        const std::size_t e = input >> (l + 1);
        p.levels[l] = uniform(rng, {batch, widths[l], e, e}, 0.0, 1.0);
    }
    return p;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void zero(Tensor& t) {
    for (auto& v : t.mutable_data()) v = 0.0;
}

DecoderConfig small_config() {
    DecoderConfig dc;
    dc.in_widths = {4, 6, 8, 10};
    dc.width = 8;
    return dc;
}

}  // namespace

TEST_SUITE("closed forms") {
    TEST_CASE("adm_rate endpoints and slope") {
        const Tensor p = adm_rate(Tensor::from({4}, {0.0, 1.0, 0.25, 0.5}));
        CHECK(p.data()[0] == 0.5);
        CHECK(p.data()[1] == 0.1);
        CHECK(p.data()[2] == 0.4);
        CHECK(p.data()[3] == 0.3);

        Tape tape;
        Tensor c = Tensor::from({1}, {0.37}, true);
        Tensor s;
        {
            Tape::Recording rec(tape);
            s = ops::reduce_all(adm_rate(c), ops::Reduce::Sum);
        }
        tape.backward(s);
        CHECK(c.grad()[0] == -0.4);
    }

    TEST_CASE("gate factor values") {
        const Tensor g = gate_factor(Tensor::from({3}, {0.0, 0.5, 1.0}));
        CHECK(g.data()[0] == 0.3);
        CHECK(g.data()[1] == 0.65);
        CHECK(g.data()[2] == 1.0);
    }

    TEST_CASE("affine ranges and monotonicity over [0,1]") {
        std::vector<double> cs;
        for (int i = 0; i <= 100; ++i) cs.push_back(i / 100.0);
        const Tensor c = Tensor::from({cs.size()}, cs);
        const Tensor p = adm_rate(c), g = gate_factor(c);
        for (std::size_t i = 0; i < cs.size(); ++i) {
            CHECK(p.data()[i] >= 0.1 - 1e-15);
            CHECK(p.data()[i] <= 0.5);
            CHECK(g.data()[i] >= 0.3);
            CHECK(g.data()[i] <= 1.0 + 1e-15);
            if (i > 0) {
                CHECK(p.data()[i] < p.data()[i - 1]);
                CHECK(g.data()[i] > g.data()[i - 1]);
            }
        }
    }

    TEST_CASE("complexity outside [0,1] is a domain error") {
        CHECK_THROWS_AS(adm_rate(Tensor::from({1}, {1.5})), DomainError);
        CHECK_THROWS_AS(gate_factor(Tensor::from({1}, {-0.1})), DomainError);
    }
}

TEST_SUITE("tcp") {
    TEST_CASE("zero MLP gives c = 0.5") {
        DecoderConfig dc = small_config();
        Decoder dec = Decoder::build(dc, 1);
        zero(dec.param("tcp.fc1.w"));
        zero(dec.param("tcp.fc2.w"));
        zero(dec.param("tcp.fc2.b"));
        const Tensor c = tcp_forward(random_pyramid(2, dc.in_widths, 3)[0], dec.tcp_params());
        REQUIRE(c.shape() == Shape{3});
        for (double v : c.data()) CHECK(v == 0.5);
    }

    TEST_CASE("c stays strictly inside (0,1)") {
        DecoderConfig dc = small_config();
        const Decoder dec = Decoder::build(dc, 3);
        FeaturePyramid p = random_pyramid(4, dc.in_widths, 4);
        for (auto& v : p.levels[0].mutable_data()) v *= 50.0;
        const Tensor c = tcp_forward(p[0], dec.tcp_params());
        for (double v : c.data()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }

    TEST_CASE("channel mismatch") {
        const Decoder dec = Decoder::build(small_config(), 1);
        CHECK_THROWS_AS(tcp_forward(Tensor::zeros({1, 5, 4, 4}), dec.tcp_params()), DimensionError);
    }

    TEST_CASE("gradient of c w.r.t. TCP weights") {
        DecoderConfig dc = small_config();
        const Decoder dec = Decoder::build(dc, 5);
        const Tensor f1 = random_pyramid(6, dc.in_widths, 2, 16)[0];
        const TcpParams tp = dec.tcp_params();
        const auto r = grad_check(
            [&f1](std::span<const Tensor> in) {
                const TcpParams p{in[0], in[1], in[2], in[3], in[4], in[5]};
                const Tensor c = tcp_forward(f1, p);
                return ops::reduce_all(ops::mul(c, c), ops::Reduce::Sum);
            },
            {tp.conv_w.clone(), tp.conv_b.clone(), tp.fc1_w.clone(), tp.fc1_b.clone(), tp.fc2_w.clone(),
             tp.fc2_b.clone()},
            1e-6);
        CHECK(r.max_rel_error < 1e-5);
    }

    TEST_CASE("parameter count formula") {
        CHECK(Decoder::tcp_param_count(16) == 11393);
        CHECK(Decoder::tcp_param_count(16) == 9 * 16 * 64 + 64 + 2048 + 32 + 32 + 1);
        DecoderConfig dc;
        CHECK(Decoder::build(dc, 1).param_count().tcp == 11393);
    }
}

TEST_SUITE("adm") {
    TEST_CASE("eval mode returns the input untouched") {
        Rng rng(1);
        const Tensor x = uniform(rng, {2, 3, 4, 4}, -1.0, 1.0);
        const Tensor y = adm_apply(x, Tensor::full({2}, 0.3), DropoutMask::eval(), 0.1);
        CHECK(values(y) == values(x));
    }

    TEST_CASE("cold limit drops the unit for u close to one") {
        CHECK(relaxed_keep(0.5, 0.99, 1e-4) < 1e-12);
        CHECK(relaxed_keep(0.5, 0.01, 1e-4) > 1.0 - 1e-12);
    }

    TEST_CASE("Monte-Carlo mean of the relaxed mask") {
        Rng rng(2024);
        double sum = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) sum += relaxed_keep(0.3, rng.uniform(), 0.1);
        CHECK(std::abs(sum / n - 0.7) < 0.01);
    }

    TEST_CASE("lower c keeps fewer units on average") {
        const Tensor p = adm_rate(Tensor::from({2}, {0.1, 0.9}));
        Rng rng(77);
        double low = 0.0, high = 0.0;
        for (int i = 0; i < 20000; ++i) {
            const double u = rng.uniform();
            low += relaxed_keep(p.data()[0], u, 0.1);
            high += relaxed_keep(p.data()[1], u, 0.1);
        }
        CHECK(low < high);
    }

    TEST_CASE("inverted scaling and domain checks") {
        const Tensor x = Tensor::full({1, 1, 1, 2}, 2.0);
        const DropoutMask m{Tensor::from({1, 1, 1, 2}, {0.2, 0.6}), Mode::Train};
        const Tensor y = adm_apply(x, Tensor::full({1}, 0.3), m, 0.1);
        CHECK(y.data()[0] == doctest::Approx(2.0 * relaxed_keep(0.3, 0.2, 0.1) / 0.7).epsilon(1e-14));
        CHECK(y.data()[1] == doctest::Approx(2.0 * relaxed_keep(0.3, 0.6, 0.1) / 0.7).epsilon(1e-14));
        CHECK_THROWS_AS(adm_apply(x, Tensor::full({1}, 1.0), m, 0.1), DomainError);
        CHECK_THROWS_AS(adm_apply(x, Tensor::full({1}, 0.3), m, 0.0), DomainError);
        const DropoutMask bad{Tensor::zeros({1, 1, 2, 1}), Mode::Train};
        CHECK_THROWS_AS(adm_apply(x, Tensor::full({1}, 0.3), bad, 0.1), DimensionError);
    }

    TEST_CASE("finite differences in x and p") {
        Rng rng(3);
        const DropoutMask m = DropoutMask::draw({2, 2, 3, 3}, rng);
        const auto r = grad_check(
            [&m](std::span<const Tensor> in) {
                const Tensor y = adm_apply(in[0], in[1], m, 0.5);
                return ops::reduce_all(ops::mul(y, y), ops::Reduce::Sum);
            },
            {uniform(rng, {2, 2, 3, 3}, -1.0, 1.0), Tensor::from({2}, {0.2, 0.45})}, 1e-6);
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_SUITE("dcg") {
    TEST_CASE("zero SE weights with c = 1 halve the features") {
        DecoderConfig dc = small_config();
        Decoder dec = Decoder::build(dc, 1);
        SeParams se = dec.se_params(1);
        zero(se.fc1_w);
        zero(se.fc2_w);
        const Tensor f = random_pyramid(8, dc.in_widths, 2)[1];
        const Tensor y = dcg_apply(f, Tensor::full({2}, 1.0), se);
        for (std::size_t i = 0; i < f.numel(); ++i) CHECK(y.data()[i] == 0.5 * f.data()[i]);
    }

    TEST_CASE("multiplier is 0.3 a at c = 0 and 0.65 a at c = 0.5") {
        DecoderConfig dc = small_config();
        const Decoder dec = Decoder::build(dc, 2);
        const SeParams se = dec.se_params(2);
        const Tensor f = random_pyramid(9, dc.in_widths, 2)[2];
        const Tensor a = se_attention(f, se);
        const std::size_t C = f.dim(1), plane = f.dim(2) * f.dim(3);
        for (double c : {0.0, 0.5}) {
            const Tensor y = dcg_apply(f, Tensor::full({2}, c), se);
            const double factor = c == 0.0 ? 0.3 : 0.65;
            for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t ch = 0; ch < C; ++ch) {
                    const std::size_t k = (b * C + ch) * plane;
                    CHECK(y.data()[k] == doctest::Approx(factor * a.data()[b * C + ch] * f.data()[k]).epsilon(1e-14));
                }
        }
    }

    TEST_CASE("finite differences through the gate") {
        DecoderConfig dc = small_config();
        const Decoder dec = Decoder::build(dc, 3);
        const SeParams se = dec.se_params(1);
        const Tensor f = random_pyramid(10, dc.in_widths, 2)[1];
        const auto r = grad_check(
            [&](std::span<const Tensor> in) {
                const Tensor y = dcg_apply(in[0], in[1], SeParams{in[2], se.fc1_b, se.fc2_w, se.fc2_b});
                return ops::reduce_all(ops::mul(y, y), ops::Reduce::Sum);
            },
            {f.clone(), Tensor::from({2}, {0.2, 0.7}), se.fc1_w.clone()}, 1e-6);
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_SUITE("decode") {
    TEST_CASE("output shape and state ranges") {
        DecoderConfig dc = small_config();
        dc.num_classes = 4;
        const Decoder dec = Decoder::build(dc, 11);
        Rng rng(1);
        const DecodeResult r = dec.decode(random_pyramid(12, dc.in_widths, 3), Mode::Train, rng);
        CHECK(r.logits.shape() == Shape{3, 4, 32, 32});
        for (std::size_t b = 0; b < 3; ++b) {
            const double c = r.state.c.data()[b];
            CHECK(r.state.p.data()[b] == doctest::Approx(0.5 - 0.4 * c).epsilon(1e-14));
            CHECK(r.state.gate_scale.data()[b] == doctest::Approx(0.3 + 0.7 * c).epsilon(1e-14));
        }
    }

    TEST_CASE("same seed and input give bit-identical logits and c") {
        DecoderConfig dc = small_config();
        const FeaturePyramid p = random_pyramid(13, dc.in_widths, 2);
        Rng r1(5), r2(5);
        const DecodeResult a = Decoder::build(dc, 4).decode(p, Mode::Train, r1);
        const DecodeResult b = Decoder::build(dc, 4).decode(p, Mode::Train, r2);
        CHECK(values(a.logits) == values(b.logits));
        CHECK(values(a.state.c) == values(b.state.c));
    }

    TEST_CASE("eval mode ignores the noise source") {
        DecoderConfig dc = small_config();
        const Decoder dec = Decoder::build(dc, 4);
        const FeaturePyramid p = random_pyramid(14, dc.in_widths, 2);
        Rng r1(1), r2(999);
        CHECK(values(dec.decode(p, Mode::Eval, r1).logits) == values(dec.decode(p, Mode::Eval, r2).logits));
        Rng t1(1), t2(999);
        CHECK(values(dec.decode(p, Mode::Train, t1).logits) != values(dec.decode(p, Mode::Train, t2).logits));
    }

    TEST_CASE("all flags off and fixed_p = 0 is deterministic in train mode") {
        DecoderConfig dc = with_arm(small_config(), AblationArm::Baseline);
        dc.fixed_p = 0.0;
        const Decoder dec = Decoder::build(dc, 4);
        const FeaturePyramid p = random_pyramid(15, dc.in_widths, 2);
        Rng r1(1), r2(2);
        CHECK(values(dec.decode(p, Mode::Train, r1).logits) == values(dec.decode(p, Mode::Train, r2).logits));
        CHECK_FALSE(dec.decode(p, Mode::Eval, r1).state.c.defined());
    }

    TEST_CASE("pyramid mismatch") {
        DecoderConfig dc = small_config();
        const Decoder dec = Decoder::build(dc, 4);
        FeaturePyramid p = random_pyramid(16, dc.in_widths, 1);
        p.levels[2] = Tensor::zeros({1, 3, 4, 4});
        Rng rng(1);
        CHECK_THROWS_AS(dec.decode(p, Mode::Eval, rng), DimensionError);
    }

    TEST_CASE("adm without tcp is rejected") {
        DecoderConfig dc = small_config();
        dc.tcp = false;
        CHECK_THROWS_AS(Decoder::build(dc, 1), ConfigError);
    }

    TEST_CASE("pinned c = 0.5 equals the fixed baseline with gate 0.65") {
        DecoderConfig full = small_config();
        Decoder darn = Decoder::build(full, 21);
        zero(darn.param("tcp.fc2.w"));
        zero(darn.param("tcp.fc2.b"));

        DecoderConfig base = with_arm(small_config(), AblationArm::Baseline);
        base.dcg = true;  // SE attention without the head, scaled by a constant gate
        base.fixed_gate = 0.65;
        base.fixed_p = 0.3;
        const Decoder ref = Decoder::build(base, 21);

        const FeaturePyramid p = random_pyramid(22, full.in_widths, 3);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            Rng r1(8), r2(8);
            const DecodeResult a = darn.decode(p, mode, r1);
            const DecodeResult b = ref.decode(p, mode, r2);
            for (double c : a.state.c.data()) CHECK(c == 0.5);
            double worst = 0.0;
            for (std::size_t i = 0; i < a.logits.numel(); ++i)
                worst = std::max(worst, std::abs(a.logits.data()[i] - b.logits.data()[i]));
            CHECK(worst < 1e-10);
        }
    }
}

TEST_SUITE("parameters") {
    TEST_CASE("breakdown adds up and matches the tensors") {
        const Decoder dec = Decoder::build(DecoderConfig{}, 1);
        const ParamBreakdown b = dec.param_count();
        std::size_t n = 0;
        for (const auto& p : dec.parameters()) n += p.tensor.numel();
        CHECK(b.total() == n);
        // classifier: K*D + K
        CHECK(b.classifier == 3 * 64 + 3);
        // three SE blocks with reduction 4 on widths 32, 64, 128
        const auto se = [](std::size_t c) { return (c / 4) * c + c / 4 + c * (c / 4) + c; };
        CHECK(b.se == se(32) + se(64) + se(128));
    }

    TEST_CASE("disabled submodules count zero") {
        const Decoder dec = Decoder::build(with_arm(DecoderConfig{}, AblationArm::Baseline), 1);
        CHECK(dec.param_count().tcp == 0);
        CHECK(dec.param_count().se == 0);
    }

    TEST_CASE("baseline and full share every non-head tensor") {
        const Decoder full = Decoder::build(DecoderConfig{}, 9);
        const Decoder base = Decoder::build(with_arm(DecoderConfig{}, AblationArm::Baseline), 9);
        for (const auto& p : base.parameters()) {
            const Tensor& q = full.param(p.name);
            CHECK(q.shape() == p.tensor.shape());
            CHECK(values(q) == values(p.tensor));
        }
        const ParamBreakdown a = full.param_count(), b = base.param_count();
        CHECK(a.total() - b.total() == a.tcp + a.se);
    }

    TEST_CASE("ladder names and switches") {
        CHECK(kAblationLadder.size() == 5);
        CHECK(arm_name(AblationArm::TcpDcg) == "+ DCG (w/ TCP, No ADM)");
        const DecoderConfig d = with_arm(DecoderConfig{}, AblationArm::TcpDcg);
        CHECK(d.tcp);
        CHECK_FALSE(d.adm);
        CHECK(d.dcg);
    }
}

TEST_CASE("end-to-end gradient through decode and the loss") {
    DecoderConfig dc;
    dc.in_widths = {2, 3, 3, 4};
    dc.width = 3;
    dc.tcp_channels = 4;
    dc.tcp_hidden = 3;
    dc.temperature = 0.5;
    const Decoder dec = Decoder::build(dc, 17);
    const FeaturePyramid pyr = random_pyramid(18, dc.in_widths, 2, 16);
    Rng lr(19);
    LabelMask y{2, 16, 16, std::vector<std::uint8_t>(512)};
    for (auto& v : y.data) v = static_cast<std::uint8_t>(lr.below(3));

    std::vector<Tensor> inputs;
    for (const auto& p : dec.parameters()) inputs.push_back(p.tensor.clone());
    const auto names = dec.parameters();
    const auto r = grad_check(
        [&](std::span<const Tensor> in) {
            Decoder d = Decoder::build(dc, 17);
            for (std::size_t i = 0; i < names.size(); ++i) d.param(names[i].name) = in[i];
            Rng noise(1234);
            const DecodeResult out = d.decode(pyr, Mode::Train, noise);
            return total_loss(out.logits, y, out.state.c).total;
        },
        inputs, 1e-6);
    CHECK(r.max_rel_error < 1e-4);
}
