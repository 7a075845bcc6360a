#include <cmath>
#include <ostream>

#include "darn/commands.hpp"
#include "darn/gradcheck.hpp"
#include "darn/objectives.hpp"
#include "darn/ops.hpp"
#include "darn/rng.hpp"

namespace darn::cli {

namespace {

using Inputs = std::span<const Tensor>;

Tensor randn(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
}

// Values with |x| in [0.2, 1.2] and random sign, so relu kinks sit far from
// every finite-difference probe.
Tensor away_from_zero(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.2);
    return Tensor::from(std::move(shape), std::move(v));
}

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights, so every output coordinate
// contributes a distinct amount to the scalar.
ScalarFn weighted(std::function<Tensor(Inputs)> f, Shape out_shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = randn(rng, std::move(out_shape));
    return [f = std::move(f), w](Inputs in) { return ops::reduce_all(ops::mul(f(in), w), ops::Reduce::Sum); };
}

LabelMask random_labels(Rng& rng, std::size_t b, std::size_t h, std::size_t w, std::size_t k) {
    LabelMask m{b, h, w, std::vector<std::uint8_t>(b * h * w)};
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.below(k));
    return m;
}

// x^2 whose recorded backward returns x instead of 2x.
Tensor faulty_square(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * x.data()[i];
    Tensor out = Tensor::from(x.shape(), std::move(v));
    if (should_record({&x})) {
        Tape::active()->record("faulty_square", out, [x, out] {
            std::vector<double> g(x.numel());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = out.grad()[i] * x.data()[i];
            accumulate_grad(x, g);
        });
    }
    return out;
}

struct Case {
    std::string name;
    ScalarFn f;
    std::vector<Tensor> inputs;
    double eps = 1e-5;
};

std::vector<Case> build_cases(bool negative_control) {
    std::vector<Case> cases;
    Rng rng(20240611);

    cases.push_back({"conv2d (stride 1, pad 1)",
                     weighted([](Inputs in) { return ops::conv2d(in[0], in[1], in[2], 1, 1); }, {2, 3, 5, 5}, 1),
                     {randn(rng, {2, 2, 5, 5}), randn(rng, {3, 2, 3, 3}), randn(rng, {3})}});
    cases.push_back({"conv2d (stride 2, pad 1)",
                     weighted([](Inputs in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); }, {2, 3, 3, 3}, 2),
                     {randn(rng, {2, 2, 5, 5}), randn(rng, {3, 2, 3, 3}), randn(rng, {3})}});
    cases.push_back({"conv2d (1x1)",
                     weighted([](Inputs in) { return ops::conv2d(in[0], in[1], in[2], 1, 0); }, {2, 4, 3, 3}, 3),
                     {randn(rng, {2, 3, 3, 3}), randn(rng, {4, 3, 1, 1}), randn(rng, {4})}});
    cases.push_back({"linear", weighted([](Inputs in) { return ops::linear(in[0], in[1], in[2]); }, {3, 4}, 4),
                     {randn(rng, {3, 5}), randn(rng, {4, 5}), randn(rng, {4})}});
    cases.push_back({"pointwise relu", weighted([](Inputs in) { return ops::relu(in[0]); }, {2, 3, 4}, 5),
                     {away_from_zero(rng, {2, 3, 4})}});
    cases.push_back({"pointwise sigmoid", weighted([](Inputs in) { return ops::sigmoid(in[0]); }, {2, 3, 4}, 6),
                     {randn(rng, {2, 3, 4}, 2.0)}});
    cases.push_back({"pointwise log", weighted([](Inputs in) { return ops::log(in[0]); }, {2, 5}, 7),
                     {uniform(rng, {2, 5}, 0.5, 2.0)}});
    cases.push_back({"pointwise affine (neg, add_const, mul_const)",
                     weighted([](Inputs in) { return ops::mul_const(ops::add_const(ops::neg(in[0]), 0.7), -1.3); },
                              {2, 5}, 8),
                     {randn(rng, {2, 5})}});
    cases.push_back({"binary add/sub/mul",
                     weighted([](Inputs in) { return ops::mul(ops::add(in[0], in[1]), ops::sub(in[0], in[1])); },
                              {3, 4}, 9),
                     {randn(rng, {3, 4}), randn(rng, {3, 4})}});
    cases.push_back({"mul (aliased operands)", weighted([](Inputs in) { return ops::mul(in[0], in[0]); }, {3, 4}, 10),
                     {randn(rng, {3, 4})}});
    cases.push_back({"scale (broadcast)", weighted([](Inputs in) { return ops::scale(in[0], in[1]); }, {2, 3, 2, 2}, 11),
                     {randn(rng, {2, 3, 2, 2}), randn(rng, {2, 3})}});
    cases.push_back({"gap", weighted([](Inputs in) { return ops::gap(in[0]); }, {2, 3}, 12), {randn(rng, {2, 3, 4, 5})}});
    cases.push_back({"adaptive_avg_pool",
                     weighted([](Inputs in) { return ops::adaptive_avg_pool(in[0], 2, 3); }, {2, 2, 2, 3}, 13),
                     {randn(rng, {2, 2, 5, 7})}});
    cases.push_back({"resize_bilinear (up)",
                     weighted([](Inputs in) { return ops::resize_bilinear(in[0], 7, 6); }, {1, 2, 7, 6}, 14),
                     {randn(rng, {1, 2, 3, 4})}});
    cases.push_back({"resize_bilinear (down)",
                     weighted([](Inputs in) { return ops::resize_bilinear(in[0], 2, 3); }, {1, 2, 2, 3}, 15),
                     {randn(rng, {1, 2, 5, 7})}});
    cases.push_back({"reduce sum/mean/var",
                     [](Inputs in) {
                         Tensor s = ops::reduce(in[0], ops::Reduce::Sum, {1});
                         Tensor m = ops::reduce(in[0], ops::Reduce::Mean, {0, 2});
                         Tensor v = ops::reduce(in[0], ops::Reduce::Var, {2});
                         return ops::add(ops::add(ops::reduce_all(ops::mul(s, s), ops::Reduce::Sum),
                                                  ops::reduce_all(ops::mul(m, m), ops::Reduce::Sum)),
                                         ops::reduce_all(v, ops::Reduce::Mean));
                     },
                     {randn(rng, {2, 3, 4})}});
    cases.push_back({"pad2d", weighted([](Inputs in) { return ops::pad2d(in[0], 0, 1, 2, 1); }, {2, 2, 4, 6}, 23),
                     {randn(rng, {2, 2, 3, 3})}});
    cases.push_back({"concat_channels + reshape",
                     weighted([](Inputs in) { return ops::reshape(ops::concat_channels({in[0], in[1]}), {2, 20}); },
                              {2, 20}, 16),
                     {randn(rng, {2, 2, 2, 2}), randn(rng, {2, 3, 2, 2})}});

    const LabelMask y = random_labels(rng, 2, 4, 5, 3);
    cases.push_back({"cross_entropy", [y](Inputs in) { return cross_entropy(in[0], y); }, {randn(rng, {2, 3, 4, 5})}});
    cases.push_back({"dice_loss", [y](Inputs in) { return dice_loss(in[0], y); }, {randn(rng, {2, 3, 4, 5})}});
    cases.push_back({"complexity_loss (+1)", [](Inputs in) { return complexity_loss(in[0], 1.0); },
                     {uniform(rng, {5}, 0.05, 0.95)}});
    cases.push_back({"complexity_loss (-1)", [](Inputs in) { return complexity_loss(in[0], -1.0); },
                     {uniform(rng, {5}, 0.05, 0.95)}});

    cases.push_back({"tcp_forward",
                     weighted(
                         [](Inputs in) {
                             return tcp_forward(in[0], {in[1], in[2], in[3], in[4], in[5], in[6]});
                         },
                         {2}, 17),
                     {randn(rng, {2, 2, 4, 4}), randn(rng, {3, 2, 3, 3}, 0.5), randn(rng, {3}, 0.1), randn(rng, {4, 3}),
                      randn(rng, {4}, 0.1), randn(rng, {1, 4}), randn(rng, {1}, 0.1)}});
    cases.push_back({"adm_rate + gate_factor",
                     weighted([](Inputs in) { return ops::add(adm_rate(in[0]), ops::mul(gate_factor(in[0]), in[0])); },
                              {3}, 18),
                     {uniform(rng, {3}, 0.1, 0.9)}});
    {
        Rng nr(99);
        const DropoutMask mask = DropoutMask::draw({2, 3, 2, 2}, nr);
        DropoutMask train_mask = mask;
        train_mask.mode = Mode::Train;
        cases.push_back({"adm_apply (relaxed dropout, noise frozen)",
                         weighted([train_mask](Inputs in) { return adm_apply(in[0], in[1], train_mask, 0.5); },
                                  {2, 3, 2, 2}, 19),
                         {randn(rng, {2, 3, 2, 2}), uniform(rng, {2}, 0.2, 0.5)}});
    }
    cases.push_back({"se_attention",
                     weighted([](Inputs in) { return se_attention(in[0], {in[1], in[2], in[3], in[4]}); }, {2, 4}, 20),
                     {randn(rng, {2, 4, 3, 3}), randn(rng, {2, 4}), randn(rng, {2}, 0.1), randn(rng, {4, 2}),
                      randn(rng, {4}, 0.1)}});
    cases.push_back({"dcg_apply",
                     weighted([](Inputs in) { return dcg_apply(in[0], in[1], {in[2], in[3], in[4], in[5]}); },
                              {2, 4, 3, 3}, 21),
                     {randn(rng, {2, 4, 3, 3}), uniform(rng, {2}, 0.2, 0.8), randn(rng, {2, 4}), randn(rng, {2}, 0.1),
                      randn(rng, {4, 2}), randn(rng, {4}, 0.1)}});

    // End to end: frozen-encoder features -> full decoder (train mode, fixed
    // noise) -> total loss, differentiated w.r.t. every decoder parameter and
    // the features.
    {
        DecoderConfig dc;
        dc.in_widths = {3, 4, 4, 5};
        dc.width = 4;
        dc.num_classes = 3;
        dc.tcp_channels = 4;
        dc.tcp_hidden = 3;
        dc.se_reduction = 2;
        dc.temperature = 0.5;
        dc.adm_per_level = true;
        const Decoder dec = Decoder::build(dc, 7);
        FeaturePyramid pyr;
        pyr.input_h = pyr.input_w = 16;
        for (std::size_t l = 0; l < 4; ++l) {
            const std::size_t e = 8 >> l;
            pyr.levels[l] = uniform(rng, {2, dc.in_widths[l], e, e}, 0.0, 1.0);
        }
        const LabelMask ye = random_labels(rng, 2, 16, 16, 3);
        std::vector<Tensor> inputs(pyr.levels.begin(), pyr.levels.end());
        for (const auto& p : dec.parameters()) inputs.push_back(p.tensor);
        const std::size_t n_params = dec.parameters().size();
        const std::vector<NamedTensor> names = dec.parameters();
        cases.push_back({"end-to-end decode + total_loss (noise frozen)",
                         [dc, pyr, ye, n_params, names](Inputs in) {
                             Decoder d = Decoder::build(dc, 7);
                             for (std::size_t i = 0; i < n_params; ++i) {
                                 d.param(names[i].name) = in[4 + i];
                             }
                             FeaturePyramid p = pyr;
                             for (std::size_t l = 0; l < 4; ++l) p.levels[l] = in[l];
                             Rng noise(1234);
                             const DecodeResult r = d.decode(p, Mode::Train, noise);
                             return total_loss(r.logits, ye, r.state.c).total;
                         },
                         inputs,
                         // Thousands of relu units: a smaller probe keeps
                         // central differences from straddling a kink.
                         1e-6});
    }

    if (negative_control) {
        cases.push_back({"negative control (corrupted backward)",
                         weighted([](Inputs in) { return faulty_square(in[0]); }, {4}, 22),
                         {uniform(rng, {4}, 0.5, 1.5)}});
    }
    return cases;
}

}  // namespace

std::vector<GradCase> gradcheck_suite(bool negative_control) {
    std::vector<GradCase> out;
    for (auto& c : build_cases(negative_control)) {
        const GradCheckResult r = grad_check(c.f, c.inputs, c.eps);
        out.push_back({c.name, r.max_rel_error, r.coordinates, r.max_rel_error < kGradTolerance});
    }
    return out;
}

}  // namespace darn::cli
