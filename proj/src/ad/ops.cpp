#include "darn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "darn/error.hpp"
#include "darn/kernels.hpp"

namespace darn::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

Tape& tape() { return *Tape::active(); }

}  // namespace

// ---------------------------------------------------------------------------
// conv2d / linear

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
    require_rank(input, 4, "conv2d");
    require_rank(weight, 4, "conv2d weight");
    if (weight.dim(1) != input.dim(1)) {
        throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                             std::to_string(input.dim(1)));
    }
    if (weight.dim(2) != weight.dim(3)) throw DimensionError("conv2d: only square kernels are supported");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match output channels");
    }
    const auto g = kernels::make_conv_geometry(input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                                               weight.dim(2), stride, padding);
    Tensor out = Tensor::zeros({g.batch, g.out_ch, g.out_h, g.out_w});
    kernels::parallel::conv2d_forward(g, input.data(), weight.data(),
                                      bias.defined() ? bias.data() : std::span<const double>{}, out.mutable_data());

    if (should_record({&input, &weight, &bias})) {
        tape().record("conv2d", out, [input, weight, bias, out, g]() mutable {
            const auto go = out.grad();
            if (input.requires_grad()) {
                kernels::parallel::conv2d_backward_input(g, go, weight.data(), input.mutable_grad());
            }
            const bool wg = weight.requires_grad();
            const bool bg = bias.defined() && bias.requires_grad();
            if (wg) {
                kernels::parallel::conv2d_backward_weight(g, input.data(), go, weight.mutable_grad(),
                                                          bg ? bias.mutable_grad() : std::span<double>{});
            } else if (bg) {
                auto gb = bias.mutable_grad();
                const std::size_t plane = g.out_h * g.out_w;
                for (std::size_t b = 0; b < g.batch; ++b)
                    for (std::size_t co = 0; co < g.out_ch; ++co) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < plane; ++p) acc += go[(b * g.out_ch + co) * plane + p];
                        gb[co] += acc;
                    }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear");
    require_rank(weight, 2, "linear weight");
    const std::size_t batch = input.dim(0);
    const std::size_t din = input.dim(1);
    const std::size_t dout = weight.dim(0);
    if (weight.dim(1) != din) {
        throw DimensionError("linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
                             shape_str(input.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout)) {
        throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(dout));
    }
    Tensor out = Tensor::zeros({batch, dout});
    {
        auto o = out.mutable_data();
        const auto x = input.data();
        const auto w = weight.data();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < dout; ++j) {
                double acc = bias.defined() ? bias.data()[j] : 0.0;
                for (std::size_t i = 0; i < din; ++i) acc += x[b * din + i] * w[j * din + i];
                o[b * dout + j] = acc;
            }
        }
    }
    if (should_record({&input, &weight, &bias})) {
        tape().record("linear", out, [input, weight, bias, out, batch, din, dout]() mutable {
            const auto go = out.grad();
            if (input.requires_grad()) {
                auto gx = input.mutable_grad();
                const auto w = weight.data();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < dout; ++j) {
                        const double gj = go[b * dout + j];
                        for (std::size_t i = 0; i < din; ++i) gx[b * din + i] += gj * w[j * din + i];
                    }
            }
            if (weight.requires_grad()) {
                auto gw = weight.mutable_grad();
                const auto x = input.data();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < dout; ++j) {
                        const double gj = go[b * dout + j];
                        for (std::size_t i = 0; i < din; ++i) gw[j * din + i] += gj * x[b * din + i];
                    }
            }
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.mutable_grad();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < dout; ++j) gb[j] += go[b * dout + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pointwise

namespace {
inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

const char* pointwise_name(Pointwise kind) {
    switch (kind) {
        case Pointwise::Relu: return "relu";
        case Pointwise::Sigmoid: return "sigmoid";
        case Pointwise::Log: return "log";
        case Pointwise::Neg: return "neg";
        case Pointwise::AddConst: return "add_const";
        case Pointwise::MulConst: return "mul_const";
    }
    return "pointwise";
}
}  // namespace

Tensor pointwise(const Tensor& input, Pointwise kind, double constant) {
    if (!input.defined()) throw DimensionError("pointwise: undefined tensor");
    const auto x = input.data();
    std::vector<double> y(x.size());
    switch (kind) {
        case Pointwise::Relu:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case Pointwise::Sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
            break;
        case Pointwise::Log:
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (!(x[i] > 0.0)) throw DomainError("log: non-positive input " + std::to_string(x[i]));
                y[i] = std::log(x[i]);
            }
            break;
        case Pointwise::Neg:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
            break;
        case Pointwise::AddConst:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + constant;
            break;
        case Pointwise::MulConst:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * constant;
            break;
    }
    Tensor out = Tensor::from(input.shape(), std::move(y));
    if (should_record({&input})) {
        tape().record(pointwise_name(kind), out, [input, out, kind, constant]() mutable {
            const auto go = out.grad();
            const auto xs = input.data();
            const auto ys = out.data();
            auto gx = input.mutable_grad();
            switch (kind) {
                case Pointwise::Relu:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xs[i] > 0.0 ? go[i] : 0.0;
                    break;
                case Pointwise::Sigmoid:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * ys[i] * (1.0 - ys[i]);
                    break;
                case Pointwise::Log:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] / xs[i];
                    break;
                case Pointwise::Neg:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= go[i];
                    break;
                case Pointwise::AddConst:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
                    break;
                case Pointwise::MulConst:
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * constant;
                    break;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// binary

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
    Tensor out = Tensor::from(a.shape(), std::move(y));
    if (should_record({&a, &b})) {
        tape().record("add", out, [a, b, out]() mutable {
            if (a.requires_grad()) accumulate_grad(a, out.grad());
            if (b.requires_grad()) accumulate_grad(b, out.grad());
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
    Tensor out = Tensor::from(a.shape(), std::move(y));
    if (should_record({&a, &b})) {
        tape().record("sub", out, [a, b, out]() mutable {
            const auto go = out.grad();
            if (a.requires_grad()) accumulate_grad(a, go);
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
    Tensor out = Tensor::from(a.shape(), std::move(y));
    if (should_record({&a, &b})) {
        tape().record("mul", out, [a, b, out]() mutable {
            const auto go = out.grad();
            // Read both operands before writing: a and b may share storage.
            std::vector<double> ga(go.size()), gb(go.size());
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] = go[i] * b.data()[i];
                gb[i] = go[i] * a.data()[i];
            }
            if (a.requires_grad()) accumulate_grad(a, ga);
            if (b.requires_grad()) accumulate_grad(b, gb);
        });
    }
    return out;
}

Tensor scale(const Tensor& x, const Tensor& s) {
    if (!x.defined() || !s.defined()) throw DimensionError("scale: undefined tensor");
    if (s.rank() > x.rank() || !std::equal(s.shape().begin(), s.shape().end(), x.shape().begin())) {
        throw DimensionError("scale: " + shape_str(s.shape()) + " is not a leading prefix of " +
                             shape_str(x.shape()));
    }
    const std::size_t groups = s.numel();
    const std::size_t inner = groups == 0 ? 0 : x.numel() / groups;
    std::vector<double> y(x.numel());
    for (std::size_t j = 0; j < groups; ++j) {
        const double sj = s.data()[j];
        for (std::size_t i = 0; i < inner; ++i) y[j * inner + i] = x.data()[j * inner + i] * sj;
    }
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (should_record({&x, &s})) {
        tape().record("scale", out, [x, s, out, groups, inner]() mutable {
            const auto go = out.grad();
            if (x.requires_grad()) {
                auto gx = x.mutable_grad();
                for (std::size_t j = 0; j < groups; ++j)
                    for (std::size_t i = 0; i < inner; ++i) gx[j * inner + i] += go[j * inner + i] * s.data()[j];
            }
            if (s.requires_grad()) {
                auto gs = s.mutable_grad();
                for (std::size_t j = 0; j < groups; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < inner; ++i) acc += go[j * inner + i] * x.data()[j * inner + i];
                    gs[j] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling / resampling

Tensor gap(const Tensor& input) {
    require_rank(input, 4, "gap");
    const std::size_t bc = input.dim(0) * input.dim(1);
    const std::size_t plane = input.dim(2) * input.dim(3);
    if (plane == 0) throw DimensionError("gap: empty spatial extent");
    std::vector<double> y(bc);
    for (std::size_t j = 0; j < bc; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += input.data()[j * plane + p];
        y[j] = acc / static_cast<double>(plane);
    }
    Tensor out = Tensor::from({input.dim(0), input.dim(1)}, std::move(y));
    if (should_record({&input})) {
        tape().record("gap", out, [input, out, bc, plane]() mutable {
            const auto go = out.grad();
            auto gx = input.mutable_grad();
            const double inv = 1.0 / static_cast<double>(plane);
            for (std::size_t j = 0; j < bc; ++j)
                for (std::size_t p = 0; p < plane; ++p) gx[j * plane + p] += go[j] * inv;
        });
    }
    return out;
}

namespace {
struct Bin {
    std::size_t begin;
    std::size_t end;
};
std::vector<Bin> adaptive_bins(std::size_t in, std::size_t out) {
    std::vector<Bin> bins(out);
    for (std::size_t i = 0; i < out; ++i) {
        bins[i].begin = (i * in) / out;
        bins[i].end = ((i + 1) * in + out - 1) / out;
    }
    return bins;
}
}  // namespace

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    require_rank(input, 4, "adaptive_avg_pool");
    if (out_h == 0 || out_w == 0) throw GeometryError("adaptive_avg_pool: output extent must be positive");
    const std::size_t bc = input.dim(0) * input.dim(1);
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (h == 0 || w == 0) throw GeometryError("adaptive_avg_pool: empty input");
    const auto ybins = adaptive_bins(h, out_h);
    const auto xbins = adaptive_bins(w, out_w);
    std::vector<double> y(bc * out_h * out_w);
    for (std::size_t j = 0; j < bc; ++j) {
        const double* src = input.data().data() + j * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double acc = 0.0;
                for (std::size_t iy = ybins[oy].begin; iy < ybins[oy].end; ++iy)
                    for (std::size_t ix = xbins[ox].begin; ix < xbins[ox].end; ++ix) acc += src[iy * w + ix];
                const double area = static_cast<double>((ybins[oy].end - ybins[oy].begin) *
                                                        (xbins[ox].end - xbins[ox].begin));
                y[(j * out_h + oy) * out_w + ox] = acc / area;
            }
    }
    Tensor out = Tensor::from({input.dim(0), input.dim(1), out_h, out_w}, std::move(y));
    if (should_record({&input})) {
        tape().record("adaptive_avg_pool", out, [input, out, bc, h, w, out_h, out_w, ybins, xbins]() mutable {
            const auto go = out.grad();
            auto gx = input.mutable_grad();
            for (std::size_t j = 0; j < bc; ++j)
                for (std::size_t oy = 0; oy < out_h; ++oy)
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const double area = static_cast<double>((ybins[oy].end - ybins[oy].begin) *
                                                                (xbins[ox].end - xbins[ox].begin));
                        const double g = go[(j * out_h + oy) * out_w + ox] / area;
                        for (std::size_t iy = ybins[oy].begin; iy < ybins[oy].end; ++iy)
                            for (std::size_t ix = xbins[ox].begin; ix < xbins[ox].end; ++ix)
                                gx[j * h * w + iy * w + ix] += g;
                    }
        });
    }
    return out;
}

namespace {
struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;  // weight of `hi`
};

// Half-pixel source coordinate, clamped at the low edge.
std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = scale * (static_cast<double>(i) + 0.5) - 0.5;
        if (src < 0.0) src = 0.0;
        std::size_t lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = lo + (lo < in - 1 ? 1 : 0);
        taps[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}
}  // namespace

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    require_rank(input, 4, "resize_bilinear");
    if (out_h == 0 || out_w == 0) throw GeometryError("resize_bilinear: output extent must be positive");
    const std::size_t bc = input.dim(0) * input.dim(1);
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (h == 0 || w == 0) throw GeometryError("resize_bilinear: empty input");
    const bool identity = (h == out_h && w == out_w);
    const auto ty = bilinear_taps(h, out_h);
    const auto tx = bilinear_taps(w, out_w);
    std::vector<double> y(bc * out_h * out_w);
    if (identity) {
        std::copy(input.data().begin(), input.data().end(), y.begin());
    } else {
        for (std::size_t j = 0; j < bc; ++j) {
            const double* src = input.data().data() + j * h * w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const auto& a = ty[oy];
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const auto& b = tx[ox];
                    const double top = (1.0 - b.frac) * src[a.lo * w + b.lo] + b.frac * src[a.lo * w + b.hi];
                    const double bot = (1.0 - b.frac) * src[a.hi * w + b.lo] + b.frac * src[a.hi * w + b.hi];
                    y[(j * out_h + oy) * out_w + ox] = (1.0 - a.frac) * top + a.frac * bot;
                }
            }
        }
    }
    Tensor out = Tensor::from({input.dim(0), input.dim(1), out_h, out_w}, std::move(y));
    if (should_record({&input})) {
        tape().record("resize_bilinear", out, [input, out, bc, h, w, out_h, out_w, ty, tx, identity]() mutable {
            const auto go = out.grad();
            auto gx = input.mutable_grad();
            if (identity) {
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
                return;
            }
            for (std::size_t j = 0; j < bc; ++j) {
                double* dst = gx.data() + j * h * w;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto& a = ty[oy];
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto& b = tx[ox];
                        const double g = go[(j * out_h + oy) * out_w + ox];
                        dst[a.lo * w + b.lo] += g * (1.0 - a.frac) * (1.0 - b.frac);
                        dst[a.lo * w + b.hi] += g * (1.0 - a.frac) * b.frac;
                        dst[a.hi * w + b.lo] += g * a.frac * (1.0 - b.frac);
                        dst[a.hi * w + b.hi] += g * a.frac * b.frac;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

Tensor reduce(const Tensor& input, Reduce kind, const std::vector<std::size_t>& axes) {
    if (!input.defined()) throw DimensionError("reduce: undefined tensor");
    const auto& shape = input.shape();
    std::vector<bool> reduced(shape.size(), false);
    for (auto ax : axes) {
        if (ax >= shape.size()) throw DimensionError("reduce: axis " + std::to_string(ax) + " out of range");
        if (reduced[ax]) throw DimensionError("reduce: duplicate axis " + std::to_string(ax));
        if (shape[ax] == 0) throw DimensionError("reduce: empty reduction axis " + std::to_string(ax));
        reduced[ax] = true;
    }
    if (input.numel() == 0) throw DimensionError("reduce: empty tensor");
    Shape out_shape;
    for (std::size_t a = 0; a < shape.size(); ++a)
        if (!reduced[a]) out_shape.push_back(shape[a]);

    // Output slot of every input element.
    const std::size_t n = input.numel();
    std::vector<std::size_t> slot(n);
    {
        std::vector<std::size_t> idx(shape.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t o = 0;
            for (std::size_t a = 0; a < shape.size(); ++a)
                if (!reduced[a]) o = o * shape[a] + idx[a];
            slot[i] = o;
            for (std::size_t a = shape.size(); a-- > 0;) {
                if (++idx[a] < shape[a]) break;
                idx[a] = 0;
            }
        }
    }
    const std::size_t groups = shape_numel(out_shape);
    const double count = static_cast<double>(n / groups);
    std::vector<double> sum(groups, 0.0);
    for (std::size_t i = 0; i < n; ++i) sum[slot[i]] += input.data()[i];
    std::vector<double> mean(groups);
    for (std::size_t j = 0; j < groups; ++j) mean[j] = sum[j] / count;

    std::vector<double> y(groups);
    switch (kind) {
        case Reduce::Sum: y = sum; break;
        case Reduce::Mean: y = mean; break;
        case Reduce::Var: {
            std::fill(y.begin(), y.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = input.data()[i] - mean[slot[i]];
                y[slot[i]] += d * d;
            }
            for (auto& v : y) v /= count;
            break;
        }
    }
    Tensor out = Tensor::from(out_shape, std::move(y));
    if (should_record({&input})) {
        const char* name = kind == Reduce::Sum ? "reduce_sum" : kind == Reduce::Mean ? "reduce_mean" : "reduce_var";
        tape().record(name, out, [input, out, kind, slot = std::move(slot), mean = std::move(mean), count]() mutable {
            const auto go = out.grad();
            auto gx = input.mutable_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const double g = go[slot[i]];
                switch (kind) {
                    case Reduce::Sum: gx[i] += g; break;
                    case Reduce::Mean: gx[i] += g / count; break;
                    case Reduce::Var: gx[i] += g * 2.0 * (input.data()[i] - mean[slot[i]]) / count; break;
                }
            }
        });
    }
    return out;
}

Tensor reduce_all(const Tensor& input, Reduce kind) {
    std::vector<std::size_t> axes(input.rank());
    for (std::size_t a = 0; a < axes.size(); ++a) axes[a] = a;
    return reduce(input, kind, axes);
}

// ---------------------------------------------------------------------------
// structural

Tensor concat_channels(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
    for (const auto& t : inputs) require_rank(t, 4, "concat_channels");
    const std::size_t batch = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
    std::size_t channels = 0;
    for (const auto& t : inputs) {
        if (t.dim(0) != batch || t.dim(2) != h || t.dim(3) != w) {
            throw DimensionError("concat_channels: incompatible shape " + shape_str(t.shape()));
        }
        channels += t.dim(1);
    }
    const std::size_t plane = h * w;
    std::vector<double> y(batch * channels * plane);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& t : inputs) {
        offsets.push_back(off);
        const std::size_t block = t.dim(1) * plane;
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(t.data().data() + b * block, block, y.data() + b * channels * plane + off * plane);
        off += t.dim(1);
    }
    Tensor out = Tensor::from({batch, channels, h, w}, std::move(y));
    bool any = false;
    for (const auto& t : inputs) any = any || should_record({&t});
    if (any) {
        tape().record("concat_channels", out, [inputs, out, offsets, batch, channels, plane]() mutable {
            const auto go = out.grad();
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                auto& t = inputs[k];
                if (!t.requires_grad()) continue;
                auto gx = t.mutable_grad();
                const std::size_t block = t.dim(1) * plane;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* src = go.data() + b * channels * plane + offsets[k] * plane;
                    for (std::size_t i = 0; i < block; ++i) gx[b * block + i] += src[i];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& input, Shape shape) {
    if (!input.defined()) throw DimensionError("reshape: undefined tensor");
    if (shape_numel(shape) != input.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::from(std::move(shape), std::vector<double>(input.data().begin(), input.data().end()));
    if (should_record({&input})) {
        tape().record("reshape", out, [input, out]() mutable { accumulate_grad(input, out.grad()); });
    }
    return out;
}

Tensor pad2d(const Tensor& input, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
    if (!input.defined() || input.rank() != 4) throw DimensionError("pad2d: expected [B,C,H,W]");
    const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = h + top + bottom, ow = w + left + right;
    std::vector<double> v(planes * oh * ow, 0.0);
    const auto x = input.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((p * h + y) * w), w,
                        v.begin() + static_cast<std::ptrdiff_t>((p * oh + y + top) * ow + left));
    Tensor out = Tensor::from({input.dim(0), input.dim(1), oh, ow}, std::move(v));
    if (should_record({&input})) {
        tape().record("pad2d", out, [input, out, planes, h, w, oh, ow, top, left] {
            std::vector<double> g(planes * h * w);
            const auto go = out.grad();
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t y = 0; y < h; ++y)
                    std::copy_n(go.begin() + static_cast<std::ptrdiff_t>((p * oh + y + top) * ow + left), w,
                                g.begin() + static_cast<std::ptrdiff_t>((p * h + y) * w));
            accumulate_grad(input, g);
        });
    }
    return out;
}

}  // namespace darn::ops
