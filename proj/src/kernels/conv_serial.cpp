#include <string>

#include "darn/error.hpp"
#include "darn/kernels.hpp"

namespace darn::kernels {

ConvGeometry make_conv_geometry(std::size_t batch, std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                                std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (kernel == 0 || kernel % 2 == 0) throw GeometryError("conv2d: kernel size must be odd, got " + std::to_string(kernel));
    if (stride == 0) throw GeometryError("conv2d: stride must be positive");
    const std::size_t padded_h = in_h + 2 * padding;
    const std::size_t padded_w = in_w + 2 * padding;
    if (padded_h < kernel || padded_w < kernel) throw GeometryError("conv2d: kernel larger than padded input");
    if ((padded_h - kernel) % stride != 0 || (padded_w - kernel) % stride != 0) {
        throw GeometryError("conv2d: output extent (" + std::to_string(padded_h) + "-" + std::to_string(kernel) + ")/" +
                            std::to_string(stride) + "+1 is not integral");
    }
    ConvGeometry g;
    g.batch = batch;
    g.in_ch = in_ch;
    g.in_h = in_h;
    g.in_w = in_w;
    g.out_ch = out_ch;
    g.kernel = kernel;
    g.stride = stride;
    g.padding = padding;
    g.out_h = (padded_h - kernel) / stride + 1;
    g.out_w = (padded_w - kernel) / stride + 1;
    return g;
}

namespace serial {

namespace {
// Input coordinate for output position `o` and kernel tap `k`; false when it
// falls into the zero padding.
inline bool source_index(std::size_t o, std::size_t k, std::size_t stride, std::size_t padding, std::size_t extent,
                         std::size_t& out) {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(padding);
    if (s < 0 || s >= static_cast<std::ptrdiff_t>(extent)) return false;
    out = static_cast<std::size_t>(s);
    return true;
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
    const std::size_t kk = g.kernel;
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t co = 0; co < g.out_ch; ++co) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
                        for (std::size_t ky = 0; ky < kk; ++ky) {
                            std::size_t iy;
                            if (!source_index(oy, ky, g.stride, g.padding, g.in_h, iy)) continue;
                            for (std::size_t kx = 0; kx < kk; ++kx) {
                                std::size_t ix;
                                if (!source_index(ox, kx, g.stride, g.padding, g.in_w, ix)) continue;
                                acc += input[((b * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix] *
                                       weight[((co * g.in_ch + ci) * kk + ky) * kk + kx];
                            }
                        }
                    }
                    output[((b * g.out_ch + co) * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
    const std::size_t kk = g.kernel;
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t co = 0; co < g.out_ch; ++co) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const double go = grad_output[((b * g.out_ch + co) * g.out_h + oy) * g.out_w + ox];
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
                        for (std::size_t ky = 0; ky < kk; ++ky) {
                            std::size_t iy;
                            if (!source_index(oy, ky, g.stride, g.padding, g.in_h, iy)) continue;
                            for (std::size_t kx = 0; kx < kk; ++kx) {
                                std::size_t ix;
                                if (!source_index(ox, kx, g.stride, g.padding, g.in_w, ix)) continue;
                                grad_input[((b * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix] +=
                                    go * weight[((co * g.in_ch + ci) * kk + ky) * kk + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
    const std::size_t kk = g.kernel;
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t co = 0; co < g.out_ch; ++co) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const double go = grad_output[((b * g.out_ch + co) * g.out_h + oy) * g.out_w + ox];
                    if (!grad_bias.empty()) grad_bias[co] += go;
                    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
                        for (std::size_t ky = 0; ky < kk; ++ky) {
                            std::size_t iy;
                            if (!source_index(oy, ky, g.stride, g.padding, g.in_h, iy)) continue;
                            for (std::size_t kx = 0; kx < kk; ++kx) {
                                std::size_t ix;
                                if (!source_index(ox, kx, g.stride, g.padding, g.in_w, ix)) continue;
                                grad_weight[((co * g.in_ch + ci) * kk + ky) * kk + kx] +=
                                    go * input[((b * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace serial
}  // namespace darn::kernels
