#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "darn/kernels.hpp"

namespace darn::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {
constexpr std::size_t kBlockK = 128;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a, const double* __restrict b,
             double* __restrict c) {
    for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
        const std::size_t k1 = std::min(k, k0 + kBlockK);
        for (std::size_t i = 0; i < m; ++i) {
            double* __restrict crow = c + i * n;
            const double* arow = a + i * k;
            for (std::size_t kk = k0; kk < k1; ++kk) {
                const double aik = arow[kk];
                if (aik == 0.0) continue;
                const double* __restrict brow = b + kk * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
            }
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a, const double* __restrict b,
             double* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[j * k + kk];
            c[i * n + j] += acc;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a, const double* __restrict b,
             double* __restrict c) {
    for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
        const std::size_t k1 = std::min(k, k0 + kBlockK);
        for (std::size_t i = 0; i < m; ++i) {
            double* __restrict crow = c + i * n;
            for (std::size_t kk = k0; kk < k1; ++kk) {
                const double aki = a[kk * m + i];
                if (aki == 0.0) continue;
                const double* __restrict brow = b + kk * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
            }
        }
    }
}

namespace parallel {

namespace {

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// col[(ci*k + ky)*k + kx][oy*out_w + ox]
void im2col(const ConvGeometry& g, const double* img, double* col) {
    const std::size_t k = g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* dst = col + ((ci * k + ky) * k + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    double* row = dst + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        std::fill(row, row + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                        row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? 0.0
                                                                                        : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* col, double* img) {
    const std::size_t k = g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* srcp = col + ((ci * k + ky) * k + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    double* dst = img + (ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
                    const double* row = srcp + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                        dst[static_cast<std::size_t>(ix)] += row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
    const std::size_t rows = g.in_ch * g.kernel * g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
    const std::size_t out_stride = g.out_ch * plane;
    const bool pointwise = is_pointwise(g);
    const auto batch = static_cast<std::ptrdiff_t>(g.batch);

#pragma omp parallel
    {
        std::vector<double> col(pointwise ? 0 : rows * plane);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < batch; ++b) {
            const double* img = input.data() + static_cast<std::size_t>(b) * in_stride;
            double* out = output.data() + static_cast<std::size_t>(b) * out_stride;
            for (std::size_t co = 0; co < g.out_ch; ++co) {
                std::fill(out + co * plane, out + (co + 1) * plane, bias.empty() ? 0.0 : bias[co]);
            }
            const double* cols = img;
            if (!pointwise) {
                im2col(g, img, col.data());
                cols = col.data();
            }
            gemm_nn(g.out_ch, plane, rows, weight.data(), cols, out);
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
    const std::size_t rows = g.in_ch * g.kernel * g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
    const std::size_t out_stride = g.out_ch * plane;
    const bool pointwise = is_pointwise(g);
    const auto batch = static_cast<std::ptrdiff_t>(g.batch);

#pragma omp parallel
    {
        std::vector<double> col(pointwise ? 0 : rows * plane);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < batch; ++b) {
            const double* gout = grad_output.data() + static_cast<std::size_t>(b) * out_stride;
            double* gin = grad_input.data() + static_cast<std::size_t>(b) * in_stride;
            if (pointwise) {
                gemm_tn(rows, plane, g.out_ch, weight.data(), gout, gin);
            } else {
                std::fill(col.begin(), col.end(), 0.0);
                gemm_tn(rows, plane, g.out_ch, weight.data(), gout, col.data());
                col2im_add(g, col.data(), gin);
            }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
    const std::size_t rows = g.in_ch * g.kernel * g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
    const std::size_t out_stride = g.out_ch * plane;
    const std::size_t wsize = g.out_ch * rows;
    const auto batch = static_cast<std::ptrdiff_t>(g.batch);

    std::vector<double> partial(g.batch * wsize, 0.0);
#pragma omp parallel
    {
        std::vector<double> col(rows * plane);
        std::vector<double> col_t(plane * rows);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < batch; ++b) {
            const double* img = input.data() + static_cast<std::size_t>(b) * in_stride;
            const double* gout = grad_output.data() + static_cast<std::size_t>(b) * out_stride;
            if (is_pointwise(g)) {
                std::copy(img, img + rows * plane, col.begin());
            } else {
                im2col(g, img, col.data());
            }
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t p = 0; p < plane; ++p) col_t[p * rows + r] = col[r * plane + p];
            }
            gemm_nn(g.out_ch, rows, plane, gout, col_t.data(), partial.data() + static_cast<std::size_t>(b) * wsize);
        }
    }
    for (std::size_t b = 0; b < g.batch; ++b) {
        const double* src = partial.data() + b * wsize;
        for (std::size_t i = 0; i < wsize; ++i) grad_weight[i] += src[i];
    }
    if (!grad_bias.empty()) {
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t co = 0; co < g.out_ch; ++co) {
                const double* gout = grad_output.data() + b * out_stride + co * plane;
                double acc = 0.0;
                for (std::size_t p = 0; p < plane; ++p) acc += gout[p];
                grad_bias[co] += acc;
            }
        }
    }
}

}  // namespace parallel
}  // namespace darn::kernels
