#pragma once

#include <cstddef>
#include <span>

// Convolution kernels behind ad::conv2d.
//
// Two implementations share one signature set:
//   serial::   direct nested loops; the reference the parallel path is tested against
//   parallel:: im2col + blocked GEMM, OpenMP over the batch
//
// Both are deterministic for a fixed thread count and the parallel weight
// gradient is additionally independent of the thread count (per-sample
// partials are reduced serially in batch order).
namespace darn::kernels {

struct ConvGeometry {
    std::size_t batch = 0;
    std::size_t in_ch = 0;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t out_h = 0;
    std::size_t out_w = 0;

    std::size_t input_size() const { return batch * in_ch * in_h * in_w; }
    std::size_t output_size() const { return batch * out_ch * out_h * out_w; }
    std::size_t weight_size() const { return out_ch * in_ch * kernel * kernel; }
};

// Fills out_h/out_w; throws GeometryError when the extent is non-integral or empty.
ConvGeometry make_conv_geometry(std::size_t batch, std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                                std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding);

// C[M,N] += A[M,K] * B[K,N], row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

namespace serial {
// bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
// Accumulates into grad_input.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
// Accumulates into grad_weight / grad_bias (grad_bias may be empty).
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);
}  // namespace parallel

int max_threads();

}  // namespace darn::kernels
