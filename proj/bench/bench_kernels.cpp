// Serial reference vs parallel (im2col + GEMM, OpenMP) convolution kernels.
// Shapes follow the encoder and decoder layers at a 32x32 input, batch 4.

#include <benchmark/benchmark.h>

#include <vector>

#include "darn/kernels.hpp"
#include "darn/rng.hpp"

namespace k = darn::kernels;

namespace {

struct Problem {
    k::ConvGeometry g;
    std::vector<double> x, w, b, y, gy, gx, gw, gb;

    explicit Problem(const benchmark::State& st) {
        const auto c = static_cast<std::size_t>(st.range(0));
        const auto hw = static_cast<std::size_t>(st.range(1));
        const auto ks = static_cast<std::size_t>(st.range(2));
        g = k::make_conv_geometry(4, c, hw, hw, c, ks, 1, ks / 2);
        darn::Rng rng(1);
        const auto fill = [&](std::vector<double>& v, std::size_t n) {
            v.resize(n);
            for (auto& e : v) e = rng.uniform(-1.0, 1.0);
        };
        fill(x, g.input_size());
        fill(w, g.weight_size());
        fill(b, g.out_ch);
        fill(gy, g.output_size());
        y.assign(g.output_size(), 0.0);
        gx.assign(g.input_size(), 0.0);
        gw.assign(g.weight_size(), 0.0);
        gb.assign(g.out_ch, 0.0);
    }

    void flops(benchmark::State& st) const {
        const double f = 2.0 * static_cast<double>(g.output_size() * g.in_ch * g.kernel * g.kernel);
        st.counters["GFLOP/s"] = benchmark::Counter(f, benchmark::Counter::kIsIterationInvariantRate,
                                                    benchmark::Counter::kIs1000);
    }
};

template <bool Parallel>
void BM_forward(benchmark::State& st) {
    Problem p(st);
    for (auto _ : st) {
        if constexpr (Parallel)
            k::parallel::conv2d_forward(p.g, p.x, p.w, p.b, p.y);
        else
            k::serial::conv2d_forward(p.g, p.x, p.w, p.b, p.y);
        benchmark::DoNotOptimize(p.y.data());
    }
    p.flops(st);
}

template <bool Parallel>
void BM_backward(benchmark::State& st) {
    Problem p(st);
    for (auto _ : st) {
        if constexpr (Parallel) {
            k::parallel::conv2d_backward_input(p.g, p.gy, p.w, p.gx);
            k::parallel::conv2d_backward_weight(p.g, p.x, p.gy, p.gw, p.gb);
        } else {
            k::serial::conv2d_backward_input(p.g, p.gy, p.w, p.gx);
            k::serial::conv2d_backward_weight(p.g, p.x, p.gy, p.gw, p.gb);
        }
        benchmark::DoNotOptimize(p.gw.data());
    }
    p.flops(st);
}

void shapes(benchmark::internal::Benchmark* b) {
    b->ArgNames({"C", "HW", "k"});
    b->Args({16, 16, 3});
    b->Args({32, 8, 3});
    b->Args({64, 16, 3});
    b->Args({128, 2, 3});
    b->Args({64, 16, 1});
    b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_forward<false>)->Name("conv_forward/serial")->Apply(shapes);
BENCHMARK(BM_forward<true>)->Name("conv_forward/parallel")->Apply(shapes);
BENCHMARK(BM_backward<false>)->Name("conv_backward/serial")->Apply(shapes);
BENCHMARK(BM_backward<true>)->Name("conv_backward/parallel")->Apply(shapes);

BENCHMARK_MAIN();
