#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "unetr/autodiff/kernels.hpp"
#include "unetr/autodiff/ops.hpp"
#include "unetr/model/encoder.hpp"
#include "unetr/model/unetr.hpp"

namespace ad = unetr::ad;
namespace kernels = unetr::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v)
        x = u(rng);
    return v;
}

ad::Tensor<float> random_tensor(ad::Shape shape, std::uint64_t seed)
{
    const std::size_t n = ad::numel(shape);
    return ad::Tensor<float>(std::move(shape), random_buffer(n, seed));
}

void BM_Gemm(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_buffer(n * n, 1);
    const auto b = random_buffer(n * n, 2);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        kernels::gemm(kernels::Trans::no, kernels::Trans::no, n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["FLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(216)->Arg(768);

void BM_Conv3d(benchmark::State& state)
{
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto d = static_cast<std::size_t>(state.range(1));
    kernels::ConvGeometry g;
    g.in_channels = c;
    g.out_channels = c;
    g.in_dims = {d, d, d};
    g.out_dims = {d, d, d};
    g.kernel = 3;
    g.padding = 1;
    const auto x = random_buffer(c * d * d * d, 3);
    const auto w = random_buffer(c * c * 27, 4);
    std::vector<float> y(c * d * d * d);
    for (auto _ : state) {
        kernels::conv3d_forward<float>(g, x.data(), w.data(), nullptr, y.data());
        benchmark::DoNotOptimize(y.data());
    }
    state.counters["FLOP/s"] =
        benchmark::Counter(2.0 * c * c * 27 * d * d * d, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3d)->Args({4, 32})->Args({8, 48})->Args({32, 12})->Unit(benchmark::kMillisecond);

void BM_Deconv3d(benchmark::State& state)
{
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto d = static_cast<std::size_t>(state.range(1));
    kernels::ConvGeometry g;
    g.in_channels = c;
    g.out_channels = c;
    g.in_dims = {d, d, d};
    g.out_dims = {2 * d, 2 * d, 2 * d};
    g.kernel = 2;
    g.stride = 2;
    const auto x = random_buffer(c * d * d * d, 5);
    const auto w = random_buffer(c * c * 8, 6);
    std::vector<float> y(c * 8 * d * d * d);
    for (auto _ : state) {
        kernels::deconv3d_forward<float>(g, x.data(), w.data(), nullptr, y.data());
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_Deconv3d)->Args({8, 24})->Args({32, 6})->Unit(benchmark::kMillisecond);

void BM_Attention(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t dh = 64;
    const auto q = random_tensor({n, dh}, 7);
    const auto k = random_tensor({n, dh}, 8);
    const auto v = random_tensor({n, dh}, 9);
    ad::NoGradScope<float> no_grad;
    for (auto _ : state)
        benchmark::DoNotOptimize(unetr::attend(q, k, v));
}
BENCHMARK(BM_Attention)->Arg(27)->Arg(216)->Arg(512);

void BM_Forward(benchmark::State& state)
{
    const unetr::ModelConfig cfg = state.range(0) == 0 ? unetr::ModelConfig::toy() : unetr::ModelConfig{};
    const unetr::UnetrModel<float> model(cfg, 1);
    const auto d = cfg.input_dims;
    const auto x = random_tensor({cfg.in_channels, d[0], d[1], d[2]}, 10);
    ad::NoGradScope<float> no_grad;
    for (auto _ : state)
        benchmark::DoNotOptimize(model.forward(x));
    state.SetLabel(state.range(0) == 0 ? "toy 32^3" : "ViT-B/16 96^3");
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(1);

void BM_TrainStep(benchmark::State& state)
{
    unetr::UnetrModel<float> model(unetr::ModelConfig::toy(), 2);
    const auto d = model.config().input_dims;
    const auto x = random_tensor({1, d[0], d[1], d[2]}, 11);
    for (auto _ : state) {
        model.zero_grad();
        ad::ComputationTape<float> tape;
        ad::TapeScope<float> scope(tape);
        const auto loss = ad::mean(model.forward(x));
        ad::backward(tape, loss);
        benchmark::DoNotOptimize(loss);
    }
    state.SetLabel("toy forward + backward");
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

} // namespace
BENCHMARK_MAIN();
