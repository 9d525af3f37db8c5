// Reference vs OpenMP kernels on the shapes the desk and full presets hit.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "dkan/kernels.hpp"
#include "dkan/util.hpp"

namespace {

using namespace dkan;
namespace k = dkan::kernels;

struct ConvCase {
  Tensor3 in;
  std::vector<double> weight, bias;
  k::ConvShape shape;
};

// args: input channels, output channels, spatial size, stride
ConvCase make_conv(const benchmark::State& state) {
  ConvCase c;
  c.shape = {static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), 3, static_cast<int>(state.range(3)), 1};
  const int n = static_cast<int>(state.range(2));
  Rng rng(1);
  c.in = Tensor3(c.shape.in_channels, n, n);
  for (auto& v : c.in.data) v = rng.uniform(-1, 1);
  c.weight.resize(c.shape.weight_count());
  for (auto& v : c.weight) v = rng.normal() * 0.1;
  c.bias.assign(c.shape.out_channels, 0.01);
  return c;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c = make_conv(state);
  Tensor3 out;
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_forward(c.in, c.weight, c.bias, c.shape, out);
    else
      k::reference::conv2d_forward(c.in, c.weight, c.bias, c.shape, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size()));
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  ConvCase c = make_conv(state);
  Tensor3 out, grad_in;
  k::reference::conv2d_forward(c.in, c.weight, c.bias, c.shape, out);
  Tensor3 grad_out = out;
  std::vector<double> gw(c.weight.size()), gb(c.bias.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_backward(c.in, c.weight, c.shape, grad_out, &grad_in, gw, gb);
    else
      k::reference::conv2d_backward(c.in, c.weight, c.shape, grad_out, &grad_in, gw, gb);
    benchmark::DoNotOptimize(grad_in.data.data());
  }
}

// args: input width, output width
template <bool Parallel>
void BM_Linear(benchmark::State& state) {
  const auto n_in = static_cast<std::size_t>(state.range(0)), n_out = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  std::vector<double> x(n_in), w(n_in * n_out), b(n_out), y(n_out);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : w) v = rng.normal() * 0.1;
  for (auto _ : state) {
    if constexpr (Parallel)
      k::linear_forward(x, w, b, y);
    else
      k::reference::linear_forward(x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

// first backbone layer at 64 px, an FPN output conv at desk P2 and full-size P3
#define CONV_ARGS ->Args({1, 16, 64, 2})->Args({16, 16, 16, 1})->Args({16, 16, 100, 1})->Unit(benchmark::kMicrosecond)

BENCHMARK(BM_ConvForward<false>) CONV_ARGS;
BENCHMARK(BM_ConvForward<true>) CONV_ARGS;
BENCHMARK(BM_ConvBackward<false>) CONV_ARGS;
BENCHMARK(BM_ConvBackward<true>) CONV_ARGS;
BENCHMARK(BM_Linear<false>)->Args({256, 64})->Args({64, 64});
BENCHMARK(BM_Linear<true>)->Args({256, 64})->Args({64, 64});

}  // namespace

BENCHMARK_MAIN();
