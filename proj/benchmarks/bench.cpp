// Microbenchmarks for the hot paths of target-space training: dense products,
// the regularized least-squares solve, the full mapping, and one reverse
// sweep. Run with --benchmark_filter=... to narrow.

#include "tsdl/ffnn.hpp"
#include "tsdl/matrix.hpp"
#include "tsdl/tape.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

tsdl::Matrix random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  tsdl::Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void bm_matmul(benchmark::State& state) {
  const int n = int(state.range(0));
  const tsdl::Matrix a = random_matrix(n, n, 1);
  const tsdl::Matrix b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tsdl::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n) * n * n);
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(128)->Arg(512);

void bm_reg_pseudoinverse(benchmark::State& state) {
  const int rows = int(state.range(0));
  const int cols = int(state.range(1));
  const tsdl::Matrix a = random_matrix(rows, cols, 3);
  for (auto _ : state) benchmark::DoNotOptimize(tsdl::reg_pseudoinverse(a, 0.01));
}
BENCHMARK(bm_reg_pseudoinverse)->Args({16, 194})->Args({194, 16})->Args({73, 6272});

void bm_scu_mapping(benchmark::State& state) {
  tsdl::NetworkSpec spec;
  spec.layer_widths = {2, 5, 5, 5, 2};
  spec.all_shortcuts = true;
  const tsdl::Matrix xbar = random_matrix(2, 194, 4);
  const tsdl::TargetParams t = tsdl::init_targets(spec, xbar, 1.0, 5);
  for (auto _ : state)
    benchmark::DoNotOptimize(tsdl::targets_to_weights_scu(spec, t, 0.001));
}
BENCHMARK(bm_scu_mapping);

void bm_tape_backward(benchmark::State& state) {
  tsdl::NetworkSpec spec;
  spec.layer_widths = {2, 5, 5, 5, 2};
  spec.all_shortcuts = true;
  const tsdl::Matrix x = random_matrix(2, 194, 6);
  tsdl::Matrix labels(2, 194);
  for (int i = 0; i < 194; ++i) labels(i % 2, i) = 1.0;
  const tsdl::TargetParams t = tsdl::init_targets(spec, x, 1.0, 7);
  for (auto _ : state) {
    tsdl::Tape tape;
    auto map = tsdl::tape_targets_to_weights(tape, spec, t, 0.001, true);
    auto y = tsdl::tape_forward(tape, spec, map.weights, x);
    auto loss = tsdl::tape_loss(tape, spec.output_head, y, labels);
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(bm_tape_backward);

}  // namespace

BENCHMARK_MAIN();
