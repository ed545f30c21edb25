#include <benchmark/benchmark.h>

#include "diffcl/dataset.hpp"
#include "diffcl/graph.hpp"
#include "diffcl/losses.hpp"
#include "diffcl/model.hpp"
#include "diffcl/trainer.hpp"

namespace {

using namespace diffcl;

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

SynthDataset synth_for(std::size_t users_per_block) {
  SynthOptions o;
  o.users_per_block = users_per_block;
  o.items_per_block = users_per_block / 2;
  o.interactions_per_user = 20;
  // Uniform popularity so every item is drawn at the larger sizes.
  o.item_skew = 0.0;
  return synth_dataset(o, Rng(7));
}

void BM_Propagate(benchmark::State& state) {
  const auto synth = synth_for(static_cast<std::size_t>(state.range(0)));
  const auto g = build_norm_adjacency(synth.dataset);
  const DenseMatrix e0 = random_matrix(g.adjacency.rows(), 64, 1);
  for (auto _ : state) benchmark::DoNotOptimize(encode(g.adjacency, e0, 2));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.adjacency.nnz()) * 2);
}
BENCHMARK(BM_Propagate)->Arg(50)->Arg(200)->Arg(800);

void BM_KnnGraph(benchmark::State& state) {
  const DenseMatrix f = random_matrix(static_cast<std::size_t>(state.range(0)), 128, 2);
  for (auto _ : state) benchmark::DoNotOptimize(build_knn_graph(f, {10, false}));
}
BENCHMARK(BM_KnnGraph)->Arg(100)->Arg(400);

void BM_InfoNce(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = random_matrix(n, 64, 3), b = random_matrix(n, 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(infonce(a, b, 0.4));
}
BENCHMARK(BM_InfoNce)->Arg(64)->Arg(256);

void BM_TrainStep(benchmark::State& state) {
  const auto synth = synth_for(50);
  const auto graphs = build_graphs(synth.dataset, synth.features, {10, false});
  ModelOptions m;
  const VariantMask mask = state.range(0) ? VariantMask{} : VariantMask{false, false, false};
  const DiffClParams params = init_params(
      {synth.dataset.user_count(), synth.dataset.item_count(), synth.features.visual.cols(),
       synth.features.textual.cols()},
      m, Rng(1));
  Rng rng(2);
  const auto batch = sample_triplets(synth.dataset, 256, rng);
  DiffClParams grads = params.zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        batch_loss(params, synth.features, graphs, m, mask, batch, Rng(3), &grads));
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgNames({"full"})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
