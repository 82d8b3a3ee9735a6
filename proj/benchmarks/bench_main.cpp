#include "advconform/attack.hpp"
#include "advconform/conformal.hpp"
#include "advconform/experiment.hpp"
#include "advconform/train.hpp"

#include <benchmark/benchmark.h>

#include <numeric>

using namespace advconform;

namespace {

constexpr int kClasses = 5;
constexpr int kDim = 16;

const LabeledDataset& mixture()
{
  static const LabeledDataset ds = generate_gaussian_mixture(kClasses, kDim, 5000, 3.0, 11);
  return ds;
}

IndexList first_rows(std::size_t n)
{
  IndexList idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{ 0 });
  return idx;
}

void BM_Forward(benchmark::State& state)
{
  const Classifier model = Classifier::create(kDim, static_cast<int>(state.range(0)), kClasses, 1);
  const Vector x = mixture().sample(0);
  for (auto _ : state)
    benchmark::DoNotOptimize(model.forward(x));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(32);

void BM_GradParams(benchmark::State& state)
{
  const Classifier model = Classifier::create(kDim, static_cast<int>(state.range(0)), kClasses, 1);
  const Vector x = mixture().sample(0);
  for (auto _ : state)
    benchmark::DoNotOptimize(grad_params(model, x, 2));
}
BENCHMARK(BM_GradParams)->Arg(0)->Arg(32);

void BM_PerturbBatch(benchmark::State& state)
{
  const Classifier model = Classifier::create(kDim, 32, kClasses, 1);
  const IndexList idx = first_rows(static_cast<std::size_t>(state.range(0)));
  const Matrix x = mixture().gather(idx);
  const std::vector<int> y = mixture().gather_labels(idx);
  const AttackSpec spec{ Norm::linf, 8.0 / 255.0 };
  for (auto _ : state)
    benchmark::DoNotOptimize(perturb_batch(model, x, y, spec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PerturbBatch)->Arg(64)->Arg(1000);

void BM_TrainEpoch(benchmark::State& state)
{
  const IndexList idx = first_rows(3000);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.attack = AttackSpec{ Norm::linf, state.range(1) / 255.0 };
  for (auto _ : state) {
    const Classifier model = Classifier::create(kDim, static_cast<int>(state.range(0)), kClasses, 1);
    benchmark::DoNotOptimize(train(model, mixture(), idx, cfg));
  }
  state.SetItemsProcessed(state.iterations() * 3000);
}
BENCHMARK(BM_TrainEpoch)->Args({ 0, 0 })->Args({ 0, 8 })->Args({ 32, 0 })->Args({ 32, 8 })->Unit(benchmark::kMillisecond);

void BM_Calibrate(benchmark::State& state)
{
  const Classifier model = Classifier::create(kDim, 32, kClasses, 1);
  const IndexList idx = first_rows(1000);
  const auto kind = static_cast<ScoreKind>(state.range(0));
  const AttackSpec spec{ Norm::linf, 8.0 / 255.0 };
  for (auto _ : state)
    benchmark::DoNotOptimize(calibrate(model, mixture(), idx, 0.1, kind, spec, 5));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_Calibrate)->Arg(static_cast<int>(ScoreKind::hps))->Arg(static_cast<int>(ScoreKind::aps));

void BM_SweepReplicate(benchmark::State& state)
{
  SweepConfig cfg = default_sweep_config();
  cfg.hidden_width = static_cast<int>(state.range(0));
  cfg.seeds = { 0 };
  const LabeledDataset ds = load_dataset(cfg.data);
  for (auto _ : state)
    benchmark::DoNotOptimize(run_sweep(cfg, ds));
}
BENCHMARK(BM_SweepReplicate)->Arg(0)->Arg(32)->Unit(benchmark::kMillisecond);

} // namespace
BENCHMARK_MAIN();
