#include "mforge/datagen.hpp"
#include "mforge/kernels.hpp"
#include "mforge/objective.hpp"
#include "mforge/validation.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace mforge;

namespace {

Matrix points(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

void BM_Gram(benchmark::State& state) {
  const Matrix x = points(state.range(0), 4, 1);
  const KernelSpec k(1.0, 4);
  for (auto _ : state) benchmark::DoNotOptimize(gram(x, x, k));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Gram)->RangeMultiplier(2)->Range(128, 1024)->Complexity();

void BM_RffApply(benchmark::State& state) {
  const Matrix x = points(state.range(0), 4, 2);
  const RffMap map(KernelSpec(1.0, 4), 200, 3);
  for (auto _ : state) benchmark::DoNotOptimize(map.apply_batch(x));
}
BENCHMARK(BM_RffApply)->Arg(200)->Arg(2000);

// One stochastic objective evaluation with gradients on the hetero-IV design.
void BM_ObjectiveEvaluate(benchmark::State& state) {
  const Dataset d = gen_hetero_iv(state.range(0), 4);
  auto model = std::make_shared<IvResidualModel>(std::make_shared<HeteroIvFunction>());
  ObjectiveConfig cfg;
  cfg.features = std::make_shared<const RffMap>(median_kernel(d.joint()), 200, 5);
  const Instrument h = Instrument::rff(std::make_shared<const RffMap>(median_kernel(d.z), 200, 6), 1);
  const KmmObjective obj(model, cfg);
  const Batch emp = obj.prepare(d.x, d.z, h), ref = obj.prepare(d.x, d.z, h);
  const DualState beta = DualState::zero(cfg, h);
  const Vector theta = HeteroIvFunction::true_theta();
  for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate(theta, beta, emp, ref, true, true));
}
BENCHMARK(BM_ObjectiveEvaluate)->Arg(200)->Arg(1000);

void BM_Hsic(benchmark::State& state) {
  const Matrix r = points(state.range(0), 1, 7), z = points(state.range(0), 2, 8);
  for (auto _ : state) benchmark::DoNotOptimize(hsic(r, z));
}
BENCHMARK(BM_Hsic)->Arg(500)->Arg(2000);

}  // namespace
BENCHMARK_MAIN();
