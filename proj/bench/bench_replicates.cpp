// Replicate throughput: OpenMP closed-form path against the serial
// reference and the per-sample tape.

#include <benchmark/benchmark.h>

#include "dreg/replicates.hpp"

namespace {

using namespace dreg;

struct Setup {
  ToyModel model{ToyConfig{4}};
  ToyTrial trial = make_toy_trial(model, 0.01, 1, 0);
};

ReplicatePlan make_plan(std::size_t k, std::size_t n) {
  ReplicatePlan plan;
  for (const char* s : {"IWAE", "IWAE-DReG", "RWS-DReG", "JVI1-DReG"})
    plan.estimators.push_back(EstimatorSpec::parse(s));
  plan.k = k;
  plan.n = n;
  plan.seed = 3;
  plan.stream = stream_id(StreamTag::kNoise, 0);
  return plan;
}

void run(benchmark::State& state, Execution exec, WeightSource source) {
  static const Setup s;
  const ReplicatePlan plan = make_plan(static_cast<std::size_t>(state.range(0)), 200);
  for (auto _ : state) {
    auto r = run_replicates(s.model, s.trial.params, s.trial.x, plan, exec, source);
    benchmark::DoNotOptimize(r.phi.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(plan.n));
  state.counters["threads"] = exec == Execution::kParallel ? parallel_threads() : 1;
}

void BM_ParallelClosedForm(benchmark::State& st) { run(st, Execution::kParallel, WeightSource::kAuto); }
void BM_SerialClosedForm(benchmark::State& st) { run(st, Execution::kSerial, WeightSource::kAuto); }
void BM_ParallelTape(benchmark::State& st) { run(st, Execution::kParallel, WeightSource::kTape); }
void BM_SerialTape(benchmark::State& st) { run(st, Execution::kSerial, WeightSource::kTape); }

BENCHMARK(BM_ParallelClosedForm)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SerialClosedForm)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParallelTape)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SerialTape)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
