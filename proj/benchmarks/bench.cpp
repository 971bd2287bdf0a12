#include <benchmark/benchmark.h>

#include "foe/diagram.hpp"
#include "foe/typing.hpp"

using namespace foe;

namespace {

OdometerSystem bernoulli(std::vector<Rational> w) {
  LevelSpec spec{{}, {static_cast<int>(w.size())}, 32};
  return OdometerSystem(spec, bernoulli_measure(spec, w));
}

const OdometerSystem& binary() {
  static const OdometerSystem s = bernoulli({Rational(2, 3), Rational(1, 3)});
  return s;
}

const OdometerSystem& ternary() {
  static const OdometerSystem s = bernoulli({Rational(4, 7), Rational(2, 7), Rational(1, 7)});
  return s;
}

void BM_RnDerivative(benchmark::State& state) {
  const Word w(16, 1);
  for (auto _ : state) benchmark::DoNotOptimize(rn_derivative(binary(), w, state.range(0)));
}
BENCHMARK(BM_RnDerivative)->Arg(1)->Arg(1000)->Arg(1 << 20);

void BM_PartitionExact(benchmark::State& state) {
  const Space& s = binary().space();
  const std::vector<Rational> targets{Rational(1, 3), Rational(2, 9), Rational(4, 9)};
  for (auto _ : state)
    benchmark::DoNotOptimize(partition_exact(s, binary().measure(), s.full(), targets));
}
BENCHMARK(BM_PartitionExact);

void BM_Classify(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(classify(ternary()));
}
BENCHMARK(BM_Classify);

void BM_BuildDiagram(benchmark::State& state) {
  DiagramOptions o;
  o.depth = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_diagram(binary(), ternary(), o));
}
BENCHMARK(BM_BuildDiagram)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_VerifyOE(benchmark::State& state) {
  DiagramOptions o;
  o.depth = static_cast<int>(state.range(0));
  const FinitaryOE oe = build_diagram(binary(), ternary(), o);
  for (auto _ : state) benchmark::DoNotOptimize(verify_oe(oe));
}
BENCHMARK(BM_VerifyOE)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_ArtifactRoundTrip(benchmark::State& state) {
  DiagramOptions o;
  o.depth = 2;
  const FinitaryOE oe = build_diagram(binary(), ternary(), o);
  for (auto _ : state) benchmark::DoNotOptimize(read_artifact(write_artifact(oe)));
}
BENCHMARK(BM_ArtifactRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
