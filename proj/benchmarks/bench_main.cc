// Copyright 2026 The TrajLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "trajlm/corpus.h"
#include "trajlm/intervene.h"
#include "trajlm/model.h"
#include "trajlm/objective.h"
#include "trajlm/synth.h"
#include "trajlm/vocab.h"

namespace {

using namespace trajlm;

struct Fixture {
  Vocabulary vocab;
  std::vector<EncodedParticipant> cohort;
  Model model;

  explicit Fixture(int n_participants) {
    GeneratorConfig g = GeneratorConfig::desk_default(3);
    g.n_participants = n_participants;
    const GeneratedCohort c = generate(g);
    vocab = build_vocabulary(collect_raw_modalities(c.records));
    for (const auto& r : c.records) cohort.push_back(encode_participant(r, vocab, 512));
    ModelConfig mc = ModelConfig::for_vocabulary(vocab, 64, 2, 2);
    mc.dropout = 0.0;
    model = Model::init(mc, 1);
  }
};

const Fixture& fixture() {
  static const Fixture f(64);
  return f;
}

void BM_Forward(benchmark::State& state) {
  const Fixture& f = fixture();
  TokenSequence seq = f.cohort[0].seq;
  const int len = std::min(static_cast<int>(state.range(0)), seq.size());
  seq = seq.prefix(len);
  const ForwardInput in = ForwardInput::from_sequence(seq, f.cohort[0].age, f.cohort[0].sex);
  const auto mask = build_mask(MaskKind::causal(), in.size());
  for (auto _ : state) benchmark::DoNotOptimize(f.model.logits(in, mask));
  state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(BM_Forward)->Arg(8)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  const Fixture& f = fixture();
  Model model = f.model;
  AdamW opt(model.params(), {});
  const auto batch = std::span(f.cohort).first(static_cast<std::size_t>(state.range(0)));
  std::vector<std::uint64_t> seeds(batch.size(), 7);
  std::vector<nn::Tensor> grads;
  for (auto _ : state) {
    batch_gradient(model, batch, f.vocab, LossConfig{}, grads, true, seeds);
    opt.step(model.params(), grads, 1e-4);
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_EncodeParticipant(benchmark::State& state) {
  GeneratorConfig g = GeneratorConfig::desk_default(4);
  g.n_participants = 16;
  const GeneratedCohort c = generate(g);
  const Fixture& f = fixture();
  std::size_t events = 0;
  for (auto _ : state) {
    for (const auto& r : c.records) {
      benchmark::DoNotOptimize(encode_participant(r, f.vocab, 512));
      events += r.events.size();
    }
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(events));
}
BENCHMARK(BM_EncodeParticipant)->Unit(benchmark::kMicrosecond);

void BM_EncodeValue(benchmark::State& state) {
  const Fixture& f = fixture();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(130.0, 25.0);
  std::vector<double> values(4096);
  for (double& v : values) v = n(rng);
  const int ldl = f.vocab.index_of("ldl");
  for (auto _ : state) {
    for (double v : values) benchmark::DoNotOptimize(encode_value(f.vocab, ldl, v));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(values.size()));
}
BENCHMARK(BM_EncodeValue);

void BM_SimulateArms(benchmark::State& state) {
  const Fixture& f = fixture();
  const auto cohort = std::span(f.cohort).first(static_cast<std::size_t>(state.range(0)));
  const int med = f.vocab.index_of("medication");
  const auto spec = InterventionSpec::append(med, 0, 1, 12, "statin");
  ArmOptions opt;
  opt.bootstrap_resamples = 100;
  const int ldl = f.vocab.index_of("ldl");
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_arms(f.model, cohort, spec, f.vocab, ldl, opt));
  }
}
BENCHMARK(BM_SimulateArms)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
