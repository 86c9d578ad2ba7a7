// SPDX-License-Identifier: Apache-2.0
#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <nlohmann/json.hpp>

#include "attrdialog/corpus.hpp"
#include "attrdialog/dialog_model.hpp"
#include "attrdialog/evaluation.hpp"
#include "attrdialog/graph.hpp"
#include "attrdialog/layers.hpp"
#include "attrdialog/synth.hpp"
#include "attrdialog/training.hpp"

namespace {

using namespace attrdialog;

struct Fixture {
  Vocabulary vocab;
  AttributeSchema schema;
  std::vector<Dialog> dialogs;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    const nlohmann::json spec = {
        {"dialogs", 200},
        {"min_length", 3},
        {"max_length", 6},
        {"topics", {"tea", "jazz", "chess", "boats", "birds"}},
        {"families",
         {{{"name", "act"},
           {"labels", {"ask", "tell"}},
           {"first_order", {{0.2, 0.8}, {0.7, 0.3}, {0.5, 0.5}}},
           {"templates",
            {{"ask", {{{"text", "do you like {topic}"}, {"p", 1.0}}}},
             {"tell", {{{"text", "i like {topic} a lot"}, {"p", 0.5}},
                       {{"text", "i dont know"}, {"p", 0.5}}}}}}}}}};
    const SynthSpec s = SynthSpec::from_json(spec);
    const SynthResult r = synthesize_corpus(s, 1);
    Fixture out;
    out.vocab = build_vocab(r.corpus, 100);
    out.schema = s.schema();
    out.dialogs = encode_corpus(r.corpus, out.schema, out.vocab);
    return out;
  }();
  return f;
}

ModelConfig model_config(std::size_t hidden) {
  const Fixture& f = fixture();
  ModelConfig c;
  c.vocab_size = f.vocab.size();
  c.embed_dim = hidden / 2;
  c.encoder_hidden = c.context_hidden = c.decoder_hidden = hidden;
  c.encoder_layers = c.decoder_layers = 1;
  c.attribute_hidden = hidden / 2;
  c.head_hidden = hidden;
  c.dropout = 0.0;
  c.schema = f.schema;
  return c;
}

void BM_GruStepForwardBackward(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  ParameterSet params;
  auto stack = nn::make_gru_stack(params, "gru", hidden, hidden, 1, 0.0);
  Rng rng(3);
  nn::init_gru(stack, rng);
  std::vector<double> x(hidden, 0.1);
  for (auto _ : state) {
    ad::Graph g;
    ad::Expr h = nn::zeros(g, hidden);
    const ad::Expr in = g.constant(Tensor::row(x));
    for (int t = 0; t < 10; ++t) h = nn::gru_step(g, stack.layers[0], in, h);
    g.backward(ad::sum(h));
    benchmark::DoNotOptimize(h.value());
  }
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_GruStepForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_TrainingBatch(benchmark::State& state) {
  const Fixture& f = fixture();
  DialogModel model(model_config(static_cast<std::size_t>(state.range(0))));
  Rng rng(5);
  const auto batches = make_batches(f.dialogs, f.schema, 32, 2, rng);
  std::size_t i = 0;
  for (auto _ : state) {
    const Batch& batch = batches[i++ % batches.size()];
    ad::Graph g;
    JointBatchLoss loss = batch_loss(g, model, batch, false, nullptr);
    g.backward(loss.loss);
    model.parameters().zero_grad();
    state.counters["examples"] += static_cast<double>(batch.size());
  }
  state.counters["examples"] =
      benchmark::Counter(state.counters["examples"], benchmark::Counter::kIsRate);
}
BENCHMARK(BM_TrainingBatch)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GreedyResponse(benchmark::State& state) {
  const Fixture& f = fixture();
  DialogModel model(model_config(32));
  const Dialog& d = f.dialogs.front();
  const auto prefix = model.context_prefix(d, d.size() - 1);
  for (auto _ : state) {
    const auto attrs = model.choose_attributes(prefix, DecodeMode::Greedy);
    benchmark::DoNotOptimize(model.respond(prefix, attrs, DecodeMode::Greedy, 20));
  }
}
BENCHMARK(BM_GreedyResponse);

void BM_Perplexity(benchmark::State& state) {
  const Fixture& f = fixture();
  DialogModel model(model_config(32));
  for (auto _ : state) benchmark::DoNotOptimize(perplexity(model, f.dialogs));
}
BENCHMARK(BM_Perplexity)->Unit(benchmark::kMillisecond);

void BM_DistinctN(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> tok(4, 2000), len(3, 20);
  std::vector<std::vector<int>> responses(static_cast<std::size_t>(state.range(0)));
  for (auto& r : responses) {
    r.resize(static_cast<std::size_t>(len(rng)));
    for (int& t : r) t = tok(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(distinct_n(responses, 2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DistinctN)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
