#include <benchmark/benchmark.h>

#include "mpc/autograd.hpp"
#include "mpc/ctc.hpp"
#include "mpc/features.hpp"
#include "mpc/model.hpp"
#include "mpc/rng.hpp"
#include "mpc/synthetic.hpp"

namespace {

mpc::Tensor random_matrix(std::size_t r, std::size_t c, mpc::Rng& rng) {
  mpc::Tensor t(mpc::Shape{r, c});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  mpc::Rng rng(1);
  const mpc::Tensor a = random_matrix(n, n, rng);
  const mpc::Tensor b = random_matrix(n, n, rng);
  for (auto _ : state) {
    mpc::Graph g;
    benchmark::DoNotOptimize(mpc::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Fbank(benchmark::State& state) {
  mpc::SyntheticCorpusConfig sc;
  const mpc::Waveform w = mpc::synthesize_utterance(sc, 0).wave;
  for (auto _ : state) benchmark::DoNotOptimize(mpc::fbank(w).frames.data().data());
  state.SetLabel(std::to_string(w.samples.size()) + " samples");
}
BENCHMARK(BM_Fbank);

void BM_Resample16To8(benchmark::State& state) {
  mpc::Waveform w;
  w.sample_rate = 16000;
  mpc::Rng rng(2);
  for (int i = 0; i < 16000; ++i) w.samples.push_back(0.1 * rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(mpc::resample(w, 8000).samples.data());
}
BENCHMARK(BM_Resample16To8);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  const mpc::ModelConfig cfg = mpc::ModelConfig::toy(40, 12);
  mpc::Rng rng(3);
  const mpc::ParamStore params = mpc::init_pretrain_params(cfg, mpc::Objective::MPC, rng);
  const mpc::Tensor x = random_matrix(frames, cfg.encoder.pretrain_input_dim(), rng);
  for (auto _ : state) {
    mpc::Graph g(&params);
    const mpc::Var h = mpc::encoder_forward(g, cfg.encoder, g.constant(x), mpc::EncoderMode::Pretrain);
    const mpc::Var loss = mpc::mean(mpc::abs(mpc::reconstruction_head(g, h)));
    benchmark::DoNotOptimize(g.backward(loss).size());
  }
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Arg(64);

void BM_CtcLoss(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  mpc::Rng rng(4);
  const mpc::Tensor logits = random_matrix(frames, 12, rng);
  const std::vector<mpc::TokenId> labels{3, 4, 5, 5, 6};
  for (auto _ : state) {
    mpc::Graph g;
    const mpc::Var lp = mpc::log_softmax(g.variable(logits));
    const mpc::Var loss = mpc::ctc_loss(lp, labels);
    g.backward(loss);
    benchmark::DoNotOptimize(loss.value().item());
  }
}
BENCHMARK(BM_CtcLoss)->Arg(20)->Arg(100);

}  // namespace
BENCHMARK_MAIN();
