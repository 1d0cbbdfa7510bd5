#include "desk_experiment.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "mpc/decode.hpp"

namespace mpc::desk {

DeskConfig DeskConfig::standard() {
  DeskConfig c;
  c.synth.num_utterances = 2000;
  c.synth.seed = 11;
  c.synth.min_chars = 5;
  c.synth.max_chars = 10;
  c.pretrain_run.objective = Objective::MPC;
  c.pretrain_run.batch_size = 8;
  c.pretrain_run.total_steps = 3000;
  c.pretrain_run.schedule.k = 0.5;
  c.pretrain_run.schedule.warmup_n = 100;
  c.pretrain_run.schedule.canonical_noam = true;
  c.pretrain_run.log_every = 100;
  c.finetune_run = c.pretrain_run;
  c.finetune_run.epochs = 30;
  c.finetune_run.schedule.k = 0.1;
  c.finetune_run.schedule.warmup_n = 20;
  return c;
}

Corpus build_corpus(const DeskConfig& cfg) {
  const SyntheticCorpusConfig& sc = cfg.synth;
  std::vector<FeatureSequence> raw;
  std::vector<std::string> transcripts;
  raw.reserve(sc.num_utterances);
  for (std::size_t i = 0; i < sc.num_utterances; ++i) {
    const SyntheticUtterance u = synthesize_utterance(sc, i);
    raw.push_back(fbank(u.wave));
    transcripts.push_back(u.transcript);
  }
  const NormalizedCorpus norm = per_speaker_normalize(raw);

  Corpus c;
  c.vocab = Vocabulary::from_utf8(sc.alphabet);
  c.d_mel = norm.sequences.front().dim();
  const std::size_t held_out = cfg.valid + cfg.test;
  if (held_out + cfg.labeled > sc.num_utterances) throw Error("desk corpus: splits exceed corpus size");
  auto labeled = [&](std::size_t i) {
    return LabeledUtterance{norm.sequences[i].utterance_id, norm.sequences[i].frames, c.vocab.encode(transcripts[i]),
                            transcripts[i]};
  };
  for (std::size_t i = 0; i < sc.num_utterances; ++i) {
    if (i < cfg.valid) {
      c.valid.push_back(labeled(i));
    } else if (i < held_out) {
      c.test.push_back(labeled(i));
    } else {
      c.unlabeled.push_back(norm.sequences[i]);
      if (i < held_out + cfg.labeled) c.train.push_back(labeled(i));
    }
  }
  return c;
}

std::size_t FinetuneOutcome::epochs_to(double threshold) const {
  for (std::size_t e = 0; e < val_curve.size(); ++e) {
    if (val_curve[e] <= threshold) return e + 1;
  }
  return val_curve.size() + 1;
}

double corpus_cer(const ParamStore& params, const ModelConfig& model, const std::vector<LabeledUtterance>& data,
                  const Vocabulary& vocab, std::size_t beam, double ctc_weight) {
  EditCounts total;
  BeamOptions opts;
  opts.beam_width = beam;
  opts.ctc_weight = ctc_weight;
  for (const auto& u : data) {
    const Hypothesis h = joint_beam_decode(params, model, u.frames, opts);
    total += cer(utf8_decode(u.transcript), utf8_decode(vocab.decode(h.tokens)));
  }
  return total.rate();
}

namespace {

FinetuneOutcome run_finetune(const DeskConfig& cfg, const Corpus& corpus, const ModelConfig& model, ParamStore init,
                             std::uint64_t seed) {
  RunConfig run = cfg.finetune_run;
  run.seed = seed;
  const FinetuneResult r = finetune(run, model, std::move(init), corpus.train, corpus.valid);
  FinetuneOutcome out;
  for (const auto& e : r.epochs) out.val_curve.push_back(e.val_loss);
  out.test_cer = corpus_cer(r.best_params, model, corpus.test, corpus.vocab, cfg.beam, run.ctc_weight);
  return out;
}

}  // namespace

SeedOutcome run_seed(const DeskConfig& cfg, const Corpus& corpus, std::uint64_t seed, bool verbose) {
  const ModelConfig model = resolve_model_config(cfg.finetune_run, corpus.d_mel, corpus.vocab.size());
  SeedOutcome out;

  RunConfig pre = cfg.pretrain_run;
  pre.seed = seed;
  for (double f : cfg.checkpoint_fractions) {
    pre.checkpoint_steps.push_back(
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(pre.total_steps)))));
  }
  const PretrainResult pr = pretrain(pre, model, corpus.unlabeled);
  if (verbose) {
    for (const auto& m : pr.metrics) spdlog::info("seed {} {}", seed, m.format());
  }

  const Rng init_root = Rng(seed).substream("desk_init");
  {
    Rng r = init_root;
    out.random_init = run_finetune(cfg, corpus, model, init_finetune_params(model, r), seed);
  }
  for (std::size_t step : pre.checkpoint_steps) {
    const auto it = std::find_if(pr.checkpoints.begin(), pr.checkpoints.end(),
                                 [&](const PretrainCheckpoint& c) { return c.step == step; });
    if (it == pr.checkpoints.end()) throw Error("desk experiment: missing checkpoint at step " + std::to_string(step));
    Rng r = init_root;
    out.pretrained.push_back(run_finetune(cfg, corpus, model, init_finetune_model(it->params, model, r), seed));
    out.checkpoint_steps.push_back(step);
  }
  return out;
}

}  // namespace mpc::desk
