#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mpc/synthetic.hpp"
#include "mpc/training.hpp"
#include "mpc/vocab.hpp"

namespace mpc::desk {

/// Synthetic-corpus comparison of fine-tuning from MPC checkpoints against
/// random initialization.
struct DeskConfig {
  SyntheticCorpusConfig synth;
  std::size_t labeled = 150;
  std::size_t valid = 100;
  std::size_t test = 100;
  std::vector<double> checkpoint_fractions = {0.25, 0.5, 1.0};
  RunConfig pretrain_run;
  RunConfig finetune_run;
  std::size_t beam = 10;

  static DeskConfig standard();
};

struct Corpus {
  std::vector<FeatureSequence> unlabeled;  // everything outside valid/test
  std::vector<LabeledUtterance> train;
  std::vector<LabeledUtterance> valid;
  std::vector<LabeledUtterance> test;
  Vocabulary vocab;
  std::size_t d_mel = 0;
};

Corpus build_corpus(const DeskConfig& cfg);

struct FinetuneOutcome {
  std::vector<double> val_curve;  // per epoch
  double test_cer = 0.0;

  double final_val() const { return val_curve.back(); }
  /// First epoch (1-based) whose validation loss is <= threshold, or
  /// val_curve.size() + 1 when it never gets there.
  std::size_t epochs_to(double threshold) const;
};

struct SeedOutcome {
  FinetuneOutcome random_init;
  std::vector<FinetuneOutcome> pretrained;  // one per checkpoint fraction
  std::vector<std::size_t> checkpoint_steps;
};

double corpus_cer(const ParamStore& params, const ModelConfig& model, const std::vector<LabeledUtterance>& data,
                  const Vocabulary& vocab, std::size_t beam, double ctc_weight);

SeedOutcome run_seed(const DeskConfig& cfg, const Corpus& corpus, std::uint64_t seed, bool verbose = false);

}  // namespace mpc::desk
