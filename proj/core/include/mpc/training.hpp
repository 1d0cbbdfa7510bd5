#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpc/features.hpp"
#include "mpc/model.hpp"
#include "mpc/objectives.hpp"
#include "mpc/schedule.hpp"

namespace mpc {

struct RunConfig {
  Objective objective = Objective::MPC;
  std::string profile = "toy";  // toy | paper
  std::size_t batch_size = 8;
  std::size_t total_steps = 500;  // pre-training
  std::size_t epochs = 30;        // fine-tuning
  double scheduled_sampling_rate = 0.1;
  double weight_decay = 1e-5;
  double ctc_weight = 0.3;
  std::uint64_t seed = 1;

  std::string train_manifest;
  std::string train_features;
  std::string valid_manifest;
  std::string valid_features;
  std::string out_dir;

  ScheduleConfig schedule;  // d_model is taken from the model config
  AdamConfig adam;
  MaskPolicy mask;
  std::size_t apc_shift = kApcDefaultShift;
  /// Explicit checkpoint steps; when empty, every checkpoint_every steps
  /// (0: every 10% of total_steps). The last step is always included.
  std::vector<std::size_t> checkpoint_steps;
  std::size_t checkpoint_every = 0;
  std::size_t log_every = 10;
  double valid_fraction = 0.05;
  std::size_t beam = 10;

  /// encoder.* / decoder.* / recurrent.* / cpc.* keys applied over the profile.
  std::map<std::string, std::string> model_overrides;

  void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown keys are rejected.
RunConfig parse_run_config(std::istream& is, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
/// Sorted `key = value` text that parse_run_config reads back.
std::string format_run_config(const RunConfig& cfg);

/// Profile defaults with the config's model overrides applied.
ModelConfig resolve_model_config(const RunConfig& cfg, std::size_t d_mel, std::size_t vocab_size);

struct MetricRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string phase;  // pretrain | finetune
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_loss;
  std::optional<double> cer;

  /// `step=<n> epoch=<e> phase=<p> loss=<f> lr=<f> [val_loss=<f>] [cer=<f>]`
  std::string format() const;
};

void write_metrics(std::ostream& os, const std::vector<MetricRecord>& records);

/// True when `utterance_id` falls in the hash-based validation split.
bool in_validation_split(const std::string& utterance_id, double fraction);

/// Length-bucketed batches for one epoch: a seeded shuffle, then sorting by
/// length inside windows of 50 batches, then a shuffle of the batch order.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& lengths, std::size_t batch_size,
                                                   Rng& rng);

// --- pre-training --------------------------------------------------------------

/// Smallest raw frame count an objective can train on.
std::size_t min_pretrain_frames(Objective objective, const ModelConfig& model, const RunConfig& cfg);

/// Loss for one utterance of raw normalized frames (T x d_mel). MPC stacks,
/// masks and reconstructs; APC predicts `apc_shift` frames ahead (L1 summed
/// and divided by the element count); CPC scores N candidates per offset.
Var pretrain_utterance_loss(Graph& g, Objective objective, const ModelConfig& model, const RunConfig& cfg,
                            const Tensor& frames, Rng& rng);

struct PretrainCheckpoint {
  std::size_t step = 0;
  ParamStore params;
};

struct PretrainResult {
  ParamStore params;
  std::vector<PretrainCheckpoint> checkpoints;
  std::vector<MetricRecord> metrics;
  std::size_t skipped_batches = 0;
};

/// Runs cfg.total_steps optimizer steps. Utterances in the validation split
/// are held out and scored at every checkpoint. With a non-empty out_dir,
/// checkpoints go to `<out_dir>/pretrain_step<n>.mpck` and metrics to
/// `<out_dir>/metrics.log`.
PretrainResult pretrain(const RunConfig& cfg, const ModelConfig& model, const std::vector<FeatureSequence>& data);

// --- fine-tuning ---------------------------------------------------------------

struct LabeledUtterance {
  std::string utterance_id;
  Tensor frames;  // T x d_mel, normalized
  std::vector<TokenId> labels;
  std::string transcript;
};

struct FinetuneLoss {
  Var total;
  double ctc = 0.0;
  double attention = 0.0;
};

/// lambda * CTC + (1 - lambda) * per-token attention cross-entropy. With
/// sampling_rate > 0 a teacher-forced pass picks the model's tokens first,
/// then each decoder input after <sos> is swapped for the model token with
/// that probability.
FinetuneLoss finetune_utterance_loss(Graph& g, const ModelConfig& model, const LabeledUtterance& utt, double ctc_weight,
                                     double sampling_rate, Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct FinetuneResult {
  ParamStore best_params;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::vector<MetricRecord> metrics;
};

/// Called after every epoch with the current parameters; return true to stop.
using EpochCallback = std::function<bool(const EpochRecord&, const ParamStore&)>;

/// Validation loss: mean total loss over `valid` without scheduled sampling.
double finetune_validation_loss(const ParamStore& params, const ModelConfig& model, const RunConfig& cfg,
                                const std::vector<LabeledUtterance>& valid);

FinetuneResult finetune(const RunConfig& cfg, const ModelConfig& model, ParamStore init,
                        const std::vector<LabeledUtterance>& train, const std::vector<LabeledUtterance>& valid,
                        const EpochCallback& on_epoch = {});

}  // namespace mpc
