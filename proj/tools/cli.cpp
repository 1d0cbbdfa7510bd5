#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mpc/decode.hpp"
#include "mpc/features.hpp"
#include "mpc/model.hpp"
#include "mpc/objectives.hpp"
#include "mpc/schedule.hpp"
#include "mpc/synthetic.hpp"
#include "mpc/training.hpp"
#include "mpc/vocab.hpp"

namespace mpc {

namespace {

constexpr int kInternalRate = 8000;

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string manifest;
  std::string features;
  std::string checkpoint;
  std::string out;
  std::size_t beam = 0;
  double ctc_weight = -1.0;
  std::string profile;
  std::string steps;
  std::size_t length = 20;
  std::size_t count = 1;
  std::string hyps;
  std::string valid_manifest;
  std::string valid_features;
};

std::vector<FeatureSequence> featurize_manifest(const std::vector<ManifestEntry>& entries) {
  std::vector<FeatureSequence> raw;
  raw.reserve(entries.size());
  for (const ManifestEntry& e : entries) {
    Waveform w = load_wav(e.wav_path);
    if (w.sample_rate != kInternalRate) w = resample(w, kInternalRate);
    w.utterance_id = e.utterance_id;
    w.speaker_id = e.speaker_id;
    raw.push_back(fbank(w));
  }
  return raw;
}

/// Normalized features for a manifest: from an archive when given, else
/// computed from the manifest's audio and normalized per speaker.
std::vector<FeatureSequence> load_features(const std::string& features, const std::vector<ManifestEntry>& entries) {
  if (!features.empty()) return read_feature_archive(features);
  if (entries.empty()) throw Error("no features: pass --features or a non-empty --manifest");
  return per_speaker_normalize(featurize_manifest(entries)).sequences;
}

std::vector<LabeledUtterance> join_labels(const std::vector<FeatureSequence>& feats,
                                          const std::vector<ManifestEntry>& entries, const Vocabulary& vocab,
                                          std::ostream& err, const std::string& what) {
  std::map<std::string, const FeatureSequence*> by_id;
  for (const auto& f : feats) by_id[f.utterance_id] = &f;
  std::vector<LabeledUtterance> out;
  std::size_t rejected = 0;
  for (const ManifestEntry& e : entries) {
    const auto it = by_id.find(e.utterance_id);
    if (it == by_id.end()) {
      err << what << ": no features for utterance " << e.utterance_id << "\n";
      ++rejected;
      continue;
    }
    LabeledUtterance u;
    u.utterance_id = e.utterance_id;
    u.frames = it->second->frames;
    u.transcript = e.transcript;
    try {
      u.labels = vocab.encode(e.transcript);
    } catch (const Error& ex) {
      err << what << ": rejected " << e.utterance_id << ": " << ex.what() << "\n";
      ++rejected;
      continue;
    }
    if (u.labels.empty()) {
      err << what << ": rejected " << e.utterance_id << ": empty transcript\n";
      ++rejected;
      continue;
    }
    out.push_back(std::move(u));
  }
  if (rejected) err << what << ": " << rejected << " of " << entries.size() << " utterances rejected\n";
  return out;
}

std::string vocab_to_config(const Vocabulary& v) {
  std::string s;
  for (char32_t c : v.chars()) s += (s.empty() ? "" : ",") + std::to_string(static_cast<std::uint32_t>(c));
  return s;
}

Vocabulary vocab_from_config(const std::map<std::string, std::string>& kv) {
  const auto it = kv.find("vocab.codepoints");
  if (it == kv.end()) throw Error("checkpoint has no vocabulary (not a fine-tuned model?)");
  std::u32string chars;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) chars.push_back(static_cast<char32_t>(std::stoul(item)));
  return Vocabulary(chars);
}

RunConfig load_config(const Options& o) {
  if (o.config.empty()) throw Error("--config is required");
  RunConfig cfg = load_run_config(o.config);
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.profile.empty()) cfg.profile = o.profile;
  if (o.ctc_weight >= 0.0) cfg.ctc_weight = o.ctc_weight;
  if (o.beam) cfg.beam = o.beam;
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  return cfg;
}

std::vector<ManifestEntry> maybe_manifest(const std::string& path) {
  return path.empty() ? std::vector<ManifestEntry>{} : read_manifest(path);
}

int cmd_featurize(const Options& o, std::ostream& out) {
  if (o.manifest.empty() || o.out.empty()) throw Error("featurize needs --manifest and --out");
  const auto entries = read_manifest(o.manifest);
  if (entries.empty()) throw Error("manifest " + o.manifest + " is empty");
  const NormalizedCorpus corpus = per_speaker_normalize(featurize_manifest(entries));
  write_feature_archive(o.out, corpus.sequences);
  write_speaker_stats(o.out + ".stats", corpus.stats);
  out << "wrote " << corpus.sequences.size() << " utterances to " << o.out << "\n";
  return 0;
}

int cmd_synth(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw Error("synth needs --out");
  SyntheticCorpusConfig sc;
  sc.num_utterances = o.count;
  if (o.seed_set) sc.seed = o.seed;
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir / "wav");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < sc.num_utterances; ++i) {
    const SyntheticUtterance u = synthesize_utterance(sc, i);
    const std::string rel = "wav/" + u.wave.utterance_id + ".wav";
    save_wav(dir / rel, u.wave);
    entries.push_back({u.wave.utterance_id, rel, u.wave.speaker_id, u.transcript});
  }
  write_manifest(dir / "manifest.tsv", entries);
  out << "wrote " << entries.size() << " utterances to " << (dir / "manifest.tsv").string() << "\n";
  return 0;
}

int cmd_pretrain(const Options& o, std::ostream& out) {
  RunConfig cfg = load_config(o);
  const std::string features = o.features.empty() ? cfg.train_features : o.features;
  const auto entries = maybe_manifest(o.manifest.empty() ? cfg.train_manifest : o.manifest);
  const auto data = load_features(features, entries);
  if (data.empty()) throw Error("pretrain: empty training set");
  const ModelConfig model = resolve_model_config(cfg, data.front().dim(), 0);
  const PretrainResult r = pretrain(cfg, model, data);
  out << "pretrained " << r.metrics.size() << " log records, " << r.checkpoints.size() << " checkpoints";
  if (!cfg.out_dir.empty()) out << " in " << cfg.out_dir;
  out << "\n";
  return 0;
}

int cmd_finetune(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o);
  const std::string train_manifest = o.manifest.empty() ? cfg.train_manifest : o.manifest;
  const std::string train_features = o.features.empty() ? cfg.train_features : o.features;
  const std::string valid_manifest = o.valid_manifest.empty() ? cfg.valid_manifest : o.valid_manifest;
  const std::string valid_features = o.valid_features.empty() ? cfg.valid_features : o.valid_features;
  if (train_manifest.empty() || valid_manifest.empty()) throw Error("finetune needs training and validation manifests");
  const auto train_entries = read_manifest(train_manifest);
  const auto valid_entries = read_manifest(valid_manifest);
  std::vector<std::string> transcripts;
  for (const auto& e : train_entries) transcripts.push_back(e.transcript);
  const Vocabulary vocab = Vocabulary::from_transcripts(transcripts);
  const auto train = join_labels(load_features(train_features, train_entries), train_entries, vocab, err, "train");
  const auto valid = join_labels(load_features(valid_features, valid_entries), valid_entries, vocab, err, "valid");
  if (train.empty()) throw Error("finetune: no usable training utterances");

  const ModelConfig model = resolve_model_config(cfg, train.front().frames.cols(), vocab.size());
  Rng init_rng = Rng(cfg.seed).substream("init");
  ParamStore init;
  if (o.checkpoint.empty()) {
    init = init_finetune_params(model, init_rng);
  } else {
    init = init_finetune_model(load_checkpoint(o.checkpoint).params, model, init_rng);
  }
  const FinetuneResult r = finetune(cfg, model, std::move(init), train, valid);
  auto kv = model.to_map();
  kv["phase"] = "finetune";
  kv["vocab.codepoints"] = vocab_to_config(vocab);
  const std::filesystem::path dir = cfg.out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(cfg.out_dir);
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "finetune_best.mpck", {kv, r.best_params});
  out << "best epoch " << r.best_epoch << " val_loss " << r.best_val_loss << " -> "
      << (dir / "finetune_best.mpck").string() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.manifest.empty()) throw Error("evaluate needs --manifest");
  const auto entries = read_manifest(o.manifest);
  EvalReport report;
  if (!o.hyps.empty()) {
    std::ifstream in(o.hyps);
    if (!in) throw Error("cannot open hypotheses " + o.hyps);
    std::map<std::string, std::string> hyps;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      hyps[line.substr(0, tab)] = tab == std::string::npos ? "" : line.substr(tab + 1);
    }
    for (const auto& e : entries) {
      const auto it = hyps.find(e.utterance_id);
      if (it == hyps.end()) err << "evaluate: no hypothesis for " << e.utterance_id << "; scored as empty\n";
      const std::string hyp = it == hyps.end() ? "" : it->second;
      report.add({e.utterance_id, e.transcript, hyp, cer_utf8(e.transcript, hyp)});
    }
  } else {
    if (o.checkpoint.empty()) throw Error("evaluate needs --checkpoint or --hyps");
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const Vocabulary vocab = vocab_from_config(ckpt.config);
    const ModelConfig model = ModelConfig::from_map(ckpt.config);
    BeamOptions beam;
    beam.beam_width = o.beam ? o.beam : 10;
    beam.ctc_weight = o.ctc_weight >= 0.0 ? o.ctc_weight : 0.3;
    const auto feats = load_features(o.features, entries);
    std::map<std::string, const FeatureSequence*> by_id;
    for (const auto& f : feats) by_id[f.utterance_id] = &f;
    for (const auto& e : entries) {
      const auto it = by_id.find(e.utterance_id);
      if (it == by_id.end()) {
        err << "evaluate: no features for " << e.utterance_id << "\n";
        continue;
      }
      const Hypothesis h = joint_beam_decode(ckpt.params, model, it->second->frames, beam);
      const std::string hyp = vocab.decode(h.tokens);
      report.add({e.utterance_id, e.transcript, hyp, cer_utf8(e.transcript, hyp)});
    }
  }
  report.write_text(out);
  if (!o.out.empty()) {
    std::ofstream tsv(o.out);
    if (!tsv) throw Error("cannot write " + o.out);
    report.write_tsv(tsv);
  }
  return 0;
}

int cmd_inspect_masks(const Options& o, std::ostream& out) {
  if (o.length == 0) throw Error("--T must be positive");
  Rng rng(o.seed_set ? o.seed : 0);
  const MaskPolicy policy;
  for (std::size_t i = 0; i < o.count; ++i) {
    out << "# plan " << i << "\n";
    write_mask_plan(out, sample_mask_plan(o.length, policy, rng));
  }
  return 0;
}

int cmd_lr_table(const Options& o, std::ostream& out) {
  ScheduleConfig sched;
  if (!o.config.empty()) {
    const RunConfig cfg = load_config(o);
    sched = cfg.schedule;
    sched.d_model = resolve_model_config(cfg, 40, 0).encoder.d_model;
  } else if (!o.profile.empty()) {
    RunConfig cfg;
    cfg.profile = o.profile;
    cfg.validate();
    sched.d_model = resolve_model_config(cfg, 40, 0).encoder.d_model;
  }
  std::vector<std::size_t> steps;
  std::stringstream ss(o.steps.empty() ? "1,8000,32000" : o.steps);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw Error("--steps: bad step '" + item + "'");
    steps.push_back(static_cast<std::size_t>(v));
  }
  out << "step\tlr\n";
  for (std::size_t n : steps) out << n << '\t' << std::setprecision(10) << lr_at_step(n, sched) << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked predictive coding pre-training and character ASR fine-tuning"};
  app.name("mpc");
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "RNG seed")->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--out", o.out, "Output path");
  };

  auto* featurize = app.add_subcommand("featurize", "Manifest to normalized FBANK feature archive");
  featurize->add_option("--manifest", o.manifest, "Input manifest")->required();
  featurize->add_option("--out", o.out, "Feature archive to write")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic tone corpus with manifest");
  add_common(synth);
  synth->add_option("--count", o.count, "Number of utterances");

  auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training");
  add_common(pre);
  pre->add_option("--config", o.config, "Run config")->required();
  pre->add_option("--manifest", o.manifest, "Training manifest");
  pre->add_option("--features", o.features, "Training feature archive");
  pre->add_option("--profile", o.profile, "Model profile")->check(CLI::IsMember({"toy", "paper"}));

  auto* fine = app.add_subcommand("finetune", "Fine-tune a character recognizer");
  add_common(fine);
  fine->add_option("--config", o.config, "Run config")->required();
  fine->add_option("--manifest", o.manifest, "Training manifest");
  fine->add_option("--features", o.features, "Training feature archive");
  fine->add_option("--valid-manifest", o.valid_manifest, "Validation manifest");
  fine->add_option("--valid-features", o.valid_features, "Validation feature archive");
  fine->add_option("--checkpoint", o.checkpoint, "Pre-trained checkpoint (omit for random init)");
  fine->add_option("--ctc-weight", o.ctc_weight, "CTC weight")->check(CLI::Range(0.0, 1.0));
  fine->add_option("--profile", o.profile, "Model profile")->check(CLI::IsMember({"toy", "paper"}));

  auto* eval = app.add_subcommand("evaluate", "Decode and score CER");
  eval->add_option("--manifest", o.manifest, "Manifest with reference transcripts")->required();
  eval->add_option("--features", o.features, "Feature archive (default: computed from the manifest audio)");
  eval->add_option("--checkpoint", o.checkpoint, "Fine-tuned checkpoint");
  eval->add_option("--hyps", o.hyps, "Score an `id<TAB>hyp` file instead of decoding");
  eval->add_option("--beam", o.beam, "Beam width")->check(CLI::PositiveNumber);
  eval->add_option("--ctc-weight", o.ctc_weight, "CTC weight")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--out", o.out, "Write `id<TAB>cer<TAB>ref<TAB>hyp` lines here");

  auto* masks = app.add_subcommand("inspect-masks", "Print sampled mask plans");
  masks->add_option("--T", o.length, "Sequence length");
  masks->add_option("--count", o.count, "Number of plans");
  masks->add_option("--seed", o.seed, "RNG seed")->each([&](const std::string&) { o.seed_set = true; });

  auto* lr = app.add_subcommand("lr-table", "Print the learning rate at given steps");
  lr->add_option("--steps", o.steps, "Comma-separated step numbers");
  lr->add_option("--config", o.config, "Run config for the schedule");
  lr->add_option("--profile", o.profile, "Model profile")->check(CLI::IsMember({"toy", "paper"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (featurize->parsed()) return cmd_featurize(o, out);
    if (synth->parsed()) return cmd_synth(o, out);
    if (pre->parsed()) return cmd_pretrain(o, out);
    if (fine->parsed()) return cmd_finetune(o, out, err);
    if (eval->parsed()) return cmd_evaluate(o, out, err);
    if (masks->parsed()) return cmd_inspect_masks(o, out);
    if (lr->parsed()) return cmd_lr_table(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace mpc
