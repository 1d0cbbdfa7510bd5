#include "mpc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mpc/ctc.hpp"
#include "mpc/vocab.hpp"

namespace mpc {

// --- configuration -------------------------------------------------------------

void RunConfig::validate() const {
  if (profile != "toy" && profile != "paper") throw Error("run config: profile must be toy or paper, got '" + profile + "'");
  if (batch_size == 0) throw Error("run config: batch_size must be positive");
  if (!(scheduled_sampling_rate >= 0.0 && scheduled_sampling_rate <= 1.0)) {
    throw Error("run config: scheduled_sampling_rate must be in [0, 1]");
  }
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw Error("run config: ctc_weight must be in [0, 1]");
  if (weight_decay < 0.0) throw Error("run config: weight_decay must be >= 0");
  if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) throw Error("run config: valid_fraction must be in [0, 1)");
  if (apc_shift == 0) throw Error("run config: apc_shift must be >= 1");
  if (beam == 0) throw Error("run config: beam must be >= 1");
  schedule.validate();
  mask.validate();
}

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw Error("run config: bad value for " + key + ": '" + text + "'");
  return v;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error("run config: bad boolean for " + key + ": '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_value<std::size_t>(key, item.substr(b)));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

RunConfig parse_run_config(std::istream& is, const std::string& origin) {
  RunConfig c;
  const auto model_keys = ModelConfig{}.to_map();
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw Error(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw Error(where + ": duplicate key '" + key + "'");
    try {
      if (key == "objective") c.objective = parse_objective(val);
      else if (key == "profile") c.profile = val;
      else if (key == "batch_size") c.batch_size = parse_value<std::size_t>(key, val);
      else if (key == "total_steps") c.total_steps = parse_value<std::size_t>(key, val);
      else if (key == "epochs") c.epochs = parse_value<std::size_t>(key, val);
      else if (key == "scheduled_sampling_rate") c.scheduled_sampling_rate = parse_value<double>(key, val);
      else if (key == "weight_decay") c.weight_decay = parse_value<double>(key, val);
      else if (key == "ctc_weight") c.ctc_weight = parse_value<double>(key, val);
      else if (key == "seed") c.seed = parse_value<std::uint64_t>(key, val);
      else if (key == "train_manifest") c.train_manifest = val;
      else if (key == "train_features") c.train_features = val;
      else if (key == "valid_manifest") c.valid_manifest = val;
      else if (key == "valid_features") c.valid_features = val;
      else if (key == "out_dir") c.out_dir = val;
      else if (key == "k") c.schedule.k = parse_value<double>(key, val);
      else if (key == "warmup_n") c.schedule.warmup_n = parse_value<std::size_t>(key, val);
      else if (key == "canonical_noam") c.schedule.canonical_noam = parse_value<bool>(key, val);
      else if (key == "plateau_patience_epochs") c.schedule.plateau_patience_epochs = parse_value<std::size_t>(key, val);
      else if (key == "plateau_divisor") c.schedule.plateau_divisor = parse_value<double>(key, val);
      else if (key == "plateau_max_applications") c.schedule.plateau_max_applications = parse_value<std::size_t>(key, val);
      else if (key == "adam_beta1") c.adam.beta1 = parse_value<double>(key, val);
      else if (key == "adam_beta2") c.adam.beta2 = parse_value<double>(key, val);
      else if (key == "adam_eps") c.adam.eps = parse_value<double>(key, val);
      else if (key == "clip_norm") c.adam.clip_norm = parse_value<double>(key, val);
      else if (key == "select_ratio") c.mask.select_ratio = parse_value<double>(key, val);
      else if (key == "p_zero") c.mask.p_zero = parse_value<double>(key, val);
      else if (key == "p_random") c.mask.p_random = parse_value<double>(key, val);
      else if (key == "p_keep") c.mask.p_keep = parse_value<double>(key, val);
      else if (key == "apc_shift") c.apc_shift = parse_value<std::size_t>(key, val);
      else if (key == "checkpoint_steps") c.checkpoint_steps = parse_list(key, val);
      else if (key == "checkpoint_every") c.checkpoint_every = parse_value<std::size_t>(key, val);
      else if (key == "log_every") c.log_every = parse_value<std::size_t>(key, val);
      else if (key == "valid_fraction") c.valid_fraction = parse_value<double>(key, val);
      else if (key == "beam") c.beam = parse_value<std::size_t>(key, val);
      else if (model_keys.contains(key)) c.model_overrides[key] = val;
      else throw Error("unknown key '" + key + "'");
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

std::string format_run_config(const RunConfig& c) {
  std::map<std::string, std::string> kv = c.model_overrides;
  kv["objective"] = to_string(c.objective);
  kv["profile"] = c.profile;
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["total_steps"] = std::to_string(c.total_steps);
  kv["epochs"] = std::to_string(c.epochs);
  kv["scheduled_sampling_rate"] = fmt_double(c.scheduled_sampling_rate);
  kv["weight_decay"] = fmt_double(c.weight_decay);
  kv["ctc_weight"] = fmt_double(c.ctc_weight);
  kv["seed"] = std::to_string(c.seed);
  if (!c.train_manifest.empty()) kv["train_manifest"] = c.train_manifest;
  if (!c.train_features.empty()) kv["train_features"] = c.train_features;
  if (!c.valid_manifest.empty()) kv["valid_manifest"] = c.valid_manifest;
  if (!c.valid_features.empty()) kv["valid_features"] = c.valid_features;
  if (!c.out_dir.empty()) kv["out_dir"] = c.out_dir;
  kv["k"] = fmt_double(c.schedule.k);
  kv["warmup_n"] = std::to_string(c.schedule.warmup_n);
  kv["canonical_noam"] = c.schedule.canonical_noam ? "true" : "false";
  kv["plateau_patience_epochs"] = std::to_string(c.schedule.plateau_patience_epochs);
  kv["plateau_divisor"] = fmt_double(c.schedule.plateau_divisor);
  kv["plateau_max_applications"] = std::to_string(c.schedule.plateau_max_applications);
  kv["adam_beta1"] = fmt_double(c.adam.beta1);
  kv["adam_beta2"] = fmt_double(c.adam.beta2);
  kv["adam_eps"] = fmt_double(c.adam.eps);
  kv["clip_norm"] = fmt_double(c.adam.clip_norm);
  kv["select_ratio"] = fmt_double(c.mask.select_ratio);
  kv["p_zero"] = fmt_double(c.mask.p_zero);
  kv["p_random"] = fmt_double(c.mask.p_random);
  kv["p_keep"] = fmt_double(c.mask.p_keep);
  kv["apc_shift"] = std::to_string(c.apc_shift);
  if (!c.checkpoint_steps.empty()) {
    std::string s;
    for (std::size_t i = 0; i < c.checkpoint_steps.size(); ++i) s += (i ? "," : "") + std::to_string(c.checkpoint_steps[i]);
    kv["checkpoint_steps"] = s;
  }
  kv["checkpoint_every"] = std::to_string(c.checkpoint_every);
  kv["log_every"] = std::to_string(c.log_every);
  kv["valid_fraction"] = fmt_double(c.valid_fraction);
  kv["beam"] = std::to_string(c.beam);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

ModelConfig resolve_model_config(const RunConfig& cfg, std::size_t d_mel, std::size_t vocab_size) {
  const ModelConfig base = cfg.profile == "paper" ? ModelConfig::paper(d_mel, vocab_size) : ModelConfig::toy(d_mel, vocab_size);
  return ModelConfig::from_map(cfg.model_overrides, base);
}

// --- metrics -------------------------------------------------------------------

std::string MetricRecord::format() const {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "step=" << step << " epoch=" << epoch << " phase=" << phase << " loss=" << loss << " lr=" << lr;
  if (val_loss) os << " val_loss=" << *val_loss;
  if (cer) os << " cer=" << *cer;
  return os.str();
}

void write_metrics(std::ostream& os, const std::vector<MetricRecord>& records) {
  for (const MetricRecord& r : records) os << r.format() << '\n';
}

bool in_validation_split(const std::string& utterance_id, double fraction) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : utterance_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return static_cast<double>(h % 10000) < fraction * 10000.0;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& lengths, std::size_t batch_size,
                                                   Rng& rng) {
  if (batch_size == 0) throw Error("make_batches: batch size must be positive");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const std::size_t window = 50 * batch_size;
  for (std::size_t b = 0; b < order.size(); b += window) {
    const auto end = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + window));
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(b), end,
                     [&](std::size_t x, std::size_t y) { return lengths[x] < lengths[y]; });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch_size)));
  }
  for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng.uniform_int(i)]);
  return batches;
}

namespace {

void accumulate(Gradients& into, const Gradients& g) {
  for (const auto& [name, t] : g) {
    auto [it, fresh] = into.try_emplace(name, t);
    if (fresh) continue;
    for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
  }
}

void scale_gradients(Gradients& g, double factor) {
  for (auto& [name, t] : g) {
    for (double& v : t.data()) v *= factor;
  }
}

ScheduleConfig schedule_for(const RunConfig& cfg, const ModelConfig& model) {
  ScheduleConfig s = cfg.schedule;
  s.d_model = model.encoder.d_model;
  return s;
}

std::vector<std::size_t> checkpoint_plan(const RunConfig& cfg) {
  std::set<std::size_t> steps;
  if (!cfg.checkpoint_steps.empty()) {
    for (std::size_t s : cfg.checkpoint_steps) {
      if (s == 0 || s > cfg.total_steps) throw Error("pretrain: checkpoint step " + std::to_string(s) + " out of range");
      steps.insert(s);
    }
  } else {
    const std::size_t every = cfg.checkpoint_every ? cfg.checkpoint_every : std::max<std::size_t>(1, cfg.total_steps / 10);
    for (std::size_t s = every; s <= cfg.total_steps; s += every) steps.insert(s);
  }
  steps.insert(cfg.total_steps);
  return {steps.begin(), steps.end()};
}

std::map<std::string, std::string> checkpoint_config(const ModelConfig& model, const std::string& phase, Objective o) {
  auto kv = model.to_map();
  kv["phase"] = phase;
  kv["objective"] = to_string(o);
  return kv;
}

}  // namespace

// --- pre-training --------------------------------------------------------------

std::size_t min_pretrain_frames(Objective objective, const ModelConfig& model, const RunConfig& cfg) {
  switch (objective) {
    case Objective::MPC: return model.encoder.stack_factor;
    case Objective::APC: return cfg.apc_shift + 1;
    case Objective::CPC: return 2;
  }
  return 1;
}

Var pretrain_utterance_loss(Graph& g, Objective objective, const ModelConfig& model, const RunConfig& cfg,
                            const Tensor& frames, Rng& rng) {
  if (frames.rank() != 2 || frames.cols() != model.encoder.d_mel) {
    throw Error("pretrain: expected frames of width " + std::to_string(model.encoder.d_mel) + ", got " +
                shape_string(frames.shape()));
  }
  if (frames.rows() < min_pretrain_frames(objective, model, cfg)) {
    throw Error("pretrain: utterance of " + std::to_string(frames.rows()) + " frames is too short for " +
                to_string(objective));
  }
  switch (objective) {
    case Objective::MPC: {
      const Tensor stacked = stack_frames(frames, model.encoder.stack_factor);
      const MaskPlan plan = sample_mask_plan(stacked.rows(), cfg.mask, rng);
      const PredictiveTargets targets = apply_mask(stacked, plan);
      const Var hidden = encoder_forward(g, model.encoder, g.constant(targets.masked_input), EncoderMode::Pretrain);
      return mpc_loss(reconstruction_head(g, hidden), targets);
    }
    case Objective::APC: {
      const Var x = g.constant(frames);
      const Var y = recurrent_forward(g, "apc.rnn", x).outputs;
      const double elements = static_cast<double>((frames.rows() - cfg.apc_shift) * frames.cols());
      return scale(apc_loss(x, y, cfg.apc_shift), 1.0 / elements);
    }
    case Objective::CPC: {
      const Var x = g.constant(frames);
      const Var z = add_row(matmul(x, g.param("cpc.enc.w")), g.param("cpc.enc.b"));
      const Var c = recurrent_forward(g, "cpc.rnn", z).outputs;
      const auto samples = sample_contrastive(frames.rows(), model.cpc.max_offset, model.cpc.num_candidates, rng);
      std::vector<Var> projections;
      for (std::size_t k = 1; k <= model.cpc.max_offset; ++k) projections.push_back(g.param("cpc.pred" + std::to_string(k) + ".w"));
      std::vector<std::size_t> positives;
      positives.reserve(samples.size());
      for (const auto& s : samples) positives.push_back(s.positive);
      return cpc_infonce_loss(cpc_scores(c, z, projections, samples), positives);
    }
  }
  throw Error("pretrain: unknown objective");
}

PretrainResult pretrain(const RunConfig& cfg, const ModelConfig& model, const std::vector<FeatureSequence>& data) {
  cfg.validate();
  if (data.empty()) throw Error("pretrain: no training data");
  if (cfg.total_steps == 0) throw Error("pretrain: total_steps must be positive");
  const ScheduleConfig sched = schedule_for(cfg, model);
  const Rng root(cfg.seed);
  Rng init_rng = root.substream("init");

  PretrainResult result;
  result.params = init_pretrain_params(model, cfg.objective, init_rng);
  spdlog::info("pretrain: objective {} with {} parameters", to_string(cfg.objective), param_count(result.params));

  const std::size_t min_frames = min_pretrain_frames(cfg.objective, model, cfg);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> valid_idx;
  std::size_t too_short = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].num_frames() < min_frames) {
      ++too_short;
      continue;
    }
    (in_validation_split(data[i].utterance_id, cfg.valid_fraction) ? valid_idx : train_idx).push_back(i);
  }
  if (too_short) spdlog::warn("pretrain: {} utterances shorter than {} frames skipped", too_short, min_frames);
  if (train_idx.empty()) throw Error("pretrain: no usable training utterances");
  spdlog::info("pretrain: {} training / {} validation utterances", train_idx.size(), valid_idx.size());

  std::vector<std::size_t> lengths;
  for (std::size_t i : train_idx) lengths.push_back(data[i].num_frames());

  const std::vector<std::size_t> ckpt_steps = checkpoint_plan(cfg);
  std::size_t next_ckpt = 0;
  std::ofstream metrics_out;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics_out.open(std::filesystem::path(cfg.out_dir) / "metrics.log");
    if (!metrics_out) throw Error("pretrain: cannot write metrics in " + cfg.out_dir);
  }

  auto validation_loss = [&]() -> std::optional<double> {
    if (valid_idx.empty()) return std::nullopt;
    const Rng vroot = root.substream("valid");
    double total = 0.0;
    for (std::size_t j = 0; j < valid_idx.size(); ++j) {
      Rng r = vroot.substream(static_cast<std::uint64_t>(j));
      Graph g(&result.params);
      total += pretrain_utterance_loss(g, cfg.objective, model, cfg, data[valid_idx[j]].frames, r).value().item();
    }
    return total / static_cast<double>(valid_idx.size());
  };

  AdamState adam;
  std::size_t step = 0;
  std::size_t epoch = 0;
  double interval_loss = 0.0;
  std::size_t interval_batches = 0;
  while (step < cfg.total_steps) {
    ++epoch;
    Rng batch_rng = root.substream("batches").substream(static_cast<std::uint64_t>(epoch));
    const auto batches = make_batches(lengths, cfg.batch_size, batch_rng);
    for (const auto& batch : batches) {
      if (step >= cfg.total_steps) break;
      ++step;
      const Rng step_rng = root.substream("step").substream(static_cast<std::uint64_t>(step));
      Gradients grads;
      double loss_sum = 0.0;
      bool finite = true;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Rng r = step_rng.substream(static_cast<std::uint64_t>(b));
        Graph g(&result.params);
        const Var loss = pretrain_utterance_loss(g, cfg.objective, model, cfg, data[train_idx[batch[b]]].frames, r);
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) {
          finite = false;
          break;
        }
        loss_sum += lv;
        accumulate(grads, g.backward(loss));
      }
      const double lr = lr_at_step(step, sched);
      if (!finite) {
        ++result.skipped_batches;
        spdlog::warn("pretrain: non-finite loss at step {}; batch skipped", step);
      } else {
        scale_gradients(grads, 1.0 / static_cast<double>(batch.size()));
        if (!adam_step(result.params, grads, adam, lr, cfg.weight_decay, cfg.adam).applied) ++result.skipped_batches;
        interval_loss += loss_sum / static_cast<double>(batch.size());
        ++interval_batches;
      }

      const bool is_ckpt = next_ckpt < ckpt_steps.size() && ckpt_steps[next_ckpt] == step;
      if ((cfg.log_every && step % cfg.log_every == 0) || is_ckpt) {
        MetricRecord rec;
        rec.step = step;
        rec.epoch = epoch;
        rec.phase = "pretrain";
        rec.loss = interval_batches ? interval_loss / static_cast<double>(interval_batches) : 0.0;
        rec.lr = lr;
        if (is_ckpt) rec.val_loss = validation_loss();
        interval_loss = 0.0;
        interval_batches = 0;
        spdlog::info("{}", rec.format());
        if (metrics_out.is_open()) metrics_out << rec.format() << '\n' << std::flush;
        result.metrics.push_back(std::move(rec));
      }
      if (is_ckpt) {
        ++next_ckpt;
        result.checkpoints.push_back({step, result.params});
        if (!cfg.out_dir.empty()) {
          save_checkpoint(std::filesystem::path(cfg.out_dir) / ("pretrain_step" + std::to_string(step) + ".mpck"),
                          {checkpoint_config(model, "pretrain", cfg.objective), result.params});
        }
      }
    }
  }
  return result;
}

// --- fine-tuning ---------------------------------------------------------------

FinetuneLoss finetune_utterance_loss(Graph& g, const ModelConfig& model, const LabeledUtterance& utt, double ctc_weight,
                                     double sampling_rate, Rng& rng) {
  if (utt.labels.empty()) throw Error("finetune: utterance " + utt.utterance_id + " has an empty transcript");
  const Var enc = encoder_forward(g, model.encoder, g.constant(utt.frames), EncoderMode::Finetune);

  std::vector<TokenId> inputs{Vocabulary::kSos};
  inputs.insert(inputs.end(), utt.labels.begin(), utt.labels.end());
  std::vector<std::size_t> targets(utt.labels.begin(), utt.labels.end());
  targets.push_back(Vocabulary::kEos);

  if (sampling_rate > 0.0) {
    // Teacher-forced probe on a detached copy of the encoder output; its
    // nodes do not feed the loss.
    const Tensor encoded = enc.value();
    const Tensor probe = decoder_forward(g, model.decoder, g.constant(encoded), inputs).value();
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      std::size_t best = Vocabulary::kEos;
      for (std::size_t v = Vocabulary::kEos; v < probe.cols(); ++v) {
        if (probe.at(i - 1, v) > probe.at(i - 1, best)) best = v;
      }
      inputs[i] = scheduled_sample(inputs[i], best, sampling_rate, rng);
    }
  }

  FinetuneLoss out;
  const Var logits = decoder_forward(g, model.decoder, enc, inputs);
  const Var att = scale(mean(pick(log_softmax(logits), targets)), -1.0);
  out.attention = att.value().item();
  if (ctc_weight == 0.0) {
    out.total = att;
    return out;
  }
  const Var ctc = ctc_loss(ctc_log_probs(g, enc), utt.labels, Vocabulary::kBlank);
  out.ctc = ctc.value().item();
  out.total = ctc_weight == 1.0 ? ctc : add(scale(ctc, ctc_weight), scale(att, 1.0 - ctc_weight));
  return out;
}

namespace {

std::vector<std::size_t> feasible_utterances(const ModelConfig& model, const std::vector<LabeledUtterance>& data,
                                             const char* what) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& u = data[i];
    bool ok = !u.labels.empty() && u.frames.rank() == 2 && u.frames.rows() > 0;
    if (ok) {
      std::size_t out_len = 0;
      try {
        out_len = encoder_output_length(model.encoder, u.frames.rows(), EncoderMode::Finetune);
      } catch (const Error&) {
        ok = false;
      }
      ok = ok && out_len >= ctc_min_frames(u.labels);
    }
    if (ok) {
      keep.push_back(i);
    } else {
      spdlog::warn("finetune: {} utterance {} ({} frames, {} labels) cannot be aligned; skipped", what, u.utterance_id,
                   u.frames.rank() == 2 ? u.frames.rows() : 0, u.labels.size());
    }
  }
  return keep;
}

}  // namespace

double finetune_validation_loss(const ParamStore& params, const ModelConfig& model, const RunConfig& cfg,
                                const std::vector<LabeledUtterance>& valid) {
  const auto keep = feasible_utterances(model, valid, "validation");
  if (keep.empty()) throw Error("finetune: no usable validation utterances");
  Rng unused(0);
  double total = 0.0;
  for (std::size_t i : keep) {
    Graph g(&params);
    total += finetune_utterance_loss(g, model, valid[i], cfg.ctc_weight, 0.0, unused).total.value().item();
  }
  return total / static_cast<double>(keep.size());
}

FinetuneResult finetune(const RunConfig& cfg, const ModelConfig& model, ParamStore init,
                        const std::vector<LabeledUtterance>& train, const std::vector<LabeledUtterance>& valid,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw Error("finetune: no training data");
  if (valid.empty()) throw Error("finetune: no validation data");
  const ScheduleConfig sched = schedule_for(cfg, model);
  const auto train_idx = feasible_utterances(model, train, "training");
  if (train_idx.empty()) throw Error("finetune: no usable training utterances");
  const Rng root = Rng(cfg.seed).substream("finetune");

  std::vector<std::size_t> lengths;
  for (std::size_t i : train_idx) lengths.push_back(train[i].frames.rows());

  std::ofstream metrics_out;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics_out.open(std::filesystem::path(cfg.out_dir) / "metrics.log");
    if (!metrics_out) throw Error("finetune: cannot write metrics in " + cfg.out_dir);
  }

  FinetuneResult result;
  ParamStore params = std::move(init);
  AdamState adam;
  PlateauState plateau;
  double lr_scale = 1.0;
  std::size_t step = 0;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng batch_rng = root.substream("batches").substream(static_cast<std::uint64_t>(epoch));
    const auto batches = make_batches(lengths, cfg.batch_size, batch_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    double lr = 0.0;
    for (const auto& batch : batches) {
      ++step;
      const Rng step_rng = root.substream("step").substream(static_cast<std::uint64_t>(step));
      Gradients grads;
      std::size_t used = 0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Rng r = step_rng.substream(static_cast<std::uint64_t>(b));
        const LabeledUtterance& utt = train[train_idx[batch[b]]];
        Graph g(&params);
        const FinetuneLoss loss = finetune_utterance_loss(g, model, utt, cfg.ctc_weight, cfg.scheduled_sampling_rate, r);
        const double lv = loss.total.value().item();
        if (!std::isfinite(lv)) {
          spdlog::warn("finetune: non-finite loss for {} at step {}; utterance skipped", utt.utterance_id, step);
          continue;
        }
        epoch_loss += lv;
        ++epoch_count;
        ++used;
        accumulate(grads, g.backward(loss.total));
      }
      lr = lr_at_step(step, sched) * lr_scale;
      if (used == 0) continue;
      scale_gradients(grads, 1.0 / static_cast<double>(used));
      adam_step(params, grads, adam, lr, cfg.weight_decay, cfg.adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0;
    rec.val_loss = finetune_validation_loss(params, model, cfg, valid);
    rec.lr = lr;
    result.epochs.push_back(rec);

    MetricRecord m;
    m.step = step;
    m.epoch = epoch;
    m.phase = "finetune";
    m.loss = rec.train_loss;
    m.lr = lr;
    m.val_loss = rec.val_loss;
    spdlog::info("{}", m.format());
    if (metrics_out.is_open()) metrics_out << m.format() << '\n' << std::flush;
    result.metrics.push_back(std::move(m));

    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    if (plateau_update(plateau, rec.val_loss, sched) == PlateauAction::DivideLr) {
      lr_scale /= sched.plateau_divisor;
      spdlog::info("finetune: validation loss flat for {} epochs; learning rate divided by {}",
                   sched.plateau_patience_epochs, sched.plateau_divisor);
    }
    if (on_epoch && on_epoch(rec, params)) break;
  }
  if (result.best_params.empty()) result.best_params = params;
  return result;
}

}  // namespace mpc
