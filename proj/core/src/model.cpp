#include "mpc/model.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <cmath>
#include <set>
#include <sstream>

namespace mpc {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::MPC:
      return "mpc";
    case Objective::APC:
      return "apc";
    case Objective::CPC:
      return "cpc";
  }
  return "?";
}

Objective parse_objective(const std::string& s) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "mpc") return Objective::MPC;
  if (lower == "apc") return Objective::APC;
  if (lower == "cpc") return Objective::CPC;
  throw Error("unknown objective '" + s + "' (expected mpc, apc or cpc)");
}

void EncoderConfig::validate() const {
  if (num_blocks == 0 || d_model == 0 || d_ff == 0 || num_heads == 0 || d_mel == 0 || stack_factor == 0) {
    throw Error("encoder config: all sizes must be positive");
  }
  if (d_model % num_heads != 0) throw Error("encoder config: d_model must be divisible by num_heads");
  for (std::size_t k : downsample_after) {
    if (k >= num_blocks) throw Error("encoder config: downsample point " + std::to_string(k) + " must be < num_blocks");
  }
}

void DecoderConfig::validate() const {
  if (num_blocks == 0 || d_model == 0 || d_ff == 0 || num_heads == 0) throw Error("decoder config: sizes must be positive");
  if (d_model % num_heads != 0) throw Error("decoder config: d_model must be divisible by num_heads");
  if (vocab_size < 4) throw Error("decoder config: vocabulary needs blank, sos, eos and at least one character");
}

ModelConfig ModelConfig::toy(std::size_t d_mel, std::size_t vocab_size) {
  ModelConfig c;
  c.encoder.num_blocks = 2;
  c.encoder.d_model = 32;
  c.encoder.d_ff = 64;
  c.encoder.num_heads = 2;
  c.encoder.d_mel = d_mel;
  c.encoder.downsample_after = {1, 1, 1};
  c.decoder.num_blocks = 1;
  c.decoder.d_model = 32;
  c.decoder.d_ff = 64;
  c.decoder.num_heads = 2;
  c.decoder.vocab_size = vocab_size;
  c.recurrent = {d_mel, 32, d_mel};
  c.cpc = {16, 3, 8};
  return c;
}

ModelConfig ModelConfig::paper(std::size_t d_mel, std::size_t vocab_size) {
  ModelConfig c;
  c.encoder.d_mel = d_mel;
  c.decoder.vocab_size = vocab_size;
  c.recurrent = {d_mel, 512, d_mel};
  c.cpc = {256, 3, 8};
  return c;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto str = [](auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"encoder.num_blocks", str(encoder.num_blocks)},
      {"encoder.d_model", str(encoder.d_model)},
      {"encoder.d_ff", str(encoder.d_ff)},
      {"encoder.num_heads", str(encoder.num_heads)},
      {"encoder.d_mel", str(encoder.d_mel)},
      {"encoder.stack_factor", str(encoder.stack_factor)},
      {"encoder.downsample_after", join(encoder.downsample_after)},
      {"encoder.ln_eps", str(encoder.ln_eps)},
      {"decoder.num_blocks", str(decoder.num_blocks)},
      {"decoder.d_model", str(decoder.d_model)},
      {"decoder.d_ff", str(decoder.d_ff)},
      {"decoder.num_heads", str(decoder.num_heads)},
      {"decoder.vocab_size", str(decoder.vocab_size)},
      {"decoder.ln_eps", str(decoder.ln_eps)},
      {"recurrent.input_dim", str(recurrent.input_dim)},
      {"recurrent.hidden_dim", str(recurrent.hidden_dim)},
      {"recurrent.output_dim", str(recurrent.output_dim)},
      {"cpc.latent_dim", str(cpc.latent_dim)},
      {"cpc.max_offset", str(cpc.max_offset)},
      {"cpc.num_candidates", str(cpc.num_candidates)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv, const ModelConfig& base) {
  ModelConfig c = base;
  auto get = [&](const std::string& key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    std::istringstream is(it->second);
    is >> field;
    if (!is) throw Error("model config: bad value for " + key + ": '" + it->second + "'");
  };
  get("encoder.num_blocks", c.encoder.num_blocks);
  get("encoder.d_model", c.encoder.d_model);
  get("encoder.d_ff", c.encoder.d_ff);
  get("encoder.num_heads", c.encoder.num_heads);
  get("encoder.d_mel", c.encoder.d_mel);
  get("encoder.stack_factor", c.encoder.stack_factor);
  if (auto it = kv.find("encoder.downsample_after"); it != kv.end()) c.encoder.downsample_after = split_sizes(it->second);
  get("encoder.ln_eps", c.encoder.ln_eps);
  get("decoder.num_blocks", c.decoder.num_blocks);
  get("decoder.d_model", c.decoder.d_model);
  get("decoder.d_ff", c.decoder.d_ff);
  get("decoder.num_heads", c.decoder.num_heads);
  get("decoder.vocab_size", c.decoder.vocab_size);
  get("decoder.ln_eps", c.decoder.ln_eps);
  get("recurrent.input_dim", c.recurrent.input_dim);
  get("recurrent.hidden_dim", c.recurrent.hidden_dim);
  get("recurrent.output_dim", c.recurrent.output_dim);
  get("cpc.latent_dim", c.cpc.latent_dim);
  get("cpc.max_offset", c.cpc.max_offset);
  get("cpc.num_candidates", c.cpc.num_candidates);
  return c;
}

// --- parameters --------------------------------------------------------------

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

namespace {

void add_linear(ParamStore& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p[name + ".w"] = xavier_uniform(in, out, rng);
  p[name + ".b"] = Tensor(Shape{out});
}

void add_layer_norm(ParamStore& p, const std::string& name, std::size_t d) {
  p[name + ".g"] = Tensor(Shape{d}, 1.0);
  p[name + ".b"] = Tensor(Shape{d});
}

void add_attention(ParamStore& p, const std::string& name, std::size_t d, Rng& rng) {
  for (const char* proj : {"q", "k", "v", "o"}) add_linear(p, name + "." + proj, d, d, rng);
}

void add_ffn(ParamStore& p, const std::string& name, std::size_t d, std::size_t d_ff, Rng& rng) {
  p[name + ".w1"] = xavier_uniform(d, d_ff, rng);
  p[name + ".b1"] = Tensor(Shape{d_ff});
  p[name + ".w2"] = xavier_uniform(d_ff, d, rng);
  p[name + ".b2"] = Tensor(Shape{d});
}

void add_encoder_blocks(ParamStore& p, const EncoderConfig& cfg, Rng& rng) {
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    const std::string b = "encoder.block" + std::to_string(i);
    add_layer_norm(p, b + ".ln1", cfg.d_model);
    add_attention(p, b + ".attn", cfg.d_model, rng);
    add_layer_norm(p, b + ".ln2", cfg.d_model);
    add_ffn(p, b + ".ffn", cfg.d_model, cfg.d_ff, rng);
  }
  add_layer_norm(p, "encoder.final_ln", cfg.d_model);
}

void add_recurrent(ParamStore& p, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                   Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    p[name + ".w" + gate] = xavier_uniform(in, hidden, rng);
    p[name + ".u" + gate] = xavier_uniform(hidden, hidden, rng);
    p[name + ".b" + gate] = Tensor(Shape{hidden});
  }
  add_linear(p, name + ".out", hidden, out, rng);
}

Var linear(Graph& g, const std::string& name, Var x) {
  return add_row(matmul(x, g.param(name + ".w")), g.param(name + ".b"));
}

Var norm(Graph& g, const std::string& name, Var x, double eps) {
  return layer_norm(x, g.param(name + ".g"), g.param(name + ".b"), eps);
}

Var feed_forward(Graph& g, const std::string& name, Var x) {
  Var h = relu(add_row(matmul(x, g.param(name + ".w1")), g.param(name + ".b1")));
  return add_row(matmul(h, g.param(name + ".w2")), g.param(name + ".b2"));
}

Var encoder_block(Graph& g, const EncoderConfig& cfg, std::size_t index, Var x) {
  const std::string b = "encoder.block" + std::to_string(index);
  Var n1 = norm(g, b + ".ln1", x, cfg.ln_eps);
  Var h = add(x, multi_head_attention(g, b + ".attn", n1, n1, cfg.num_heads, false));
  return add(h, feed_forward(g, b + ".ffn", norm(g, b + ".ln2", h, cfg.ln_eps)));
}

// Concatenate adjacent frame pairs (dropping an odd tail) and project 2d -> d.
Var downsample(Graph& g, const std::string& name, Var x) {
  const std::size_t t = x.value().rows();
  const std::size_t d = x.value().cols();
  const std::size_t half = t / 2;
  Var even = half * 2 == t ? x : slice_rows(x, 0, half * 2);
  return linear(g, name, reshape(even, Shape{half, 2 * d}));
}

}  // namespace

std::size_t encoder_block_param_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d_model;
  return 4 * d * d + 4 * d + 2 * d * cfg.d_ff + cfg.d_ff + d + 4 * d;
}

std::size_t pretrain_encoder_param_count(const EncoderConfig& cfg) {
  return cfg.num_blocks * encoder_block_param_count(cfg) + 2 * cfg.d_model +
         (cfg.pretrain_input_dim() + 1) * cfg.d_model;
}

std::size_t param_count(const ParamStore& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

ParamStore init_pretrain_params(const ModelConfig& cfg, Objective objective, Rng& rng) {
  ParamStore p;
  switch (objective) {
    case Objective::MPC: {
      cfg.encoder.validate();
      Rng r = rng.substream("mpc_init");
      add_linear(p, "encoder.pretrain_input", cfg.encoder.pretrain_input_dim(), cfg.encoder.d_model, r);
      add_encoder_blocks(p, cfg.encoder, r);
      add_linear(p, "recon", cfg.encoder.d_model, cfg.encoder.pretrain_input_dim(), r);
      break;
    }
    case Objective::APC: {
      Rng r = rng.substream("apc_init");
      add_recurrent(p, "apc.rnn", cfg.encoder.d_mel, cfg.recurrent.hidden_dim, cfg.encoder.d_mel, r);
      break;
    }
    case Objective::CPC: {
      Rng r = rng.substream("cpc_init");
      add_linear(p, "cpc.enc", cfg.encoder.d_mel, cfg.cpc.latent_dim, r);
      add_recurrent(p, "cpc.rnn", cfg.cpc.latent_dim, cfg.recurrent.hidden_dim, cfg.recurrent.hidden_dim, r);
      for (std::size_t k = 1; k <= cfg.cpc.max_offset; ++k) {
        p["cpc.pred" + std::to_string(k) + ".w"] = xavier_uniform(cfg.recurrent.hidden_dim, cfg.cpc.latent_dim, r);
      }
      break;
    }
  }
  return p;
}

ParamStore init_finetune_params(const ModelConfig& cfg, Rng& rng) {
  cfg.encoder.validate();
  cfg.decoder.validate();
  if (cfg.decoder.d_model != cfg.encoder.d_model) throw Error("model config: decoder d_model must equal encoder d_model");
  Rng r = rng.substream("finetune_init");
  ParamStore p;
  const std::size_t d = cfg.encoder.d_model;
  add_linear(p, "encoder.finetune_input", cfg.encoder.d_mel, d, r);
  for (std::size_t j = 0; j < cfg.encoder.downsample_after.size(); ++j) {
    add_linear(p, "encoder.downsample" + std::to_string(j), 2 * d, d, r);
  }
  add_encoder_blocks(p, cfg.encoder, r);
  const DecoderConfig& dc = cfg.decoder;
  p["decoder.embed"] = xavier_uniform(dc.vocab_size, d, r);
  for (std::size_t i = 0; i < dc.num_blocks; ++i) {
    const std::string b = "decoder.block" + std::to_string(i);
    add_layer_norm(p, b + ".ln1", d);
    add_attention(p, b + ".self_attn", d, r);
    add_layer_norm(p, b + ".ln2", d);
    add_attention(p, b + ".cross_attn", d, r);
    add_layer_norm(p, b + ".ln3", d);
    add_ffn(p, b + ".ffn", d, dc.d_ff, r);
  }
  add_layer_norm(p, "decoder.final_ln", d);
  add_linear(p, "decoder.out", d, dc.vocab_size, r);
  add_linear(p, "ctc", d, dc.vocab_size, r);
  return p;
}

bool is_transferable_encoder_param(const std::string& name) {
  return name.rfind("encoder.block", 0) == 0;
}

ParamStore init_finetune_model(const ParamStore& pretrained, const ModelConfig& cfg, Rng& rng) {
  ParamStore p = init_finetune_params(cfg, rng);
  std::vector<std::string> problems;
  for (auto& [name, tensor] : p) {
    if (!is_transferable_encoder_param(name)) continue;
    auto it = pretrained.find(name);
    if (it == pretrained.end()) {
      problems.push_back(name + ": missing from pre-trained parameters (expected " + shape_string(tensor.shape()) + ")");
    } else if (it->second.shape() != tensor.shape()) {
      problems.push_back(name + ": pre-trained " + shape_string(it->second.shape()) + " vs configured " +
                         shape_string(tensor.shape()));
    } else {
      tensor = it->second;
    }
  }
  if (!problems.empty()) {
    std::string report = "init_finetune_model: " + std::to_string(problems.size()) + " tensor(s) do not match:";
    for (const auto& line : problems) report += "\n  " + line;
    throw Error(report);
  }
  return p;
}

// --- forward passes ------------------------------------------------------------

Tensor sinusoidal_positions(std::size_t length, std::size_t d_model) {
  Tensor pe(Shape{length, d_model});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe.at(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < d_model) pe.at(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

Var multi_head_attention(Graph& g, const std::string& prefix, Var queries, Var keys_values, std::size_t num_heads,
                         bool causal) {
  const std::size_t d = queries.value().cols();
  const std::size_t tq = queries.value().rows();
  const std::size_t tk = keys_values.value().rows();
  if (d % num_heads != 0) throw Error("attention: d_model not divisible by heads");
  const std::size_t dk = d / num_heads;
  Var q = linear(g, prefix + ".q", queries);
  Var k = linear(g, prefix + ".k", keys_values);
  Var v = linear(g, prefix + ".v", keys_values);
  std::vector<unsigned char> allowed;
  if (causal) {
    allowed.assign(tq * tk, 0);
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < tk && j <= i; ++j) allowed[i * tk + j] = 1;
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    Var qh = num_heads == 1 ? q : slice_cols(q, h * dk, (h + 1) * dk);
    Var kh = num_heads == 1 ? k : slice_cols(k, h * dk, (h + 1) * dk);
    Var vh = num_heads == 1 ? v : slice_cols(v, h * dk, (h + 1) * dk);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Var weights = causal ? masked_softmax(scores, allowed) : softmax(scores, 1);
    heads.push_back(matmul(weights, vh));
  }
  Var merged = num_heads == 1 ? heads.front() : concat_cols(heads);
  return linear(g, prefix + ".o", merged);
}

std::size_t encoder_output_length(const EncoderConfig& cfg, std::size_t input_length, EncoderMode mode) {
  if (mode == EncoderMode::Pretrain) return input_length;
  std::size_t t = input_length;
  for (std::size_t i = 0; i < cfg.downsample_after.size(); ++i) t /= 2;
  return t;
}

Var encoder_forward(Graph& g, const EncoderConfig& cfg, Var features, EncoderMode mode) {
  const std::size_t expected = mode == EncoderMode::Pretrain ? cfg.pretrain_input_dim() : cfg.d_mel;
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.cols() != expected) {
    throw Error(std::string("encoder_forward: ") + (mode == EncoderMode::Pretrain ? "pretrain" : "finetune") +
                " mode expects input width " + std::to_string(expected) + ", got " + shape_string(fv.shape()));
  }
  Var x = linear(g, mode == EncoderMode::Pretrain ? "encoder.pretrain_input" : "encoder.finetune_input", features);

  // Sorted copy so that repeated points apply back to back.
  std::vector<std::size_t> points = cfg.downsample_after;
  std::sort(points.begin(), points.end());
  std::size_t next_point = 0;
  auto apply_downsampling = [&](std::size_t blocks_done) {
    if (mode != EncoderMode::Finetune) return;
    while (next_point < points.size() && points[next_point] == blocks_done) {
      x = downsample(g, "encoder.downsample" + std::to_string(next_point), x);
      ++next_point;
    }
  };
  apply_downsampling(0);
  // Positions are added at the rate the first block sees.
  x = add(x, g.constant(sinusoidal_positions(x.value().rows(), cfg.d_model)));
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    if (x.value().rows() == 0) throw Error("encoder_forward: sequence too short for downsampling");
    x = encoder_block(g, cfg, i, x);
    apply_downsampling(i + 1);
  }
  if (x.value().rows() == 0) throw Error("encoder_forward: sequence too short for downsampling");
  return norm(g, "encoder.final_ln", x, cfg.ln_eps);
}

Var reconstruction_head(Graph& g, Var hidden) { return linear(g, "recon", hidden); }

Var decoder_forward(Graph& g, const DecoderConfig& cfg, Var encoder_out, const std::vector<TokenId>& prefix) {
  if (prefix.empty() || prefix.front() != 1) throw Error("decoder_forward: prefix must start with <sos>");
  for (TokenId t : prefix) {
    if (t >= cfg.vocab_size) {
      throw Error("decoder_forward: token id " + std::to_string(t) + " outside vocabulary of " +
                  std::to_string(cfg.vocab_size));
    }
  }
  Var x = select_rows(g.param("decoder.embed"), prefix);
  x = add(x, g.constant(sinusoidal_positions(prefix.size(), cfg.d_model)));
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    const std::string b = "decoder.block" + std::to_string(i);
    Var n1 = norm(g, b + ".ln1", x, cfg.ln_eps);
    x = add(x, multi_head_attention(g, b + ".self_attn", n1, n1, cfg.num_heads, true));
    x = add(x, multi_head_attention(g, b + ".cross_attn", norm(g, b + ".ln2", x, cfg.ln_eps), encoder_out,
                                    cfg.num_heads, false));
    x = add(x, feed_forward(g, b + ".ffn", norm(g, b + ".ln3", x, cfg.ln_eps)));
  }
  return linear(g, "decoder.out", norm(g, "decoder.final_ln", x, cfg.ln_eps));
}

Var ctc_log_probs(Graph& g, Var encoder_out) { return log_softmax(linear(g, "ctc", encoder_out)); }

RecurrentOutput recurrent_forward(Graph& g, const std::string& prefix, Var inputs) {
  const std::size_t t_len = inputs.value().rows();
  if (t_len == 0) throw Error("recurrent_forward: empty input");
  Var xz = add_row(matmul(inputs, g.param(prefix + ".wz")), g.param(prefix + ".bz"));
  Var xr = add_row(matmul(inputs, g.param(prefix + ".wr")), g.param(prefix + ".br"));
  Var xh = add_row(matmul(inputs, g.param(prefix + ".wh")), g.param(prefix + ".bh"));
  Var uz = g.param(prefix + ".uz");
  Var ur = g.param(prefix + ".ur");
  Var uh = g.param(prefix + ".uh");
  const std::size_t hidden = uz.value().rows();
  Var h = g.constant(Tensor(Shape{1, hidden}));
  std::vector<Var> states;
  states.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    Var z = sigmoid(add(slice_rows(xz, t, t + 1), matmul(h, uz)));
    Var r = sigmoid(add(slice_rows(xr, t, t + 1), matmul(h, ur)));
    Var cand = tanh(add(slice_rows(xh, t, t + 1), matmul(mul(r, h), uh)));
    h = add(mul(one_minus(z), cand), mul(z, h));
    states.push_back(h);
  }
  Var hs = concat_rows(states);
  return {linear(g, prefix + ".out", hs), hs};
}

// --- checkpoints ---------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw Error("checkpoint: " + origin_ + ": " + why + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "MPCK";
  put_u32(out, kCheckpointVersion);
  std::string text;
  for (const auto& [k, v] : ckpt.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint: config entry '" + k + "' contains '=' or newline");
    }
    text += k + "=" + v + "\n";
  }
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& [name, t] : ckpt.params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4) != "MPCK") r.fail("bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) r.fail("unsupported version " + std::to_string(v));
  Checkpoint ckpt;
  std::istringstream text(r.str(r.u32()));
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("config line without '=': " + line);
    ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  while (!r.done()) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 4) r.fail("tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = std::bit_cast<double>(r.u64());
    if (!ckpt.params.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      r.fail("duplicate tensor '" + name + "'");
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

}  // namespace mpc
