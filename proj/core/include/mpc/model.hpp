#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mpc/autograd.hpp"
#include "mpc/ctc.hpp"
#include "mpc/rng.hpp"

namespace mpc {

enum class Objective { MPC, APC, CPC };
std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct EncoderConfig {
  std::size_t num_blocks = 12;
  std::size_t d_model = 256;
  std::size_t d_ff = 2048;
  std::size_t num_heads = 4;
  std::size_t d_mel = 40;
  std::size_t stack_factor = 8;
  /// Fine-tuning halves the time axis after the first k blocks for every k
  /// listed (k = 0: right after the input projection). {3, 6, 9} on 12
  /// blocks gives three 2x reductions between groups of three blocks.
  std::vector<std::size_t> downsample_after = {3, 6, 9};
  double ln_eps = 1e-5;

  std::size_t pretrain_input_dim() const { return d_mel * stack_factor; }
  void validate() const;
};

struct DecoderConfig {
  std::size_t num_blocks = 6;
  std::size_t d_model = 256;
  std::size_t d_ff = 2048;
  std::size_t num_heads = 4;
  std::size_t vocab_size = 0;  // characters + blank/sos/eos
  double ln_eps = 1e-5;

  void validate() const;
};

/// Gated recurrent cell used as g_ar for APC and CPC.
struct RecurrentConfig {
  std::size_t input_dim = 40;
  std::size_t hidden_dim = 64;
  std::size_t output_dim = 40;
};

struct CpcConfig {
  std::size_t latent_dim = 32;
  std::size_t max_offset = 3;
  std::size_t num_candidates = 8;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  RecurrentConfig recurrent;
  CpcConfig cpc;

  /// e=2, d=1, d_model=32, d_ff=64, 2 heads.
  static ModelConfig toy(std::size_t d_mel, std::size_t vocab_size);
  /// e=12, d=6, d_model=256, d_ff=2048, 4 heads.
  static ModelConfig paper(std::size_t d_mel, std::size_t vocab_size);

  std::map<std::string, std::string> to_map() const;
  /// Keys absent from `kv` keep their value from `base`.
  static ModelConfig from_map(const std::map<std::string, std::string>& kv, const ModelConfig& base = {});
};

enum class EncoderMode { Pretrain, Finetune };

// --- parameters --------------------------------------------------------------

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Number of scalars in one encoder block:
///   4 d^2 + 4 d          attention projections (q, k, v, out) with biases
///   2 d d_ff + d_ff + d  position-wise feed-forward
///   4 d                  two layer norms
std::size_t encoder_block_param_count(const EncoderConfig& cfg);
/// blocks * encoder_block_param_count + final layer norm (2 d)
/// + pretrain input projection ((input_dim + 1) d).
std::size_t pretrain_encoder_param_count(const EncoderConfig& cfg);
std::size_t param_count(const ParamStore& params);

/// Parameters for one pre-training objective: MPC gets the Transformer
/// encoder plus reconstruction head; APC and CPC get the recurrent g_ar with
/// their heads.
ParamStore init_pretrain_params(const ModelConfig& cfg, Objective objective, Rng& rng);

/// Freshly initialized fine-tuning model (encoder with fine-tune input
/// projection and downsamplers, decoder, CTC head).
ParamStore init_finetune_params(const ModelConfig& cfg, Rng& rng);

/// Head swap: copies every encoder block from `pretrained`, drops the
/// reconstruction head, pre-training input projection and the encoder's final
/// layer norm, and initializes everything else fresh from `rng`. Throws with
/// a per-tensor report when shapes do not match `cfg`.
ParamStore init_finetune_model(const ParamStore& pretrained, const ModelConfig& cfg, Rng& rng);

/// Names of the tensors that transfer from pre-training to fine-tuning.
bool is_transferable_encoder_param(const std::string& name);

// --- forward passes ------------------------------------------------------------

/// Fixed sinusoidal position encoding, length x d_model.
Tensor sinusoidal_positions(std::size_t length, std::size_t d_model);

/// Multi-head scaled dot-product attention with projections under `prefix`.
Var multi_head_attention(Graph& g, const std::string& prefix, Var queries, Var keys_values, std::size_t num_heads,
                         bool causal);

/// Pretrain: stacked frames (T' x d_mel*stack) -> T' x d_model.
/// Finetune: raw frames (T x d_mel) -> halved once per downsample point.
Var encoder_forward(Graph& g, const EncoderConfig& cfg, Var features, EncoderMode mode);
std::size_t encoder_output_length(const EncoderConfig& cfg, std::size_t input_length, EncoderMode mode);

/// Affine projection back to the stacked FBANK dimension.
Var reconstruction_head(Graph& g, Var hidden);

/// Logits (prefix_len x vocab) for the next token after each prefix position.
/// The prefix must start with <sos>.
Var decoder_forward(Graph& g, const DecoderConfig& cfg, Var encoder_out, const std::vector<TokenId>& prefix);

/// Per-frame log distribution over the vocabulary (blank = id 0).
Var ctc_log_probs(Graph& g, Var encoder_out);

struct RecurrentOutput {
  Var outputs;  // T x output_dim
  Var hidden;   // T x hidden_dim
};

/// Strictly causal GRU under `prefix`, followed by an affine output layer.
RecurrentOutput recurrent_forward(Graph& g, const std::string& prefix, Var inputs);

// --- checkpoints ---------------------------------------------------------------

struct Checkpoint {
  std::map<std::string, std::string> config;
  ParamStore params;
};

/// "MPCK" | version u32 | config_len u32 | config text ("key=value\n", sorted)
/// then until EOF, per tensor: name_len u32 | name | rank u32 | extents u32...
/// | float64 data. Little-endian throughout.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace mpc
