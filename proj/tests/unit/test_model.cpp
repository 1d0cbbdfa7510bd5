#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpc/model.hpp"
#include "test_util.hpp"

namespace mpc {
namespace {

using testing::random_tensor;

ModelConfig tiny() {
  ModelConfig c = ModelConfig::toy(4, 7);
  c.encoder.d_model = 8;
  c.encoder.d_ff = 16;
  c.decoder.d_model = 8;
  c.decoder.d_ff = 16;
  return c;
}

TEST(ModelConfig, ProfilesAndValidation) {
  const ModelConfig toy = ModelConfig::toy(40, 30);
  EXPECT_EQ(toy.encoder.num_blocks, 2u);
  EXPECT_EQ(toy.decoder.num_blocks, 1u);
  EXPECT_EQ(toy.encoder.d_model, 32u);
  EXPECT_EQ(toy.encoder.d_ff, 64u);
  EXPECT_EQ(toy.encoder.num_heads, 2u);
  const ModelConfig paper = ModelConfig::paper(40, 30);
  EXPECT_EQ(paper.encoder.num_blocks, 12u);
  EXPECT_EQ(paper.decoder.num_blocks, 6u);
  EXPECT_EQ(paper.encoder.d_model, 256u);
  EXPECT_EQ(paper.encoder.d_ff, 2048u);
  EXPECT_EQ(paper.encoder.num_heads, 4u);
  EXPECT_EQ(paper.encoder.pretrain_input_dim(), 320u);

  EncoderConfig bad = paper.encoder;
  bad.num_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
  bad = paper.encoder;
  bad.downsample_after = {12};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(ModelConfig, MapRoundTripAndOverrides) {
  const ModelConfig c = ModelConfig::paper(40, 30);
  const ModelConfig back = ModelConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map(), c.to_map());
  const ModelConfig over = ModelConfig::from_map({{"encoder.num_blocks", "3"}}, ModelConfig::toy(40, 30));
  EXPECT_EQ(over.encoder.num_blocks, 3u);
  EXPECT_EQ(over.encoder.d_model, 32u);
  EXPECT_THROW(ModelConfig::from_map({{"encoder.num_blocks", "many"}}), Error);
}

TEST(Objective, Parsing) {
  EXPECT_EQ(parse_objective("mpc"), Objective::MPC);
  EXPECT_EQ(parse_objective("apc"), Objective::APC);
  EXPECT_EQ(parse_objective("cpc"), Objective::CPC);
  EXPECT_THROW(parse_objective("bert"), Error);
}

TEST(Params, CountsMatchFormula) {
  const ModelConfig c = ModelConfig::paper(40, 30);
  const std::size_t d = 256, ff = 2048;
  EXPECT_EQ(encoder_block_param_count(c.encoder), 4 * d * d + 4 * d + 2 * d * ff + ff + d + 4 * d);
  Rng rng(1);
  const ModelConfig t = ModelConfig::toy(40, 30);
  const ParamStore p = init_pretrain_params(t, Objective::MPC, rng);
  ParamStore encoder_only;
  for (const auto& [k, v] : p) {
    if (k.rfind("encoder.", 0) == 0) encoder_only[k] = v;
  }
  // Blocks, final layer norm and the stacked-input projection.
  EXPECT_EQ(param_count(encoder_only), pretrain_encoder_param_count(t.encoder));
}

TEST(Params, XavierBounds) {
  Rng rng(2);
  const Tensor w = xavier_uniform(10, 30, rng);
  const double limit = std::sqrt(6.0 / 40.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), limit);
}

TEST(Encoder, OutputLengths) {
  const ModelConfig paper = ModelConfig::paper(40, 30);
  EXPECT_EQ(encoder_output_length(paper.encoder, 80, EncoderMode::Finetune), 10u);
  EXPECT_EQ(encoder_output_length(paper.encoder, 2, EncoderMode::Pretrain), 2u);

  const ModelConfig c = tiny();
  Rng rng(3);
  ParamStore p = init_finetune_params(c, rng);
  Graph g(&p);
  const Var out = encoder_forward(g, c.encoder, g.constant(random_tensor(80, 4, rng)), EncoderMode::Finetune);
  EXPECT_EQ(out.value().rows(), 10u);
  EXPECT_EQ(out.value().cols(), 8u);

  ParamStore pp = init_pretrain_params(c, Objective::MPC, rng);
  Graph g2(&pp);
  const Var h = encoder_forward(g2, c.encoder, g2.constant(random_tensor(2, 32, rng)), EncoderMode::Pretrain);
  EXPECT_EQ(h.value().rows(), 2u);
  const Var r = reconstruction_head(g2, h);
  EXPECT_EQ(r.value().cols(), 32u);
  EXPECT_THROW(encoder_forward(g2, c.encoder, g2.constant(random_tensor(2, 4, rng)), EncoderMode::Pretrain), Error);
  EXPECT_THROW(encoder_forward(g, c.encoder, g.constant(random_tensor(4, 4, rng)), EncoderMode::Finetune), Error);
}

TEST(Encoder, ShapeSweep) {
  const ModelConfig c = tiny();
  Rng rng(30);
  ParamStore fp = init_finetune_params(c, rng), pp = init_pretrain_params(c, Objective::MPC, rng);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t t = 8 + rng.uniform_int(250);
    Graph g(&fp);
    const Tensor out = encoder_forward(g, c.encoder, g.constant(random_tensor(t, 4, rng)), EncoderMode::Finetune).value();
    EXPECT_EQ(out.rows(), encoder_output_length(c.encoder, t, EncoderMode::Finetune)) << t;
    EXPECT_EQ(out.rows(), t / 8) << t;
    EXPECT_EQ(ctc_log_probs(g, g.constant(out)).value().cols(), 7u);

    const std::size_t stacked = t / c.encoder.stack_factor;
    Graph h(&pp);
    const Var enc = encoder_forward(h, c.encoder, h.constant(random_tensor(stacked, c.encoder.pretrain_input_dim(), rng)),
                                    EncoderMode::Pretrain);
    EXPECT_EQ(reconstruction_head(h, enc).value().shape(), (Shape{stacked, c.encoder.pretrain_input_dim()}));
  }
}

TEST(Encoder, FinetuneOutputDependsOnFrameOrder) {
  const ModelConfig c = tiny();
  Rng rng(31);
  ParamStore p = init_finetune_params(c, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor(32, 4, rng);
    Tensor shuffled = x;
    for (std::size_t i = 31; i > 0; --i) {
      const std::size_t j = rng.uniform_int(i + 1);
      for (std::size_t k = 0; k < 4; ++k) std::swap(shuffled.at(i, k), shuffled.at(j, k));
    }
    Graph g(&p);
    const Tensor a = encoder_forward(g, c.encoder, g.constant(x), EncoderMode::Finetune).value();
    const Tensor b = encoder_forward(g, c.encoder, g.constant(shuffled), EncoderMode::Finetune).value();
    EXPECT_GT(testing::max_abs_diff(a, b), 1e-6);
  }
}

TEST(ReconstructionHead, ZeroWeightsGiveBias) {
  const ModelConfig c = ModelConfig::toy(40, 30);
  Rng rng(4);
  ParamStore p = init_pretrain_params(c, Objective::MPC, rng);
  for (double& v : p.at("recon.w").data()) v = 0.0;
  for (double& v : p.at("recon.b").data()) v = rng.uniform();
  Graph g(&p);
  const Tensor out = reconstruction_head(g, g.constant(Tensor::zeros(3, 32))).value();
  ASSERT_EQ(out.cols(), 320u);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 320; ++j) EXPECT_EQ(out.at(t, j), p.at("recon.b")[j]);
}

TEST(Decoder, CausalAndShaped) {
  const ModelConfig c = tiny();
  Rng rng(5);
  ParamStore p = init_finetune_params(c, rng);
  const Tensor enc = random_tensor(3, 8, rng);
  Graph g(&p);
  const Tensor a = decoder_forward(g, c.decoder, g.constant(enc), {1, 3, 4, 5}).value();
  const Tensor b = decoder_forward(g, c.decoder, g.constant(enc), {1, 3, 6, 6}).value();
  ASSERT_EQ(a.rows(), 4u);
  ASSERT_EQ(a.cols(), 7u);
  for (std::size_t j = 0; j < 7; ++j) {
    EXPECT_EQ(a.at(0, j), b.at(0, j));
    EXPECT_EQ(a.at(1, j), b.at(1, j));
  }
  EXPECT_NE(a.at(2, 0), b.at(2, 0));
  EXPECT_THROW(decoder_forward(g, c.decoder, g.constant(enc), {1, 9}), Error);
  EXPECT_THROW(decoder_forward(g, c.decoder, g.constant(enc), {3}), Error);
}

TEST(CtcHead, UniformForZeroWeightsAndNormalized) {
  const ModelConfig c = tiny();
  Rng rng(6);
  ParamStore p = init_finetune_params(c, rng);
  Graph g(&p);
  const Tensor enc = random_tensor(4, 8, rng);
  const Tensor lp = ctc_log_probs(g, g.constant(enc)).value();
  for (std::size_t t = 0; t < 4; ++t) {
    double s = 0.0;
    for (double v : lp.row(t)) s += std::exp(v);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  for (double& v : p.at("ctc.w").data()) v = 0.0;
  for (double& v : p.at("ctc.b").data()) v = 0.0;
  Graph g2(&p);
  for (double v : ctc_log_probs(g2, g2.constant(enc)).value().data()) EXPECT_NEAR(v, -std::log(7.0), 1e-12);
}

TEST(Recurrent, CausalAndZeroWeights) {
  const ModelConfig c = tiny();
  Rng rng(7);
  ParamStore p = init_pretrain_params(c, Objective::APC, rng);
  Tensor x = random_tensor(6, 4, rng);
  Graph g(&p);
  const Tensor a = recurrent_forward(g, "apc.rnn", g.constant(x)).outputs.value();
  x.at(4, 2) += 1.0;
  const Tensor b = recurrent_forward(g, "apc.rnn", g.constant(x)).outputs.value();
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.at(t, j), b.at(t, j));
  EXPECT_NE(a.at(4, 0), b.at(4, 0));

  // Zero weights keep the hidden state at 0, so the output is the output bias.
  for (auto& [name, t] : p) {
    for (double& v : t.data()) v = name == "apc.rnn.out.b" ? rng.uniform() : 0.0;
  }
  Graph g2(&p);
  const Tensor z = recurrent_forward(g2, "apc.rnn", g2.constant(x)).outputs.value();
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(z.at(t, j), p.at("apc.rnn.out.b")[j]);
}

TEST(HeadSwap, CopiesBlocksOnly) {
  const ModelConfig c = tiny();
  Rng rng(8);
  const ParamStore pre = init_pretrain_params(c, Objective::MPC, rng);
  Rng a(9), b(9);
  const ParamStore ft = init_finetune_model(pre, c, a);
  const ParamStore ft2 = init_finetune_model(pre, c, b);
  EXPECT_EQ(ft, ft2);
  std::size_t transferred = 0;
  for (const auto& [name, t] : pre) {
    if (is_transferable_encoder_param(name)) {
      EXPECT_EQ(ft.at(name), t) << name;
      ++transferred;
    }
  }
  EXPECT_EQ(transferred, c.encoder.num_blocks * 16u);
  EXPECT_EQ(ft.count("recon.w"), 0u);
  EXPECT_EQ(ft.count("encoder.pretrain_input.w"), 0u);
  EXPECT_EQ(ft.count("encoder.finetune_input.w"), 1u);
  EXPECT_EQ(ft.count("decoder.out.w"), 1u);
  EXPECT_FALSE(is_transferable_encoder_param("encoder.final_ln.g"));
}

TEST(HeadSwap, ShapeMismatchReportsTensors) {
  const ModelConfig c = tiny();
  Rng rng(10);
  ParamStore pre = init_pretrain_params(c, Objective::MPC, rng);
  pre.at("encoder.block0.ffn.w1") = Tensor::zeros(2, 2);
  pre.erase("encoder.block1.ln1.g");
  try {
    init_finetune_model(pre, c, rng);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("encoder.block0.ffn.w1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("encoder.block1.ln1.g"), std::string::npos) << msg;
  }
}

TEST(Positions, Sinusoidal) {
  const Tensor pe = sinusoidal_positions(5, 4);
  EXPECT_EQ(pe.at(0, 0), 0.0);
  EXPECT_EQ(pe.at(0, 1), 1.0);
  EXPECT_NEAR(pe.at(3, 0), std::sin(3.0), 1e-15);
  EXPECT_NEAR(pe.at(3, 3), std::cos(3.0 / 100.0), 1e-15);
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(11);
  Checkpoint ck;
  ck.config = {{"objective", "mpc"}, {"step", "12"}};
  ck.params = init_pretrain_params(tiny(), Objective::MPC, rng);
  ck.params["scalar"] = Tensor::scalar(std::nextafter(1.0, 2.0));
  const auto dir = std::filesystem::temp_directory_path() / "mpc_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.mpck", ck);
  const Checkpoint back = load_checkpoint(dir / "a.mpck");
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));

  std::string bytes = serialize_checkpoint(ck);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.mpck"), Error);
}

}  // namespace
}  // namespace mpc
