#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "seekr/checkpoint.hpp"
#include "seekr/error.hpp"
#include "seekr/model.hpp"
#include "seekr/rng.hpp"
#include "support/gradcheck.hpp"

using namespace seekr;

namespace {

Tokens random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  Tokens t(n);
  for (auto& x : t) x = rng.below(vocab);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "seekr_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Config, RejectsInconsistentWidths) {
  TransformerConfig c;
  c.d_k = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  TransformerConfig ok;
  EXPECT_NO_THROW(ok.validate());
}

TEST(Model, InitializationIsSeedDeterministic) {
  const auto cfg = check::tiny_config();
  EXPECT_TRUE(bit_identical(ModelState::initialize(cfg, 4), ModelState::initialize(cfg, 4)));
  EXPECT_FALSE(bit_identical(ModelState::initialize(cfg, 4), ModelState::initialize(cfg, 5)));
}

TEST(Model, LogitShapeAndFiniteness) {
  const auto m = ModelState::initialize(check::tiny_config(), 1, 0.1);
  Rng rng(2);
  const Tokens t = random_tokens(rng, 9, m.config.vocab_size);
  const auto out = forward(m, t, true, false);
  EXPECT_EQ(out.logits_value().dims(), (Dims{9, m.config.vocab_size}));
  EXPECT_TRUE(out.logits_value().all_finite());
  ASSERT_TRUE(out.attention.has_value());
  EXPECT_EQ(out.attention->layers.size(), m.config.n_layers);
  EXPECT_EQ(out.attention->layers[0].dims(), (Dims{m.config.n_heads, 9, 9}));
}

TEST(Model, AttentionRowsAreCausalDistributions) {
  const auto m = ModelState::initialize(check::tiny_config(), 3, 0.3);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tokens t = random_tokens(rng, 1 + rng.below(m.config.max_seq_len), m.config.vocab_size);
    const auto out = forward(m, t, true, false);
    for (std::size_t l = 0; l < m.config.n_layers; ++l)
      for (std::size_t h = 0; h < m.config.n_heads; ++h)
        for (std::size_t q = 0; q < t.size(); ++q) {
          const auto row = out.attention->row(l, h, q);
          double s = 0.0;
          for (std::size_t k = 0; k < t.size(); ++k) {
            if (k > q) EXPECT_EQ(row[k], 0.0);
            s += row[k];
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
  }
}

TEST(Model, FutureTokensDoNotChangeEarlierLogits) {
  const auto m = ModelState::initialize(check::tiny_config(), 5, 0.2);
  Rng rng(6);
  Tokens a = random_tokens(rng, 10, m.config.vocab_size);
  Tokens b = a;
  b[7] = (b[7] + 1) % m.config.vocab_size;
  b[9] = (b[9] + 3) % m.config.vocab_size;
  const Tensor la = forward(m, a, false, false).logits_value();
  const Tensor lb = forward(m, b, false, false).logits_value();
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < la.cols(); ++c) EXPECT_EQ(la.at(r, c), lb.at(r, c));
}

TEST(Model, PackedBatchMatchesSingleForwards) {
  const auto m = ModelState::initialize(check::tiny_config(), 7, 0.2);
  Rng rng(8);
  std::vector<Tokens> seqs = {random_tokens(rng, 5, 46), random_tokens(rng, 12, 46), random_tokens(rng, 1, 46)};
  ForwardOptions opt;
  opt.record_backward = false;
  opt.capture_attention = true;
  const BatchForward b = forward_batch(m, seqs, opt);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto single = forward(m, seqs[s], true, false);
    EXPECT_LT(max_abs_diff(b.sequence_logits(s), single.logits_value()), 1e-12);
    for (std::size_t l = 0; l < m.config.n_layers; ++l)
      EXPECT_LT(max_abs_diff(b.attention(s).layers[l], single.attention->layers[l]), 1e-12);
  }
}

TEST(Model, InputErrors) {
  const auto m = ModelState::initialize(check::tiny_config(), 1);
  EXPECT_THROW(forward(m, Tokens{}, false), InputError);
  EXPECT_THROW(forward(m, Tokens(m.config.max_seq_len + 1, 0), false), InputError);
  EXPECT_THROW(forward(m, Tokens{0, 46}, false), InputError);
}

TEST(Model, AttentionWithoutCaptureIsUsageError) {
  const auto m = ModelState::initialize(check::tiny_config(), 1);
  const auto out = forward(m, Tokens{1, 2, 3}, false, false);
  EXPECT_THROW(out.batch.attention(0), UsageError);
}

TEST(Graft, SelfGraftIsIdentity) {
  const auto m = ModelState::initialize(check::tiny_config(), 9, 0.2);
  const Tokens t{3, 1, 4, 1, 5, 9, 2, 6};
  const auto plain = forward(m, t, true, false);
  const auto grafted = forward_grafted(m, *plain.attention, t, all_heads(m.config));
  EXPECT_TRUE(bit_identical(plain.logits_value(), grafted.logits_value()));
}

TEST(Graft, EmptyHeadSetIsPlainForward) {
  const auto a = ModelState::initialize(check::tiny_config(), 10, 0.2);
  const auto b = ModelState::initialize(check::tiny_config(), 11, 0.2);
  const Tokens t{3, 1, 4, 1, 5};
  const auto src = forward(b, t, true, false);
  const auto grafted = forward_grafted(a, *src.attention, t, {});
  EXPECT_TRUE(bit_identical(grafted.logits_value(), forward(a, t, false, false).logits_value()));
}

TEST(Graft, ForeignAttentionChangesOutputAndLengthMustMatch) {
  const auto a = ModelState::initialize(check::tiny_config(), 12, 0.3);
  const auto b = ModelState::initialize(check::tiny_config(), 13, 0.3);
  const Tokens t{3, 1, 4, 1, 5};
  const auto src = forward(b, t, true, false);
  const auto grafted = forward_grafted(a, *src.attention, t, all_heads(a.config));
  EXPECT_GT(max_abs_diff(grafted.logits_value(), forward(a, t, false, false).logits_value()), 0.0);
  EXPECT_THROW(forward_grafted(a, *src.attention, Tokens{3, 1, 4}, all_heads(a.config)), InputError);
}

TEST(Decode, ArgmaxTiesGoToLowestIndex) {
  const std::vector<double> v{0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(Decode, BatchedMatchesSingleAndRespectsLimits) {
  const auto m = ModelState::initialize(check::tiny_config(), 14, 0.3);
  const std::vector<Tokens> prompts = {{1, 2, 3}, {4, 5}, {6, 7, 8, 9}};
  const auto batched = greedy_decode_batch(m, prompts, 5, 43);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    EXPECT_EQ(batched[i], greedy_decode(m, prompts[i], 5, 43));
    EXPECT_LE(batched[i].size(), 5u);
  }
  EXPECT_THROW(greedy_decode(m, Tokens(10, 1), 7, 43), InputError);
}

TEST(Decode, SelfGraftedDecodeMatchesPlain) {
  const auto m = ModelState::initialize(check::tiny_config(), 15, 0.3);
  const std::vector<Tokens> prompts = {{1, 2, 3}, {4, 5, 6, 7}};
  EXPECT_EQ(greedy_decode_batch(m, prompts, 6, 43), greedy_decode_batch(m, prompts, 6, 43, &m, all_heads(m.config)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto m = ModelState::initialize(check::tiny_config(), 16, 0.1);
  const auto p = temp_path("rt.bin");
  save_checkpoint(p, m);
  const auto back = load_checkpoint(p);
  EXPECT_TRUE(bit_identical(m, back));
  EXPECT_EQ(back.config, m.config);
  const Tokens t{1, 2, 3, 4};
  EXPECT_TRUE(bit_identical(forward(m, t, false, false).logits_value(), forward(back, t, false, false).logits_value()));
}

TEST(Checkpoint, CorruptFilesRaiseIoError) {
  const auto m = ModelState::initialize(check::tiny_config(), 17);
  const auto p = temp_path("trunc.bin");
  save_checkpoint(p, m);
  std::filesystem::resize_file(p, std::filesystem::file_size(p) / 2);
  EXPECT_THROW(load_checkpoint(p), IoError);
  const auto q = temp_path("garbage.bin");
  std::ofstream(q) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(q), IoError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.bin")), IoError);
}

TEST(Checkpoint, ParameterNamesAreUniqueAndComplete) {
  const auto m = ModelState::zeros(check::tiny_config());
  const auto names = m.parameter_names();
  const std::set<std::string> unique(names.begin(), names.end());
  EXPECT_EQ(unique.size(), names.size());
  EXPECT_EQ(names.size(), 4 + 16 * m.config.n_layers + 2);
}
