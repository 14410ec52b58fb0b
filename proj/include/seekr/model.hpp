#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seekr/ops.hpp"
#include "seekr/tape.hpp"
#include "seekr/tensor.hpp"

namespace seekr {

using TokenId = std::size_t;
using Tokens = std::vector<TokenId>;

struct TransformerConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 64;
  std::size_t d_k = 8;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 46;
  std::size_t max_seq_len = 64;

  std::size_t total_heads() const noexcept { return n_layers * n_heads; }
  // Throws ConfigError on d_model != n_heads * d_k or zero extents.
  void validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, b_ff1, w_ff2, b_ff2;
};

// All trainable parameters of the decoder plus its configuration.
struct ModelState {
  TransformerConfig config;
  Tensor token_embedding;     // [vocab x d_model]
  Tensor position_embedding;  // [max_seq_len x d_model]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor w_vocab, b_vocab;  // [d_model x vocab], [vocab]

  // Zero parameters with correct shapes; gains set to one.
  static ModelState zeros(const TransformerConfig& config);
  // Gaussian weights (std `init_std`), zero biases, unit gains.
  static ModelState initialize(const TransformerConfig& config, std::uint64_t seed, double init_std = 0.02);

  // Visits parameters in canonical order with their checkpoint names.
  void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_parameter(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t parameter_count() const;
  std::vector<std::string> parameter_names() const;
};

bool bit_identical(const ModelState& a, const ModelState& b);

// Gradients in canonical parameter order.
using Gradients = std::vector<Tensor>;

// Per-layer attention tensors [n_heads x T x T] for one sequence. Row t is
// the query at position t; entries with key > t are exactly zero.
struct AttentionRecord {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t seq_len = 0;
  std::vector<Tensor> layers;

  std::span<const double> row(std::size_t layer, std::size_t head, std::size_t query) const;
  // [T x T] copy of one head.
  Tensor head(std::size_t layer, std::size_t head) const;
};

// (layer, head) pairs; std::set keeps lexicographic order.
using HeadSet = std::set<std::pair<std::size_t, std::size_t>>;
HeadSet all_heads(const TransformerConfig& config);

struct ForwardOptions {
  bool capture_attention = false;
  bool record_backward = true;
  // Grafting: per-sequence injected attention (nullptr = none) applied to `graft_heads`.
  std::vector<const AttentionRecord*> injected;
  HeadSet graft_heads;
};

// Packed forward over several sequences. Rows of `logits` are token positions;
// sequence s occupies rows [segments[s].begin, segments[s].begin + length).
// Parameter leaves reference the ModelState, which must outlive this object
// and stay unmodified until gradients have been collected.
struct BatchForward {
  std::unique_ptr<Tape> tape;
  Var logits;
  std::vector<Segment> segments;
  // attention_nodes[s][l]: [n_heads x T x T] node (post-graft) for sequence s, layer l.
  std::vector<std::vector<Var>> attention_nodes;
  std::vector<Var> parameter_nodes;
  bool captured = false;

  std::size_t sequence_count() const noexcept { return segments.size(); }
  AttentionRecord attention(std::size_t seq) const;
  // [T x vocab] logits for one sequence.
  Tensor sequence_logits(std::size_t seq) const;
  // After backward: gradients of all parameters, canonical order.
  Gradients parameter_gradients() const;
  // After backward: ∂loss/∂A for one sequence, same layout as attention(seq).
  AttentionRecord attention_gradients(std::size_t seq) const;
};

BatchForward forward_batch(const ModelState& model, std::span<const Tokens> sequences,
                           const ForwardOptions& options = {});

// Single-sequence forward output.
struct ForwardOutput {
  BatchForward batch;

  Var logits() const { return batch.logits; }
  Tape& tape() const { return *batch.tape; }
  Tensor logits_value() const { return batch.logits.value(); }
  std::optional<AttentionRecord> attention;
};

ForwardOutput forward(const ModelState& model, const Tokens& tokens, bool capture_attention,
                      bool record_backward = true);
ForwardOutput forward_grafted(const ModelState& student, const AttentionRecord& injected, const Tokens& tokens,
                              const HeadSet& head_set);

// Runs backward from `loss` and returns ∂loss/∂A per layer ([n_heads x T x T]).
AttentionRecord attention_gradients(ForwardOutput& output, Var loss);

// Argmax decoding until `stop_token` or max_new tokens. Ties go to the lowest id.
Tokens greedy_decode(const ModelState& model, const Tokens& prompt, std::size_t max_new, TokenId stop_token);

// Batched decoding of many prompts; results in prompt order. When `graft_source`
// is set, every step injects its attention (recomputed on the same prefix) at
// `graft_heads` of `model`.
std::vector<Tokens> greedy_decode_batch(const ModelState& model, std::span<const Tokens> prompts,
                                        std::size_t max_new, TokenId stop_token,
                                        const ModelState* graft_source = nullptr, const HeadSet& graft_heads = {});

// Index of the largest value, lowest index on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace seekr
