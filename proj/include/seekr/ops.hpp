#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seekr/tape.hpp"
#include "seekr/tensor.hpp"

namespace seekr {

// Allowed/disallowed flags over the trailing two dims of a score tensor.
class Mask {
 public:
  Mask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed);
  static Mask causal(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool allowed(std::size_t r, std::size_t c) const { return allowed_[r * cols_ + c] != 0; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint8_t> allowed_;
};

// Contiguous block of rows in a packed [tokens x features] tensor holding one sequence.
struct Segment {
  std::size_t begin = 0;
  std::size_t length = 0;
};

// One supervised row for the row-wise losses.
struct RowTarget {
  std::size_t row = 0;
  std::size_t token = 0;
  double weight = 1.0;
};

// One teacher attention distribution for attention_kl: row `query` of head
// `head`, covering keys 0..query.
struct AttentionTarget {
  std::size_t head = 0;
  std::size_t query = 0;
  std::span<const double> teacher;
};

inline constexpr double kMaskSentinel = -1e30;
inline constexpr double kProbabilityFloor = 1e-8;

namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var a, double c);
// a [M x N] + bias [N] broadcast over rows.
Var add_bias(Var a, Var bias);
Var sum(Var a);
// Σ weights[i] * scalars[i].
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

// Rows of table selected by ids.
Var embedding(Var table, std::span<const std::size_t> ids);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// tanh-approximated GELU.
Var gelu(Var x);

// Softmax over the last dim with disallowed positions exactly zero.
Var masked_softmax(Var logits, const Mask& mask);

// Scaled scores Q_h K_h^T for the rows of one sequence: [n_heads x T x T].
// Entries above the diagonal are left at zero.
Var head_scores(Var q, Var k, Segment seg, std::size_t n_heads);
// Replaces heads with head_mask[h] set by fixed probabilities from `injected`.
Var graft(Var probs, const Tensor& injected, const std::vector<bool>& head_mask);
// Causal mixing of values: out[t] = Σ_{j<=t} P[h,t,j] V[j] per head, one P per segment.
Var attention_mix(std::span<const Var> probs, Var v, std::span<const Segment> segments, std::size_t n_heads);

// Σ_r w_r · (-log softmax(logits[r])[token_r]).
Var nll_rows(Var logits, std::span<const RowTarget> targets);
// Σ_r w_r · KL(softmax(teacher_r) || softmax(logits[rows_r])), probabilities floored at `floor`.
Var kl_rows(Var logits, std::span<const std::size_t> rows, const Tensor& teacher_logits,
            std::span<const double> weights, double floor = kProbabilityFloor);
// weight · Σ KL(teacher || probs[head, query, 0..query]), probabilities floored at `floor`.
Var attention_kl(Var probs, std::span<const AttentionTarget> targets, double weight,
                 double floor = kProbabilityFloor);

}  // namespace ops

// Plain helpers on values.
void softmax_row(std::span<const double> logits, std::span<double> out);
double log_sum_exp(std::span<const double> logits);
// KL(p || q) with both floored at `floor`; zero p entries contribute nothing.
double clamped_kl(std::span<const double> p, std::span<const double> q, double floor = kProbabilityFloor);

}  // namespace seekr
