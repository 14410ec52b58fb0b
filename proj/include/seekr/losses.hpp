#pragma once

#include <optional>
#include <ostream>
#include <span>

#include "seekr/model.hpp"
#include "seekr/replay.hpp"
#include "seekr/tasks.hpp"

namespace seekr {

struct LossWeights {
  double lambda1 = 0.5;  // replay vs. logit distillation balance, in [0, 1]
  double lambda2 = 0.05;  // attention distillation magnitude, >= 0

  void validate() const;
};

// Scalar loss values; token terms in nats per token.
struct LossBreakdown {
  double task = 0.0;
  double replay = 0.0;
  double logit_distill = 0.0;
  double attention_distill = 0.0;
  double total = 0.0;
};

// total = task + λ1·replay + (1−λ1)·logit_distill + λ2·attention_distill.
LossBreakdown overall_loss(double task, double replay, double logit_distill, double attention_distill,
                           const LossWeights& weights);

// Mean over answer positions of −log p(true next token). `row_offset` is the
// first row of this sample inside a packed logits tensor.
Var task_loss(Var logits, const Sample& sample, std::size_t row_offset = 0);
double task_loss(const Tensor& logits, const Sample& sample);

struct ReplayLoss {
  std::optional<Var> value;  // empty when the batch has no replay items
  bool degenerate = true;
  double scalar() const { return value ? value->value()[0] : 0.0; }
};

// Mean task loss over the replay items of a batch forward.
ReplayLoss replay_loss(const BatchForward& forward, const Batch& batch);

// Mean over answer positions of KL(softmax(teacher) || softmax(student)).
Var logit_distill_loss(Var logits, const Sample& sample, const TeacherSignals& signals, std::size_t row_offset = 0);
double logit_distill_loss(const Tensor& student_logits, const Sample& sample, const TeacherSignals& signals);

// Σ_{(l,h)∈H} Σ_{t∈T_sample} KL(A^k_{l,h,t} || A_{l,h,t}); `attention` holds one
// [n_heads x T x T] node per layer for this sample.
Var attention_distill_loss(std::span<const Var> attention, const ReplayEntry& entry, const HeadSet& heads);
double attention_distill_loss(const AttentionRecord& student, const ReplayEntry& entry, const HeadSet& heads);

// Which terms of the overall objective a training method switches on.
struct ObjectiveTerms {
  bool replay = false;
  bool logit_distill = false;
  bool attention_distill = false;
};

struct BatchObjective {
  std::optional<Var> total;  // empty if nothing in the batch contributes
  LossBreakdown breakdown;
};

// Builds the overall objective for one batch on top of a packed forward over
// its items (in batch order). Terms whose weight is zero are not built.
BatchObjective batch_objective(const BatchForward& forward, const Batch& batch, const ObjectiveTerms& terms,
                               const LossWeights& weights, const HeadSet& selected_heads);

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, std::size_t step, const LossBreakdown& b);

}  // namespace seekr
