#include "seekr/losses.hpp"

#include <iomanip>
#include <map>

#include "seekr/error.hpp"

namespace seekr {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw ConfigError("lambda1", "must lie in [0, 1]");
  if (!(lambda2 >= 0.0)) throw ConfigError("lambda2", "must be non-negative");
}

LossBreakdown overall_loss(double task, double replay, double logit_distill, double attention_distill,
                           const LossWeights& w) {
  LossBreakdown b{task, replay, logit_distill, attention_distill, 0.0};
  b.total = task + w.lambda1 * replay + (1.0 - w.lambda1) * logit_distill + w.lambda2 * attention_distill;
  return b;
}

Var task_loss(Var logits, const Sample& sample, std::size_t row_offset) {
  const std::size_t n = sample.answer.size();
  if (n == 0) throw InputError("task_loss: sample has no answer positions");
  if (row_offset + sample.length() > logits.value().rows())
    throw InputError("task_loss: logits do not cover the sample's positions");
  std::vector<RowTarget> targets;
  targets.reserve(n);
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    targets.push_back({row_offset + sample.first_prediction_row() + i, sample.answer[i], w});
  return ops::nll_rows(logits, targets);
}

double task_loss(const Tensor& logits, const Sample& sample) {
  Tape tape(false);
  return task_loss(tape.constant_ref(logits), sample).value()[0];
}

ReplayLoss replay_loss(const BatchForward& forward, const Batch& batch) {
  std::vector<Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch[i].is_replay()) terms.push_back(task_loss(forward.logits, *batch[i].sample, forward.segments[i].begin));
  ReplayLoss out;
  if (terms.empty()) return out;
  const std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
  out.value = ops::weighted_sum(terms, w);
  out.degenerate = false;
  return out;
}

Var logit_distill_loss(Var logits, const Sample& sample, const TeacherSignals& signals, std::size_t row_offset) {
  const std::size_t n = sample.answer.size();
  if (signals.logits.rank() != 2 || signals.logits.rows() != n) {
    throw InputError("logit_distill_loss: teacher has " +
                     std::to_string(signals.logits.rank() == 2 ? signals.logits.rows() : 0) +
                     " answer positions, sample has " + std::to_string(n));
  }
  if (row_offset + sample.length() > logits.value().rows())
    throw InputError("logit_distill_loss: logits do not cover the sample's positions");
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = row_offset + sample.first_prediction_row() + i;
  const std::vector<double> w(n, 1.0 / static_cast<double>(n));
  return ops::kl_rows(logits, rows, signals.logits, w);
}

double logit_distill_loss(const Tensor& student_logits, const Sample& sample, const TeacherSignals& signals) {
  Tape tape(false);
  return logit_distill_loss(tape.constant_ref(student_logits), sample, signals).value()[0];
}

Var attention_distill_loss(std::span<const Var> attention, const ReplayEntry& entry, const HeadSet& heads) {
  if (attention.empty()) throw ContractError("attention_distill_loss: no attention nodes");
  Tape* tape = attention.front().tape;
  const auto& sig = entry.signals;
  std::map<std::size_t, std::vector<AttentionTarget>> per_layer;
  for (const auto& [l, h] : heads) {
    if (l >= attention.size()) throw ContractError("attention_distill_loss: selected layer out of range");
    const Tensor* rows = sig.rows(l, h);
    if (!rows) {
      throw SignalCoverageError("attention_distill_loss: no stored teacher rows for head (" + std::to_string(l) + ", " +
                                std::to_string(h) + ") of a task-" + std::to_string(entry.task) +
                                " replay entry; capture signals with storage_policy=full");
    }
    const std::size_t seq_len = attention[l].value().dim(1);
    if (rows->rank() != 2 || rows->rows() != sig.queries.size() || rows->cols() != seq_len)
      throw InputError("attention_distill_loss: stored rows do not match the sample's length");
    auto& targets = per_layer[l];
    for (std::size_t qi = 0; qi < sig.queries.size(); ++qi) targets.push_back({h, sig.queries[qi], rows->row(qi)});
  }
  if (per_layer.empty()) return tape->constant(Tensor::scalar(0.0));
  std::vector<Var> terms;
  for (const auto& [l, targets] : per_layer) terms.push_back(ops::attention_kl(attention[l], targets, 1.0));
  if (terms.size() == 1) return terms.front();
  const std::vector<double> ones(terms.size(), 1.0);
  return ops::weighted_sum(terms, ones);
}

double attention_distill_loss(const AttentionRecord& student, const ReplayEntry& entry, const HeadSet& heads) {
  Tape tape(false);
  std::vector<Var> nodes;
  for (const Tensor& t : student.layers) nodes.push_back(tape.constant_ref(t));
  return attention_distill_loss(nodes, entry, heads).value()[0];
}

namespace {

Var mean_of(const std::vector<Var>& terms) {
  const std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
  return ops::weighted_sum(terms, w);
}

}  // namespace

BatchObjective batch_objective(const BatchForward& fwd, const Batch& batch, const ObjectiveTerms& terms,
                               const LossWeights& weights, const HeadSet& selected_heads) {
  if (fwd.sequence_count() != batch.size()) throw ContractError("batch_objective: forward/batch size mismatch");
  const bool use_replay = terms.replay && weights.lambda1 > 0.0;
  const bool use_ld = terms.logit_distill && (1.0 - weights.lambda1) > 0.0;
  const bool use_ad = terms.attention_distill && weights.lambda2 > 0.0;

  std::vector<Var> task_terms, replay_terms, ld_terms, ad_terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const BatchItem& item = batch[i];
    const std::size_t off = fwd.segments[i].begin;
    if (!item.is_replay()) {
      task_terms.push_back(task_loss(fwd.logits, *item.sample, off));
      continue;
    }
    if (use_replay) replay_terms.push_back(task_loss(fwd.logits, *item.sample, off));
    if (use_ld) ld_terms.push_back(logit_distill_loss(fwd.logits, *item.sample, item.entry->signals, off));
    if (use_ad) ad_terms.push_back(attention_distill_loss(fwd.attention_nodes[i], *item.entry, selected_heads));
  }

  BatchObjective out;
  std::vector<Var> parts;
  std::vector<double> coeffs;
  auto add_term = [&](const std::vector<Var>& group, double coeff, double& slot) {
    if (group.empty()) return;
    Var m = mean_of(group);
    slot = m.value()[0];
    parts.push_back(m);
    coeffs.push_back(coeff);
  };
  add_term(task_terms, 1.0, out.breakdown.task);
  add_term(replay_terms, weights.lambda1, out.breakdown.replay);
  add_term(ld_terms, 1.0 - weights.lambda1, out.breakdown.logit_distill);
  add_term(ad_terms, weights.lambda2, out.breakdown.attention_distill);
  out.breakdown = overall_loss(out.breakdown.task, out.breakdown.replay, out.breakdown.logit_distill,
                               out.breakdown.attention_distill, weights);
  if (!parts.empty()) out.total = ops::weighted_sum(parts, coeffs);
  return out;
}

void write_loss_csv_header(std::ostream& os) { os << "step,task,replay,logit_distill,attention_distill,total\n"; }

void write_loss_csv_row(std::ostream& os, std::size_t step, const LossBreakdown& b) {
  os << step << ',' << std::setprecision(17) << b.task << ',' << b.replay << ',' << b.logit_distill << ','
     << b.attention_distill << ',' << b.total << '\n';
}

}  // namespace seekr
