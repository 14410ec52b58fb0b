#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string_view>
#include <vector>

#include "seekr/model.hpp"
#include "seekr/tasks.hpp"

namespace seekr {

// One non-negative score per (layer, head).
class HeadGrid {
 public:
  HeadGrid() = default;
  HeadGrid(std::size_t n_layers, std::size_t n_heads, double fill = 0.0)
      : n_layers_(n_layers), n_heads_(n_heads), values_(n_layers * n_heads, fill) {}
  HeadGrid(std::size_t n_layers, std::size_t n_heads, std::vector<double> values);

  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t n_heads() const noexcept { return n_heads_; }
  double& at(std::size_t l, std::size_t h) { return values_[l * n_heads_ + h]; }
  double at(std::size_t l, std::size_t h) const { return values_[l * n_heads_ + h]; }
  const std::vector<double>& values() const noexcept { return values_; }
  double layer_sum(std::size_t l) const;

  friend bool operator==(const HeadGrid&, const HeadGrid&) = default;

 private:
  std::size_t n_layers_ = 0;
  std::size_t n_heads_ = 0;
  std::vector<double> values_;
};

enum class ScorerMode { product, sensitivity_only, forgettability_only, random };
std::string_view scorer_mode_name(ScorerMode m);
ScorerMode parse_scorer_mode(std::string_view name);

enum class LayerNormalization { sum, max };
std::string_view layer_normalization_name(LayerNormalization n);
LayerNormalization parse_layer_normalization(std::string_view name);

struct ImportanceOptions {
  LayerNormalization normalization = LayerNormalization::sum;
  bool per_token = false;  // divide per-sample norms by sequence length
};

// S^k_{l,h}: mean over samples of ||∂L/∂A_{l,h}||_F under the teacher.
HeadGrid task_sensitivity(const ModelState& teacher, const std::vector<Sample>& samples,
                          const ImportanceOptions& options = {});

// Per-layer normalization; a layer whose raw scores are all zero stays zero.
HeadGrid layer_normalize(const HeadGrid& raw, LayerNormalization mode = LayerNormalization::sum);

// Mean over samples of ||A^k_{l,h} − A^{k−1}_{l,h}||_F. `previous` must be non-null.
HeadGrid forgettability_increment(const ModelState& current, const ModelState* previous,
                                  const std::vector<Sample>& samples, const ImportanceOptions& options = {});

HeadGrid fuse_importance(const HeadGrid& sensitivity, const HeadGrid& forgettability);

struct Budgets {
  std::size_t layers = 4;   // B_L
  std::size_t heads = 16;   // B_H
  std::size_t queries = 32; // B_T
};

struct SelectionState {
  Budgets budgets;
  std::vector<std::size_t> layers;  // L, ascending
  HeadSet heads;                    // H
};

// Running S, F and I tables across task boundaries.
struct HeadScoreTable {
  HeadGrid last_raw;         // S^k of the most recent task
  HeadGrid last_normalized;  // S̃^k of the most recent task
  HeadGrid sensitivity;      // S = Σ_k S̃^k
  HeadGrid forgettability;   // F = Σ_k increments
  HeadGrid importance;       // I = S · F
  std::set<std::size_t> sensitivity_tasks;
  std::set<std::size_t> forgettability_tasks;

  static HeadScoreTable zeros(std::size_t n_layers, std::size_t n_heads);
  // UsageError if `task` was already accumulated.
  void accumulate_sensitivity(std::size_t task, const HeadGrid& raw, const HeadGrid& normalized);
  void accumulate_forgettability(std::size_t task, const HeadGrid& increment);
  void refresh_importance() { importance = fuse_importance(sensitivity, forgettability); }
};

// Top-B_L layers by Σ_h score, then top-B_H heads inside them. Ties (relative
// difference <= 1e-12) go to the lower layer, then the lower head index.
SelectionState select_top(const HeadGrid& scores, const Budgets& budgets);

// Chooses the ranking key for `mode` (random draws it from `seed`) and calls select_top.
SelectionState allocate_budget(const HeadScoreTable& table, const Budgets& budgets, std::uint64_t seed,
                               ScorerMode mode);

// Columns: layer, head, S_raw, S_norm_accum, F, I, selected.
void write_importance_csv(const std::filesystem::path& path, const HeadScoreTable& table,
                          const SelectionState& selection);

struct ImportanceCsvRow {
  std::size_t layer = 0;
  std::size_t head = 0;
  double s_raw = 0.0;
  double s_norm_accum = 0.0;
  double forgettability = 0.0;
  double importance = 0.0;
  bool selected = false;
};
std::vector<ImportanceCsvRow> read_importance_csv(const std::filesystem::path& path);

}  // namespace seekr
