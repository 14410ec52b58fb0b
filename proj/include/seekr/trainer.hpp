#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seekr/importance.hpp"
#include "seekr/losses.hpp"
#include "seekr/model.hpp"
#include "seekr/optimizer.hpp"
#include "seekr/replay.hpp"
#include "seekr/tasks.hpp"

namespace seekr {

enum class Method { seqft, replay, derpp, seekr, mtl };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct RunConfig {
  Method method = Method::seekr;
  std::vector<TaskKind> tasks{TaskKind::copy, TaskKind::reverse, TaskKind::sort, TaskKind::modadd};
  // Per-task data seeds; empty means derived from `seed`.
  std::vector<std::uint64_t> task_seeds;
  std::size_t train_size = 3000;
  std::size_t test_size = 200;
  GeneratorOptions generator;

  TransformerConfig model;
  double init_std = 0.05;

  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer;

  LossWeights weights;
  Budgets budgets;
  double replay_ratio = 0.01;
  ScorerMode scorer = ScorerMode::product;
  StoragePolicy storage = StoragePolicy::full;
  ImportanceOptions importance;

  std::uint64_t seed = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;
  // Weights after the method's constraints (replay: λ1=1, λ2=0; derpp: λ2=0).
  LossWeights effective_weights() const;
  ObjectiveTerms objective_terms() const;
  bool uses_buffer() const;
  std::uint64_t task_seed(std::size_t i) const;
};

// a[i][j]: accuracy on task i after training through column j. Sequential
// runs have one column per task; MTL has a single column.
class MetricsMatrix {
 public:
  MetricsMatrix() = default;
  MetricsMatrix(std::size_t n_tasks, std::size_t n_columns);

  std::size_t n_tasks() const noexcept { return n_tasks_; }
  std::size_t n_columns() const noexcept { return n_columns_; }
  void set(std::size_t task, std::size_t column, double accuracy);
  std::optional<double> get(std::size_t task, std::size_t column) const;

  friend bool operator==(const MetricsMatrix&, const MetricsMatrix&) = default;

 private:
  std::size_t n_tasks_ = 0;
  std::size_t n_columns_ = 0;
  std::vector<std::optional<double>> values_;
};

// Lower-triangular matrix from rows {{a11}, {a12, a22}, ...} indexed [column][task].
MetricsMatrix matrix_from_columns(const std::vector<std::vector<double>>& columns);

struct OpBwt {
  double op = 0.0;
  std::optional<double> bwt;  // empty when T = 1 or for a single-column (MTL) matrix
};

OpBwt compute_op_bwt(const MetricsMatrix& matrix);

void write_matrix_csv(const std::filesystem::path& path, const MetricsMatrix& matrix);
MetricsMatrix read_matrix_csv(const std::filesystem::path& path);

struct SummaryRow {
  std::string method;
  std::uint64_t seed = 0;
  double op = 0.0;
  std::optional<double> bwt;
};
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
std::string format_optional(const std::optional<double>& v);

// Exact-match accuracy of greedy decoding on `samples`.
double evaluate(const ModelState& model, const std::vector<Sample>& samples, const ModelState* graft_source = nullptr,
                const HeadSet& graft_heads = {});

struct GraftRow {
  std::size_t task = 0;
  TaskKind kind = TaskKind::copy;
  double plain = 0.0;
  double grafted = 0.0;
};

// Plain vs grafted accuracy of `final_model` on each task's test split, with
// checkpoint j's attention injected at every head for task j.
std::vector<GraftRow> grafting_diagnostic(const ModelState& final_model,
                                          const std::vector<const ModelState*>& checkpoints,
                                          const std::vector<TaskDataset>& datasets);
void write_graft_csv(const std::filesystem::path& path, const std::vector<GraftRow>& rows);

struct StepRecord {
  std::size_t step = 0;
  std::size_t task = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct TaskBoundary {
  std::size_t task = 0;
  SelectionState selection;
  const HeadScoreTable* scores = nullptr;
};

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // no artifacts when empty
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TaskBoundary&)> on_boundary;
  std::function<void(const std::string&)> log;
};

struct RunResult {
  MetricsMatrix matrix;
  OpBwt summary;
  ModelState final_model;
  std::vector<ModelState> checkpoints;  // after each task (one for MTL)
  std::vector<TaskDataset> datasets;
  std::vector<StepRecord> steps;
  HeadScoreTable scores;
  SelectionState selection;
};

std::vector<TaskDataset> build_datasets(const RunConfig& config);

// Sequential training per the configured method. Errors inside training are
// rethrown as TrainingError carrying the task, epoch and step.
RunResult run(const RunConfig& config, const RunOptions& options = {});

}  // namespace seekr
