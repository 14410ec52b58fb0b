#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "seekr/model.hpp"
#include "seekr/tasks.hpp"

namespace seekr {

enum class StoragePolicy {
  full,           // attention rows for every head
  selected_only,  // only heads selected when the signals were captured
};

std::string_view storage_policy_name(StoragePolicy p);
StoragePolicy parse_storage_policy(std::string_view name);

// Teacher outputs saved with one replay sample.
struct TeacherSignals {
  // [answer_len x vocab]: row i predicts answer token i.
  Tensor logits;
  // Query positions T_sample in x ⊕ y, ascending.
  std::vector<std::size_t> queries;
  // (layer, head) -> [queries x seq_len]; row i is A_{l,h,queries[i]}, zero past the query.
  std::map<std::pair<std::size_t, std::size_t>, Tensor> attention;

  const Tensor* rows(std::size_t layer, std::size_t head) const;
  friend bool operator==(const TeacherSignals&, const TeacherSignals&) = default;
};

struct ReplayEntry {
  std::size_t task = 0;  // source task index (0-based position in the run's sequence)
  Sample sample;
  TeacherSignals signals;

  friend bool operator==(const ReplayEntry&, const ReplayEntry&) = default;
};

// round(ratio * n) with a floor of one.
std::size_t replay_count(std::size_t dataset_size, double ratio);

std::vector<Sample> select_replay(const TaskDataset& dataset, double ratio, std::uint64_t seed);

struct CaptureOptions {
  StoragePolicy policy = StoragePolicy::full;
  HeadSet selected;  // used by selected_only
  std::size_t query_budget = 32;
  bool attention = true;  // false stores logits and queries only
};

std::vector<ReplayEntry> capture_signals(const ModelState& teacher, const std::vector<Sample>& samples,
                                         std::size_t task, const CaptureOptions& options, std::uint64_t seed);

// Per-task replay memory. A task's entries are frozen once added.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  explicit ReplayBuffer(double ratio) : ratio_(ratio) {}

  double ratio() const noexcept { return ratio_; }
  void add_task(std::vector<ReplayEntry> entries);
  std::size_t task_count() const noexcept { return per_task_.size(); }
  const std::vector<ReplayEntry>& task_entries(std::size_t k) const { return per_task_.at(k); }
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  // All entries, grouped by task in insertion order.
  std::vector<const ReplayEntry*> entries() const;

 private:
  double ratio_ = 0.0;
  std::vector<std::vector<ReplayEntry>> per_task_;
};

struct BatchItem {
  const Sample* sample = nullptr;
  const ReplayEntry* entry = nullptr;  // set for replay items
  std::size_t source_task = 0;

  bool is_replay() const noexcept { return entry != nullptr; }
};
using Batch = std::vector<BatchItem>;

// One epoch of batches: current samples and buffer entries each shuffled, then
// merged so replay items sit evenly spaced at the volume ratio |R| : |D|.
std::vector<Batch> mixed_batches(const ReplayBuffer& buffer, const std::vector<Sample>& current,
                                 std::size_t current_task, std::size_t batch_size, std::uint64_t seed,
                                 std::size_t epoch);

// Signal files use the checkpoint container; tensors per sample are named
// sample{idx}/logits, sample{idx}/queries and sample{idx}/attn/l{l}h{h}.
void save_signals(const std::filesystem::path& path, const TransformerConfig& config,
                  const std::vector<ReplayEntry>& entries);
std::vector<TeacherSignals> load_signals(const std::filesystem::path& path, std::size_t sample_count);

}  // namespace seekr
