#include "seekr/replay.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seekr/checkpoint.hpp"
#include "seekr/error.hpp"
#include "seekr/rng.hpp"

namespace seekr {

std::string_view storage_policy_name(StoragePolicy p) {
  return p == StoragePolicy::full ? "full" : "selected_only";
}

StoragePolicy parse_storage_policy(std::string_view name) {
  if (name == "full") return StoragePolicy::full;
  if (name == "selected_only") return StoragePolicy::selected_only;
  throw ConfigError("storage_policy", "expected full or selected_only, got '" + std::string(name) + "'");
}

const Tensor* TeacherSignals::rows(std::size_t layer, std::size_t head) const {
  auto it = attention.find({layer, head});
  return it == attention.end() ? nullptr : &it->second;
}

std::size_t replay_count(std::size_t dataset_size, double ratio) {
  if (dataset_size == 0) return 0;
  const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(dataset_size)));
  return std::clamp<std::size_t>(n, 1, dataset_size);
}

std::vector<Sample> select_replay(const TaskDataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InputError("select_replay: ratio must lie in (0, 1]");
  if (dataset.train.empty()) throw InputError("select_replay: empty dataset");
  Rng rng(derive_seed(seed, "replay-select", static_cast<std::uint64_t>(dataset.kind)));
  const auto idx = rng.sample_without_replacement(dataset.train.size(), replay_count(dataset.train.size(), ratio));
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(dataset.train[i]);
  return out;
}

std::vector<ReplayEntry> capture_signals(const ModelState& teacher, const std::vector<Sample>& samples,
                                         std::size_t task, const CaptureOptions& options, std::uint64_t seed) {
  std::vector<ReplayEntry> out;
  if (samples.empty()) return out;
  std::vector<Tokens> seqs;
  seqs.reserve(samples.size());
  for (const auto& s : samples) seqs.push_back(s.sequence());
  ForwardOptions fopt;
  fopt.capture_attention = options.attention;
  fopt.record_backward = false;
  BatchForward fwd = forward_batch(teacher, seqs, fopt);
  const Tensor& logits = fwd.logits.value();
  const std::size_t vocab = logits.cols();
  const HeadSet covered = options.policy == StoragePolicy::full ? all_heads(teacher.config) : options.selected;

  for (std::size_t i = 0; i < samples.size(); ++i) {
    ReplayEntry e;
    e.task = task;
    e.sample = samples[i];
    const Sample& s = samples[i];
    const Segment seg = fwd.segments[i];
    e.signals.logits = Tensor({s.answer.size(), vocab});
    for (std::size_t r = 0; r < s.answer.size(); ++r) {
      const auto src = logits.row(seg.begin + s.first_prediction_row() + r);
      std::copy(src.begin(), src.end(), e.signals.logits.row(r).begin());
    }
    Rng rng(derive_seed(seed, "queries", task, i));
    e.signals.queries = rng.sample_without_replacement(seg.length, std::min(options.query_budget, seg.length));
    std::sort(e.signals.queries.begin(), e.signals.queries.end());
    if (options.attention) {
      const AttentionRecord rec = fwd.attention(i);
      for (const auto& [l, h] : covered) {
        Tensor rows({e.signals.queries.size(), seg.length});
        for (std::size_t qi = 0; qi < e.signals.queries.size(); ++qi) {
          const auto src = rec.row(l, h, e.signals.queries[qi]);
          std::copy(src.begin(), src.end(), rows.row(qi).begin());
        }
        e.signals.attention.emplace(std::make_pair(l, h), std::move(rows));
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

void ReplayBuffer::add_task(std::vector<ReplayEntry> entries) { per_task_.push_back(std::move(entries)); }

std::size_t ReplayBuffer::size() const {
  std::size_t n = 0;
  for (const auto& t : per_task_) n += t.size();
  return n;
}

std::vector<const ReplayEntry*> ReplayBuffer::entries() const {
  std::vector<const ReplayEntry*> out;
  for (const auto& t : per_task_)
    for (const auto& e : t) out.push_back(&e);
  return out;
}

std::vector<Batch> mixed_batches(const ReplayBuffer& buffer, const std::vector<Sample>& current,
                                 std::size_t current_task, std::size_t batch_size, std::uint64_t seed,
                                 std::size_t epoch) {
  if (batch_size == 0) throw InputError("mixed_batches: batch_size must be at least 1");
  Rng rng(derive_seed(seed, "batches", current_task, epoch));
  std::vector<std::size_t> order(current.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<const ReplayEntry*> replay = buffer.entries();
  rng.shuffle(replay);

  const std::size_t n_rep = replay.size();
  const std::size_t total = current.size() + n_rep;
  std::vector<BatchItem> stream;
  stream.reserve(total);
  std::size_t next_cur = 0;
  std::size_t next_rep = 0;
  for (std::size_t pos = 0; pos < total; ++pos) {
    const bool replay_slot =
        next_rep < n_rep && pos == ((2 * next_rep + 1) * total) / (2 * n_rep);
    if (replay_slot) {
      const ReplayEntry* e = replay[next_rep++];
      stream.push_back({&e->sample, e, e->task});
    } else {
      stream.push_back({&current[order[next_cur++]], nullptr, current_task});
    }
  }

  std::vector<Batch> batches;
  for (std::size_t b = 0; b < stream.size(); b += batch_size)
    batches.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(b),
                         stream.begin() + static_cast<std::ptrdiff_t>(std::min(stream.size(), b + batch_size)));
  return batches;
}

void save_signals(const std::filesystem::path& path, const TransformerConfig& config,
                  const std::vector<ReplayEntry>& entries) {
  TensorContainer c;
  c.config = config;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& sig = entries[i].signals;
    const std::string prefix = "sample" + std::to_string(i) + "/";
    c.tensors.push_back({prefix + "logits", sig.logits});
    Tensor q({sig.queries.size()});
    for (std::size_t j = 0; j < sig.queries.size(); ++j) q[j] = static_cast<double>(sig.queries[j]);
    c.tensors.push_back({prefix + "queries", std::move(q)});
    for (const auto& [lh, rows] : sig.attention)
      c.tensors.push_back(
          {prefix + "attn/l" + std::to_string(lh.first) + "h" + std::to_string(lh.second), rows});
  }
  write_container(path, c);
}

std::vector<TeacherSignals> load_signals(const std::filesystem::path& path, std::size_t sample_count) {
  const TensorContainer c = read_container(path);
  std::vector<TeacherSignals> out(sample_count);
  for (const auto& nt : c.tensors) {
    if (!nt.name.starts_with("sample")) throw IoError(path.string() + ": unexpected tensor " + nt.name);
    const auto slash = nt.name.find('/');
    const std::size_t idx = std::stoul(nt.name.substr(6, slash - 6));
    if (idx >= sample_count) throw IoError(path.string() + ": tensor for sample " + std::to_string(idx) + " beyond count");
    const std::string rest = nt.name.substr(slash + 1);
    TeacherSignals& sig = out[idx];
    if (rest == "logits") {
      sig.logits = nt.tensor;
    } else if (rest == "queries") {
      for (double v : nt.tensor.values()) sig.queries.push_back(static_cast<std::size_t>(v));
    } else if (rest.starts_with("attn/l")) {
      const auto hpos = rest.find('h', 6);
      const std::size_t l = std::stoul(rest.substr(6, hpos - 6));
      const std::size_t h = std::stoul(rest.substr(hpos + 1));
      sig.attention.emplace(std::make_pair(l, h), nt.tensor);
    } else {
      throw IoError(path.string() + ": unexpected tensor " + nt.name);
    }
  }
  return out;
}

}  // namespace seekr
