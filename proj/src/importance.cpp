#include "seekr/importance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "seekr/error.hpp"
#include "seekr/losses.hpp"
#include "seekr/rng.hpp"

namespace seekr {

HeadGrid::HeadGrid(std::size_t n_layers, std::size_t n_heads, std::vector<double> values)
    : n_layers_(n_layers), n_heads_(n_heads), values_(std::move(values)) {
  if (values_.size() != n_layers * n_heads) throw ContractError("HeadGrid: value count mismatch");
}

double HeadGrid::layer_sum(std::size_t l) const {
  double s = 0.0;
  for (std::size_t h = 0; h < n_heads_; ++h) s += at(l, h);
  return s;
}

std::string_view scorer_mode_name(ScorerMode m) {
  switch (m) {
    case ScorerMode::product: return "product";
    case ScorerMode::sensitivity_only: return "sensitivity_only";
    case ScorerMode::forgettability_only: return "forgettability_only";
    case ScorerMode::random: return "random";
  }
  return "?";
}

ScorerMode parse_scorer_mode(std::string_view name) {
  for (auto m : {ScorerMode::product, ScorerMode::sensitivity_only, ScorerMode::forgettability_only,
                 ScorerMode::random})
    if (scorer_mode_name(m) == name) return m;
  throw ConfigError("scorer_mode", "expected product, sensitivity_only, forgettability_only or random, got '" +
                                       std::string(name) + "'");
}

std::string_view layer_normalization_name(LayerNormalization n) { return n == LayerNormalization::sum ? "sum" : "max"; }

LayerNormalization parse_layer_normalization(std::string_view name) {
  if (name == "sum") return LayerNormalization::sum;
  if (name == "max") return LayerNormalization::max;
  throw ConfigError("layer_normalization", "expected sum or max, got '" + std::string(name) + "'");
}

namespace {

std::vector<Tokens> sequences_of(const std::vector<Sample>& samples) {
  std::vector<Tokens> seqs;
  seqs.reserve(samples.size());
  for (const auto& s : samples) seqs.push_back(s.sequence());
  return seqs;
}

// Frobenius norm of head h in a [n_heads x T x T] tensor.
double head_norm(const Tensor& t, std::size_t h) {
  const std::size_t block = t.dim(1) * t.dim(2);
  double s = 0.0;
  for (std::size_t i = h * block; i < (h + 1) * block; ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

double head_diff_norm(const Tensor& a, const Tensor& b, std::size_t h) {
  const std::size_t block = a.dim(1) * a.dim(2);
  double s = 0.0;
  for (std::size_t i = h * block; i < (h + 1) * block; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

bool ahead(double a, double b) {
  const double tol = 1e-12 * std::max(std::abs(a), std::abs(b));
  return a > b + tol;
}

}  // namespace

HeadGrid task_sensitivity(const ModelState& teacher, const std::vector<Sample>& samples,
                          const ImportanceOptions& options) {
  if (samples.empty()) throw InputError("task_sensitivity: empty sample list");
  const auto& cfg = teacher.config;
  const auto seqs = sequences_of(samples);
  ForwardOptions fopt;
  fopt.capture_attention = true;
  BatchForward fwd = forward_batch(teacher, seqs, fopt);
  // Samples do not interact, so the gradient of the summed loss at sample s's
  // attention equals the gradient of that sample's own loss.
  std::vector<Var> losses;
  for (std::size_t s = 0; s < samples.size(); ++s)
    losses.push_back(task_loss(fwd.logits, samples[s], fwd.segments[s].begin));
  const std::vector<double> ones(losses.size(), 1.0);
  fwd.tape->backward(ops::weighted_sum(losses, ones));

  HeadGrid out(cfg.n_layers, cfg.n_heads);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const AttentionRecord g = fwd.attention_gradients(s);
    const double scale = options.per_token ? 1.0 / static_cast<double>(seqs[s].size()) : 1.0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
      for (std::size_t h = 0; h < cfg.n_heads; ++h) out.at(l, h) += scale * head_norm(g.layers[l], h);
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h) out.at(l, h) *= inv;
  return out;
}

HeadGrid layer_normalize(const HeadGrid& raw, LayerNormalization mode) {
  HeadGrid out(raw.n_layers(), raw.n_heads());
  for (std::size_t l = 0; l < raw.n_layers(); ++l) {
    double denom = 0.0;
    for (std::size_t h = 0; h < raw.n_heads(); ++h)
      denom = mode == LayerNormalization::sum ? denom + raw.at(l, h) : std::max(denom, raw.at(l, h));
    if (denom <= 0.0) continue;
    for (std::size_t h = 0; h < raw.n_heads(); ++h) out.at(l, h) = raw.at(l, h) / denom;
  }
  return out;
}

HeadGrid forgettability_increment(const ModelState& current, const ModelState* previous,
                                  const std::vector<Sample>& samples, const ImportanceOptions& options) {
  if (!previous) throw OrchestrationError("forgettability_increment: previous checkpoint is not available");
  if (samples.empty()) throw InputError("forgettability_increment: empty sample list");
  const auto& cfg = current.config;
  if (!(previous->config == cfg)) throw OrchestrationError("forgettability_increment: checkpoint configs differ");
  const auto seqs = sequences_of(samples);
  ForwardOptions fopt;
  fopt.capture_attention = true;
  fopt.record_backward = false;
  const BatchForward now = forward_batch(current, seqs, fopt);
  const BatchForward before = forward_batch(*previous, seqs, fopt);
  HeadGrid out(cfg.n_layers, cfg.n_heads);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const double scale = options.per_token ? 1.0 / static_cast<double>(seqs[s].size()) : 1.0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const Tensor& a = now.attention_nodes[s][l].value();
      const Tensor& b = before.attention_nodes[s][l].value();
      for (std::size_t h = 0; h < cfg.n_heads; ++h) out.at(l, h) += scale * head_diff_norm(a, b, h);
    }
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h) out.at(l, h) *= inv;
  return out;
}

HeadGrid fuse_importance(const HeadGrid& s, const HeadGrid& f) {
  if (s.n_layers() != f.n_layers() || s.n_heads() != f.n_heads()) throw ContractError("fuse_importance: shape");
  HeadGrid out(s.n_layers(), s.n_heads());
  for (std::size_t l = 0; l < s.n_layers(); ++l)
    for (std::size_t h = 0; h < s.n_heads(); ++h) out.at(l, h) = s.at(l, h) * f.at(l, h);
  return out;
}

HeadScoreTable HeadScoreTable::zeros(std::size_t n_layers, std::size_t n_heads) {
  HeadScoreTable t;
  for (auto* g : {&t.last_raw, &t.last_normalized, &t.sensitivity, &t.forgettability, &t.importance})
    *g = HeadGrid(n_layers, n_heads);
  return t;
}

void HeadScoreTable::accumulate_sensitivity(std::size_t task, const HeadGrid& raw, const HeadGrid& normalized) {
  if (!sensitivity_tasks.insert(task).second)
    throw UsageError("accumulate_sensitivity: task " + std::to_string(task) + " already accumulated");
  last_raw = raw;
  last_normalized = normalized;
  for (std::size_t l = 0; l < sensitivity.n_layers(); ++l)
    for (std::size_t h = 0; h < sensitivity.n_heads(); ++h) sensitivity.at(l, h) += normalized.at(l, h);
}

void HeadScoreTable::accumulate_forgettability(std::size_t task, const HeadGrid& increment) {
  if (!forgettability_tasks.insert(task).second)
    throw UsageError("accumulate_forgettability: task " + std::to_string(task) + " already accumulated");
  for (std::size_t l = 0; l < forgettability.n_layers(); ++l)
    for (std::size_t h = 0; h < forgettability.n_heads(); ++h) forgettability.at(l, h) += increment.at(l, h);
}

SelectionState select_top(const HeadGrid& scores, const Budgets& budgets) {
  if (budgets.layers == 0 || budgets.heads == 0) throw InputError("allocate_budget: budgets must be at least 1");
  const std::size_t n_layers = scores.n_layers();
  const std::size_t n_heads = scores.n_heads();
  SelectionState sel;
  sel.budgets = budgets;

  std::vector<double> layer_key(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) layer_key[l] = scores.layer_sum(l);
  std::vector<bool> taken_layer(n_layers, false);
  const std::size_t n_l = std::min(budgets.layers, n_layers);
  for (std::size_t k = 0; k < n_l; ++k) {
    std::size_t best = n_layers;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (taken_layer[l]) continue;
      if (best == n_layers || ahead(layer_key[l], layer_key[best])) best = l;
    }
    taken_layer[best] = true;
  }
  for (std::size_t l = 0; l < n_layers; ++l)
    if (taken_layer[l]) sel.layers.push_back(l);

  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t l : sel.layers)
    for (std::size_t h = 0; h < n_heads; ++h) pool.emplace_back(l, h);
  std::vector<bool> taken(pool.size(), false);
  const std::size_t n_h = std::min(budgets.heads, pool.size());
  for (std::size_t k = 0; k < n_h; ++k) {
    std::size_t best = pool.size();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (taken[i]) continue;
      if (best == pool.size() ||
          ahead(scores.at(pool[i].first, pool[i].second), scores.at(pool[best].first, pool[best].second)))
        best = i;
    }
    taken[best] = true;
    sel.heads.insert(pool[best]);
  }
  return sel;
}

SelectionState allocate_budget(const HeadScoreTable& table, const Budgets& budgets, std::uint64_t seed,
                               ScorerMode mode) {
  switch (mode) {
    case ScorerMode::product:
      return select_top(table.importance, budgets);
    case ScorerMode::sensitivity_only:
      return select_top(table.sensitivity, budgets);
    case ScorerMode::forgettability_only:
      return select_top(table.forgettability, budgets);
    case ScorerMode::random: {
      HeadGrid keys(table.importance.n_layers(), table.importance.n_heads());
      Rng rng(derive_seed(seed, "scorer-random"));
      for (std::size_t l = 0; l < keys.n_layers(); ++l)
        for (std::size_t h = 0; h < keys.n_heads(); ++h) keys.at(l, h) = rng.uniform();
      return select_top(keys, budgets);
    }
  }
  throw ConfigError("scorer_mode", "unhandled mode");
}

void write_importance_csv(const std::filesystem::path& path, const HeadScoreTable& table,
                          const SelectionState& selection) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "layer,head,S_raw,S_norm_accum,F,I,selected\n" << std::setprecision(17);
  for (std::size_t l = 0; l < table.importance.n_layers(); ++l) {
    for (std::size_t h = 0; h < table.importance.n_heads(); ++h) {
      os << l << ',' << h << ',' << table.last_raw.at(l, h) << ',' << table.sensitivity.at(l, h) << ','
         << table.forgettability.at(l, h) << ',' << table.importance.at(l, h) << ','
         << (selection.heads.count({l, h}) ? 1 : 0) << '\n';
    }
  }
}

std::vector<ImportanceCsvRow> read_importance_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "layer,head,S_raw,S_norm_accum,F,I,selected") throw ParseError(1, "unexpected importance CSV header");
  std::vector<ImportanceCsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ImportanceCsvRow r;
    char c1, c2, c3, c4, c5, c6;
    int selected = 0;
    if (!(ls >> r.layer >> c1 >> r.head >> c2 >> r.s_raw >> c3 >> r.s_norm_accum >> c4 >> r.forgettability >> c5 >>
          r.importance >> c6 >> selected))
      throw ParseError(line_no, "malformed importance row");
    r.selected = selected != 0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace seekr
