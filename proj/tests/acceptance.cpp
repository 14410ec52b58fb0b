// Acceptance gate. Prints one PASS/FAIL line per criterion; exit status 1 if any fails.
//   acceptance [fast|trends|all]

#include <algorithm>
#include <array>
#include <set>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "seekr/checkpoint.hpp"
#include "seekr/importance.hpp"
#include "seekr/losses.hpp"
#include "seekr/replay.hpp"
#include "seekr/rng.hpp"
#include "seekr/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny_run.hpp"

using namespace seekr;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.dims() == b.dims() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// 1 ---------------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  {
    const check::GradFixture fx(11);
    for (const auto& rep : {check::check_parameter_gradients(fx), check::check_attention_gradients(fx)}) {
      checked += rep.checked;
      if (rep.max_error > worst) {
        worst = rep.max_error;
        where = rep.worst;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, std::to_string(checked) + " entries, max rel error " + fmt(worst) + " at " +
                                           where + ", " + fmt(secs, 3) + " s"};
}

// 2 ---------------------------------------------------------------------------

Verdict attention_invariants() {
  Rng rng(derive_seed(2024, "acceptance-attention"));
  double worst_sum = 0.0;
  std::size_t masked_violations = 0;
  std::size_t rows = 0;
  for (std::size_t trial = 0; trial < 1000; ++trial) {
    TransformerConfig cfg;
    cfg.n_layers = 1 + rng.below(3);
    cfg.n_heads = 1 + rng.below(4);
    cfg.d_k = 4 + rng.below(5);
    cfg.d_model = cfg.n_heads * cfg.d_k;
    cfg.d_ff = 2 * cfg.d_model;
    cfg.max_seq_len = 24;
    // Wide init scales push some softmax rows toward one-hot.
    const double init_std = 0.02 * std::pow(100.0, rng.uniform());
    const ModelState m = ModelState::initialize(cfg, trial, init_std);
    std::vector<Tokens> seqs(1 + rng.below(3));
    for (auto& s : seqs) {
      s.resize(1 + rng.below(cfg.max_seq_len));
      for (auto& t : s) t = static_cast<TokenId>(rng.below(cfg.vocab_size));
    }
    ForwardOptions opt;
    opt.capture_attention = true;
    opt.record_backward = false;
    const BatchForward fwd = forward_batch(m, seqs, opt);
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const AttentionRecord rec = fwd.attention(s);
      for (std::size_t l = 0; l < cfg.n_layers; ++l)
        for (std::size_t h = 0; h < cfg.n_heads; ++h)
          for (std::size_t q = 0; q < rec.seq_len; ++q) {
            const auto row = rec.row(l, h, q);
            double sum = 0.0;
            for (std::size_t k = 0; k < row.size(); ++k) {
              if (k > q && row[k] != 0.0) ++masked_violations;
              sum += row[k];
            }
            worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
            ++rows;
          }
    }
  }
  return {worst_sum <= 1e-8 && masked_violations == 0,
          std::to_string(rows) + " rows, max |sum-1| " + fmt(worst_sum) + ", nonzero masked entries " +
              std::to_string(masked_violations)};
}

// 3 ---------------------------------------------------------------------------

Verdict self_distillation_zeros() {
  double worst_logit = 0.0;
  double worst_attention = 0.0;
  const std::vector<TaskKind> kinds{TaskKind::copy, TaskKind::reverse, TaskKind::sort, TaskKind::modadd,
                                    TaskKind::parity, TaskKind::kvlookup};
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    TransformerConfig cfg = check::tiny_config();
    cfg.max_seq_len = 24;
    const ModelState m = ModelState::initialize(cfg, trial, trial % 2 ? 0.5 : 0.05);
    std::vector<Sample> samples;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto ds = generate_task(kinds[(trial + k) % kinds.size()], trial * 10 + k, 2, 1, {2, 6});
      samples.insert(samples.end(), ds.train.begin(), ds.train.end());
    }
    CaptureOptions copt;
    copt.query_budget = 1 + trial % 8;
    const auto entries = capture_signals(m, samples, 0, copt, trial);

    // The student sees the batch in reverse order, so packing differs from capture.
    std::vector<Tokens> seqs;
    for (auto it = samples.rbegin(); it != samples.rend(); ++it) seqs.push_back(it->sequence());
    ForwardOptions fopt;
    fopt.capture_attention = true;
    const BatchForward fwd = forward_batch(m, seqs, fopt);
    const HeadSet heads = all_heads(cfg);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t j = samples.size() - 1 - i;
      const auto& seg = fwd.segments[j];
      const Var ld = logit_distill_loss(fwd.logits, samples[i], entries[i].signals, seg.begin);
      const Var ad = attention_distill_loss(fwd.attention_nodes[j], entries[i], heads);
      const double ld_t = logit_distill_loss(fwd.sequence_logits(j), samples[i], entries[i].signals);
      const double ad_t = attention_distill_loss(fwd.attention(j), entries[i], heads);
      worst_logit = std::max({worst_logit, std::abs(ld.value()[0]), std::abs(ld_t)});
      worst_attention = std::max({worst_attention, std::abs(ad.value()[0]), std::abs(ad_t)});
    }
  }
  return {worst_logit <= 1e-12 && worst_attention <= 1e-12,
          "max logit KL " + fmt(worst_logit) + ", max attention KL " + fmt(worst_attention)};
}

// 4 ---------------------------------------------------------------------------

struct Trajectory {
  std::vector<double> totals;
  ModelState final_model;
};

Trajectory trajectory(const RunConfig& c) {
  const RunResult r = run(c);
  Trajectory t{{}, r.final_model};
  for (const auto& s : r.steps) t.totals.push_back(s.loss.total);
  return t;
}

Verdict reduction_equalities() {
  std::vector<std::string> notes;
  bool ok = true;
  for (std::uint64_t seed : {1, 2}) {
    RunConfig seekr0 = check::tiny_run(Method::seekr, seed);
    seekr0.weights.lambda2 = 0.0;
    RunConfig derpp1 = check::tiny_run(Method::derpp, seed);
    derpp1.weights.lambda1 = 1.0;
    RunConfig empty = check::tiny_run(Method::replay, seed);
    empty.replay_ratio = 0.0;
    const std::vector<std::tuple<std::string, RunConfig, RunConfig>> pairs{
        {"seekr(l2=0)~derpp", seekr0, check::tiny_run(Method::derpp, seed)},
        {"derpp(l1=1)~replay", derpp1, check::tiny_run(Method::replay, seed)},
        {"replay(empty)~seqft", empty, check::tiny_run(Method::seqft, seed)}};
    for (const auto& [name, a_cfg, b_cfg] : pairs) {
      const Trajectory a = trajectory(a_cfg);
      const Trajectory b = trajectory(b_cfg);
      double diff = a.totals.size() == b.totals.size() ? 0.0 : INFINITY;
      for (std::size_t i = 0; i < std::min(a.totals.size(), b.totals.size()); ++i)
        diff = std::max(diff, std::abs(a.totals[i] - b.totals[i]));
      const bool bits = bit_identical(a.final_model, b.final_model);
      ok = ok && diff <= 1e-12 && bits;
      if (seed == 1) notes.push_back(name + " max step diff " + fmt(diff) + (bits ? " bit-identical" : " PARAMS DIFFER"));
    }
  }
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail + " (seeds 1,2)"};
}

// 5 ---------------------------------------------------------------------------

Verdict op_bwt_unit() {
  const auto r = compute_op_bwt(matrix_from_columns({{0.9}, {0.7, 0.8}, {0.6, 0.8, 0.9}}));
  const bool ok = std::abs(r.op - 0.76667) <= 1e-5 && r.bwt && std::abs(*r.bwt + 0.15) <= 1e-5;
  return {ok, "OP " + fmt(r.op, 8) + ", BWT " + (r.bwt ? fmt(*r.bwt, 8) : std::string("n/a"))};
}

// 6 ---------------------------------------------------------------------------

// Enumerates every layer subset of size B_L (then head subset of size B_H) and
// keeps the best integer score; ties keep the lexicographically smallest subset.
SelectionState oracle_selection(const std::array<int, 4>& tenths, std::size_t bl, std::size_t bh) {
  const std::size_t n_layers = 2, n_heads = 2;
  bl = std::min(bl, n_layers);
  auto lex_subsets = [](std::size_t n, std::size_t k) {
    std::vector<std::vector<std::size_t>> out;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
      std::vector<std::size_t> s;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) s.push_back(i);
      out.push_back(s);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  std::vector<std::size_t> best_layers;
  int best = -1;
  for (const auto& ls : lex_subsets(n_layers, bl)) {
    int score = 0;
    for (auto l : ls) score += tenths[l * n_heads] + tenths[l * n_heads + 1];
    if (score > best) best = score, best_layers = ls;
  }
  std::vector<std::pair<std::size_t, std::size_t>> cand;
  for (auto l : best_layers)
    for (std::size_t h = 0; h < n_heads; ++h) cand.emplace_back(l, h);
  bh = std::min(bh, cand.size());
  std::vector<std::size_t> best_heads;
  best = -1;
  for (const auto& hs : lex_subsets(cand.size(), bh)) {
    int score = 0;
    for (auto i : hs) score += tenths[cand[i].first * n_heads + cand[i].second];
    if (score > best) best = score, best_heads = hs;
  }
  SelectionState s;
  s.layers = best_layers;
  for (auto i : best_heads) s.heads.insert(cand[i]);
  return s;
}

Verdict budget_allocation() {
  std::size_t cases = 0;
  std::size_t mismatches = 0;
  std::size_t ties = 0;
  std::string first;
  std::array<int, 4> t{};
  for (t[0] = 0; t[0] <= 5; ++t[0])
    for (t[1] = 0; t[1] <= 5; ++t[1])
      for (t[2] = 0; t[2] <= 5; ++t[2])
        for (t[3] = 0; t[3] <= 5; ++t[3]) {
          HeadScoreTable table = HeadScoreTable::zeros(2, 2);
          table.importance = HeadGrid(2, 2, {t[0] * 0.1, t[1] * 0.1, t[2] * 0.1, t[3] * 0.1});
          const std::set<int> distinct(t.begin(), t.end());
          if (distinct.size() < 4 || t[0] + t[1] == t[2] + t[3]) ++ties;
          for (std::size_t bl = 1; bl <= 3; ++bl)
            for (std::size_t bh = 1; bh <= 5; ++bh) {
              const SelectionState got = allocate_budget(table, {bl, bh, 4}, 0, ScorerMode::product);
              const SelectionState want = oracle_selection(t, bl, bh);
              ++cases;
              if (got.layers != want.layers || got.heads != want.heads) {
                if (mismatches++ == 0)
                  first = "table " + std::to_string(t[0]) + std::to_string(t[1]) + std::to_string(t[2]) +
                          std::to_string(t[3]) + " B_L=" + std::to_string(bl) + " B_H=" + std::to_string(bh);
              }
            }
        }
  return {mismatches == 0, std::to_string(cases) + " cases (" + std::to_string(ties) +
                               " tables with ties), mismatches " + std::to_string(mismatches) +
                               (first.empty() ? "" : ", first at " + first)};
}

// 11 --------------------------------------------------------------------------

Verdict determinism_and_persistence() {
  const fs::path root = fs::temp_directory_path() / "seekr_acceptance";
  fs::remove_all(root);
  RunOptions a, b;
  a.output_dir = root / "a";
  b.output_dir = root / "b";
  fs::create_directories(*a.output_dir);
  fs::create_directories(*b.output_dir);
  const RunConfig cfg = check::tiny_run(Method::seekr, 5);
  const RunResult ra = run(cfg, a);
  run(cfg, b);
  const bool matrix_same = slurp(root / "a" / "matrix.csv") == slurp(root / "b" / "matrix.csv");

  save_checkpoint(root / "c1.bin", ra.final_model);
  const ModelState back = load_checkpoint(root / "c1.bin");
  save_checkpoint(root / "c2.bin", back);
  const bool ckpt_same = bit_identical(back, ra.final_model) && slurp(root / "c1.bin") == slurp(root / "c2.bin");

  const auto ds = generate_task(TaskKind::sort, 3, 6, 1, {3, 6});
  CaptureOptions copt;
  copt.query_budget = 5;
  const auto entries = capture_signals(ra.final_model, ds.train, 0, copt, 7);
  save_signals(root / "s.bin", ra.final_model.config, entries);
  const auto loaded = load_signals(root / "s.bin", entries.size());
  bool signals_same = loaded.size() == entries.size();
  for (std::size_t i = 0; signals_same && i < entries.size(); ++i) {
    const auto& x = entries[i].signals;
    const auto& y = loaded[i];
    signals_same = same_bits(x.logits, y.logits) && x.queries == y.queries && x.attention.size() == y.attention.size();
    for (const auto& [lh, rows] : x.attention) {
      const Tensor* other = y.rows(lh.first, lh.second);
      signals_same = signals_same && other && same_bits(rows, *other);
    }
  }
  fs::remove_all(root);
  return {matrix_same && ckpt_same && signals_same,
          std::string("matrix.csv ") + (matrix_same ? "byte-identical" : "DIFFERS") + ", checkpoint " +
              (ckpt_same ? "bit-exact" : "DIFFERS") + ", signals " + (signals_same ? "bit-exact" : "DIFFER")};
}

// 7-10 ------------------------------------------------------------------------

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Cell {
  OpBwt summary;
  std::vector<GraftRow> graft;
};

class TrendRuns {
 public:
  const Cell& get(Method method, ScorerMode scorer, double ratio, std::uint64_t seed) {
    const std::string key = std::string(method_name(method)) + "/" + std::string(scorer_mode_name(scorer)) + "/" +
                            fmt(ratio) + "/" + std::to_string(seed);
    if (auto it = cells_.find(key); it != cells_.end()) return it->second;
    RunConfig c;
    c.method = method;
    c.scorer = scorer;
    c.replay_ratio = ratio;
    c.seed = seed;
    const auto t0 = Clock::now();
    const RunResult r = run(c);
    Cell cell{r.summary, {}};
    if (method == Method::seqft) {
      std::vector<const ModelState*> ckpts;
      for (const auto& m : r.checkpoints) ckpts.push_back(&m);
      cell.graft = grafting_diagnostic(r.final_model, ckpts, r.datasets);
    }
    const double secs = seconds_since(t0);
    if (method != Method::seqft) sequential_seconds_[key] = secs;
    std::cout << "  run " << key << ": OP " << fmt(r.summary.op) << " BWT "
              << (r.summary.bwt ? fmt(*r.summary.bwt) : std::string("n/a")) << " (" << fmt(secs, 3) << " s)"
              << std::endl;
    return cells_.emplace(key, std::move(cell)).first->second;
  }

  double seconds(const std::vector<std::string>& prefixes) const {
    double s = 0.0;
    for (const auto& [k, v] : sequential_seconds_)
      for (const auto& p : prefixes)
        if (k.starts_with(p)) s += v;
    return s;
  }

  OpBwt mean(Method method, ScorerMode scorer, double ratio) {
    double op = 0.0, bwt = 0.0;
    for (auto s : kSeeds) {
      const auto& c = get(method, scorer, ratio, s).summary;
      op += c.op / 3.0;
      bwt += c.bwt.value_or(0.0) / 3.0;
    }
    return {op, bwt};
  }

 private:
  std::map<std::string, Cell> cells_;
  std::map<std::string, double> sequential_seconds_;
};

Verdict trend_table(TrendRuns& runs) {
  const auto seekr = runs.mean(Method::seekr, ScorerMode::product, 0.01);
  const auto derpp = runs.mean(Method::derpp, ScorerMode::product, 0.01);
  const auto replay = runs.mean(Method::replay, ScorerMode::product, 0.01);
  const double secs = runs.seconds({"seekr/product/0.01/", "derpp/", "replay/"});
  const bool ok = *seekr.bwt > *derpp.bwt && *seekr.bwt > *replay.bwt && seekr.op >= replay.op && secs < 45 * 60;
  return {ok, "mean OP/BWT seekr " + fmt(seekr.op) + "/" + fmt(*seekr.bwt) + ", derpp " + fmt(derpp.op) + "/" +
                  fmt(*derpp.bwt) + ", replay " + fmt(replay.op) + "/" + fmt(*replay.bwt) + ", 9 runs in " +
                  fmt(secs / 60.0, 3) + " min"};
}

Verdict scorer_ablation(TrendRuns& runs) {
  const auto product = runs.mean(Method::seekr, ScorerMode::product, 0.01);
  const auto random = runs.mean(Method::seekr, ScorerMode::random, 0.01);
  return {product.op >= random.op, "mean OP product " + fmt(product.op) + ", random " + fmt(random.op)};
}

Verdict grafting_direction(TrendRuns& runs) {
  std::vector<double> plain(3, 0.0), grafted(3, 0.0);
  for (auto s : kSeeds) {
    const auto& rows = runs.get(Method::seqft, ScorerMode::product, 0.01, s).graft;
    for (std::size_t j = 0; j < 3; ++j) {
      plain[j] += rows[j].plain / 3.0;
      grafted[j] += rows[j].grafted / 3.0;
    }
  }
  std::size_t improved = 0;
  std::string detail;
  for (std::size_t j = 0; j < 3; ++j) {
    improved += grafted[j] > plain[j];
    detail += (j ? ", " : "") + std::string("task ") + std::to_string(j + 1) + " " + fmt(plain[j]) + "->" +
              fmt(grafted[j]);
  }
  return {improved >= 2, std::to_string(improved) + "/3 improved (" + detail + ")"};
}

Verdict replay_ratio_trend(TrendRuns& runs) {
  const auto low = runs.mean(Method::seekr, ScorerMode::product, 0.01);
  const auto high = runs.mean(Method::seekr, ScorerMode::product, 0.10);
  return {high.op >= low.op, "mean OP r=10% " + fmt(high.op) + ", r=1% " + fmt(low.op)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string suite = argc > 1 ? argv[1] : "all";
  if (suite != "fast" && suite != "trends" && suite != "all") {
    std::cerr << "usage: acceptance [fast|trends|all]\n";
    return 2;
  }
  TrendRuns runs;
  std::vector<std::pair<int, std::function<Verdict()>>> criteria;
  if (suite != "trends") {
    criteria.emplace_back(1, gradient_correctness);
    criteria.emplace_back(2, attention_invariants);
    criteria.emplace_back(3, self_distillation_zeros);
    criteria.emplace_back(4, reduction_equalities);
    criteria.emplace_back(5, op_bwt_unit);
    criteria.emplace_back(6, budget_allocation);
    criteria.emplace_back(11, determinism_and_persistence);
  }
  if (suite != "fast") {
    criteria.emplace_back(7, [&] { return trend_table(runs); });
    criteria.emplace_back(8, [&] { return scorer_ablation(runs); });
    criteria.emplace_back(9, [&] { return grafting_direction(runs); });
    criteria.emplace_back(10, [&] { return replay_ratio_trend(runs); });
  }
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
