#include "seekr/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "seekr/checkpoint.hpp"
#include "seekr/config.hpp"
#include "seekr/error.hpp"
#include "seekr/rng.hpp"

namespace seekr {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::seqft: return "seqft";
    case Method::replay: return "replay";
    case Method::derpp: return "derpp";
    case Method::seekr: return "seekr";
    case Method::mtl: return "mtl";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::seqft, Method::replay, Method::derpp, Method::seekr, Method::mtl})
    if (method_name(m) == name) return m;
  throw ConfigError("method", "expected seqft, replay, derpp, seekr or mtl, got '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  model.validate();
  if (tasks.empty()) throw ConfigError("tasks", "at least one task is required");
  if (!task_seeds.empty() && task_seeds.size() != tasks.size())
    throw ConfigError("task_seeds", "expected one seed per task (" + std::to_string(tasks.size()) + ")");
  if (train_size == 0) throw ConfigError("train_size", "must be at least 1");
  if (test_size == 0) throw ConfigError("test_size", "must be at least 1");
  if (generator.min_payload == 0 || generator.min_payload > generator.max_payload)
    throw ConfigError("min_payload", "need 1 <= min_payload <= max_payload");
  if (!(init_std > 0.0)) throw ConfigError("init_std", "must be positive");
  if (epochs == 0) throw ConfigError("epochs", "must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size", "must be at least 1");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning_rate", "must be non-negative");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(optimizer.clip_norm >= 0.0)) throw ConfigError("clip_norm", "must be non-negative");
  weights.validate();
  if (budgets.layers == 0) throw ConfigError("budget_layers", "must be at least 1");
  if (budgets.heads == 0) throw ConfigError("budget_heads", "must be at least 1");
  if (budgets.queries == 0) throw ConfigError("budget_queries", "must be at least 1");
  if (!(replay_ratio >= 0.0 && replay_ratio <= 1.0)) throw ConfigError("replay_ratio", "must lie in [0, 1]");
}

LossWeights RunConfig::effective_weights() const {
  LossWeights w = weights;
  if (method == Method::replay) {
    w.lambda1 = 1.0;
    w.lambda2 = 0.0;
  } else if (method == Method::derpp) {
    w.lambda2 = 0.0;
  }
  return w;
}

ObjectiveTerms RunConfig::objective_terms() const {
  switch (method) {
    case Method::replay: return {true, false, false};
    case Method::derpp: return {true, true, false};
    case Method::seekr: return {true, true, true};
    case Method::seqft:
    case Method::mtl: return {};
  }
  return {};
}

bool RunConfig::uses_buffer() const {
  return method == Method::replay || method == Method::derpp || method == Method::seekr;
}

std::uint64_t RunConfig::task_seed(std::size_t i) const {
  return task_seeds.empty() ? derive_seed(seed, "data", i) : task_seeds.at(i);
}

MetricsMatrix::MetricsMatrix(std::size_t n_tasks, std::size_t n_columns)
    : n_tasks_(n_tasks), n_columns_(n_columns), values_(n_tasks * n_columns) {}

void MetricsMatrix::set(std::size_t task, std::size_t column, double accuracy) {
  if (task >= n_tasks_ || column >= n_columns_) throw ContractError("MetricsMatrix::set: index out of range");
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ContractError("MetricsMatrix::set: accuracy outside [0, 1]");
  values_[task * n_columns_ + column] = accuracy;
}

std::optional<double> MetricsMatrix::get(std::size_t task, std::size_t column) const {
  if (task >= n_tasks_ || column >= n_columns_) return std::nullopt;
  return values_[task * n_columns_ + column];
}

MetricsMatrix matrix_from_columns(const std::vector<std::vector<double>>& columns) {
  MetricsMatrix m(columns.size(), columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].size() != j + 1) throw InputError("matrix_from_columns: column " + std::to_string(j + 1) +
                                                     " must hold " + std::to_string(j + 1) + " entries");
    for (std::size_t i = 0; i <= j; ++i) m.set(i, j, columns[j][i]);
  }
  return m;
}

OpBwt compute_op_bwt(const MetricsMatrix& m) {
  if (m.n_columns() == 0) throw InputError("compute_op_bwt: empty matrix");
  const std::size_t last = m.n_columns() - 1;
  const std::size_t T = m.n_columns() == 1 ? m.n_tasks() : m.n_columns();
  OpBwt out;
  double sum = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    const auto v = m.get(i, last);
    if (!v) throw InputError("compute_op_bwt: a[" + std::to_string(i + 1) + "][T] is missing");
    sum += *v;
  }
  out.op = sum / static_cast<double>(T);
  if (m.n_columns() < 2) return out;
  double drop = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    const auto diag = m.get(i, i);
    if (!diag) throw InputError("compute_op_bwt: a[" + std::to_string(i + 1) + "][" + std::to_string(i + 1) + "] is missing");
    drop += *m.get(i, last) - *diag;
  }
  out.bwt = drop / static_cast<double>(T - 1);
  return out;
}

void write_matrix_csv(const std::filesystem::path& path, const MetricsMatrix& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "task_evaluated,after_task,accuracy\n" << std::setprecision(17);
  for (std::size_t j = 0; j < m.n_columns(); ++j)
    for (std::size_t i = 0; i < m.n_tasks(); ++i)
      if (const auto v = m.get(i, j)) os << i + 1 << ',' << j + 1 << ',' << *v << '\n';
}

MetricsMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "task_evaluated,after_task,accuracy") throw ParseError(1, path.string() + ": unexpected header");
  struct Cell { std::size_t i, j; double v; };
  std::vector<Cell> cells;
  std::size_t n_tasks = 0, n_cols = 0, line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Cell c{};
    char a, b;
    if (!(ls >> c.i >> a >> c.j >> b >> c.v) || c.i == 0 || c.j == 0) throw ParseError(line_no, "malformed matrix row");
    n_tasks = std::max(n_tasks, c.i);
    n_cols = std::max(n_cols, c.j);
    cells.push_back(c);
  }
  MetricsMatrix m(n_tasks, n_cols);
  for (const auto& c : cells) m.set(c.i - 1, c.j - 1, c.v);
  return m;
}

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "method,seed,OP,BWT\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.method << ',' << r.seed << ',' << r.op << ',' << format_optional(r.bwt) << '\n';
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "method,seed,OP,BWT") throw ParseError(1, path.string() + ": unexpected header");
  std::vector<SummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw ParseError(line_no, "expected 4 fields");
    try {
      SummaryRow r;
      r.method = f[0];
      r.seed = std::stoull(f[1]);
      r.op = std::stod(f[2]);
      if (f[3] != "n/a") r.bwt = std::stod(f[3]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed summary row");
    }
  }
  return rows;
}

double evaluate(const ModelState& model, const std::vector<Sample>& samples, const ModelState* graft_source,
                const HeadSet& graft_heads) {
  if (samples.empty()) return 0.0;
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    std::vector<Tokens> prompts;
    std::size_t max_new = 0;
    for (std::size_t i = begin; i < end; ++i) {
      prompts.push_back(samples[i].instruction);
      max_new = std::max(max_new, samples[i].answer.size());
    }
    const auto outputs =
        greedy_decode_batch(model, prompts, max_new, vocab::kEndOfAnswer, graft_source, graft_heads);
    for (std::size_t i = begin; i < end; ++i) {
      const Tokens& want = samples[i].answer;
      const Tokens& got = outputs[i - begin];
      // `want` ends with the end-of-answer token, which decoding strips.
      if (got.size() + 1 == want.size() && std::equal(got.begin(), got.end(), want.begin())) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::vector<GraftRow> grafting_diagnostic(const ModelState& final_model,
                                          const std::vector<const ModelState*>& checkpoints,
                                          const std::vector<TaskDataset>& datasets) {
  if (checkpoints.size() != datasets.size())
    throw OrchestrationError("grafting_diagnostic: " + std::to_string(datasets.size()) + " tasks but " +
                             std::to_string(checkpoints.size()) + " checkpoints");
  const HeadSet heads = all_heads(final_model.config);
  std::vector<GraftRow> rows;
  for (std::size_t j = 0; j < datasets.size(); ++j) {
    if (!checkpoints[j]) throw OrchestrationError("grafting_diagnostic: checkpoint for task " + std::to_string(j + 1) +
                                                  " is missing");
    GraftRow r;
    r.task = j;
    r.kind = datasets[j].kind;
    r.plain = evaluate(final_model, datasets[j].test);
    r.grafted = evaluate(final_model, datasets[j].test, checkpoints[j], heads);
    rows.push_back(r);
  }
  return rows;
}

void write_graft_csv(const std::filesystem::path& path, const std::vector<GraftRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "task,kind,plain,grafted\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.task + 1 << ',' << task_name(r.kind) << ',' << r.plain << ',' << r.grafted << '\n';
}

std::vector<TaskDataset> build_datasets(const RunConfig& config) {
  std::vector<TaskDataset> out;
  for (std::size_t i = 0; i < config.tasks.size(); ++i)
    out.push_back(generate_task(config.tasks[i], config.task_seed(i), config.train_size, config.test_size,
                                config.generator));
  return out;
}

namespace {

std::string fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string task_label(const RunConfig& cfg, std::size_t i) {
  if (cfg.method == Method::mtl) return "union";
  return std::to_string(i + 1) + " (" + std::string(task_name(cfg.tasks[i])) + ")";
}

class Trainer {
 public:
  Trainer(const RunConfig& cfg, const RunOptions& opts)
      : cfg_(cfg),
        opts_(opts),
        weights_(cfg.effective_weights()),
        terms_(cfg.objective_terms()),
        optimizer_(cfg.optimizer) {}

  RunResult run() {
    result_.datasets = build_datasets(cfg_);
    model_ = ModelState::initialize(cfg_.model, cfg_.seed, cfg_.init_std);
    const std::size_t n = cfg_.tasks.size();
    result_.scores = HeadScoreTable::zeros(cfg_.model.n_layers, cfg_.model.n_heads);
    selection_.budgets = cfg_.budgets;
    selection_.heads = all_heads(cfg_.model);
    for (std::size_t l = 0; l < cfg_.model.n_layers; ++l) selection_.layers.push_back(l);

    if (dir_) {
      std::filesystem::create_directories(*dir_);
      for (std::size_t k = 0; k < result_.datasets.size(); ++k)
        save_jsonl(result_.datasets[k], *dir_ / "data" / ("task" + std::to_string(k + 1)));
      std::ofstream(*dir_ / "config.txt") << describe(cfg_);
      save_checkpoint(*dir_ / "ckpt_init.bin", model_);
      losses_.open(*dir_ / "losses.csv", std::ios::trunc);
      if (!losses_) throw IoError("cannot write " + (*dir_ / "losses.csv").string());
      write_loss_csv_header(losses_);
    }

    if (cfg_.method == Method::mtl) {
      run_mtl();
    } else {
      result_.matrix = MetricsMatrix(n, n);
      for (std::size_t i = 0; i < n; ++i) run_task(i);
    }
    result_.summary = compute_op_bwt(result_.matrix);
    result_.final_model = model_;
    result_.selection = selection_;
    if (dir_) write_outputs();
    return std::move(result_);
  }

 private:
  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  void train_epoch(const std::vector<Sample>& current, std::size_t task, std::size_t epoch) {
    const auto batches = mixed_batches(buffer_, current, task, cfg_.batch_size, cfg_.seed, epoch);
    for (const Batch& batch : batches) {
      try {
        train_step(batch, task, epoch);
      } catch (const TrainingError&) {
        throw;
      } catch (const Error& e) {
        throw TrainingError("task " + task_label(cfg_, task) + ", epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(step_ + 1) + ": " + e.what());
      }
    }
  }

  void train_step(const Batch& batch, std::size_t task, std::size_t epoch) {
    std::vector<Tokens> seqs;
    seqs.reserve(batch.size());
    bool has_replay = false;
    for (const auto& item : batch) {
      seqs.push_back(item.sample->sequence());
      has_replay = has_replay || item.is_replay();
    }
    ForwardOptions fopt;
    fopt.capture_attention = has_replay && terms_.attention_distill && weights_.lambda2 > 0.0;
    BatchForward fwd = forward_batch(model_, seqs, fopt);
    BatchObjective obj = batch_objective(fwd, batch, terms_, weights_, selection_.heads);
    StepRecord rec{step_, task, epoch, obj.breakdown};
    if (obj.total) {
      fwd.tape->backward(*obj.total);
      Gradients grads = fwd.parameter_gradients();
      fwd = BatchForward{};
      try {
        optimizer_.step(model_, grads);
      } catch (const TrainingError& e) {
        throw TrainingError("task " + task_label(cfg_, task) + ", epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(step_ + 1) + ": " + e.what());
      }
    }
    if (losses_.is_open()) write_loss_csv_row(losses_, step_, rec.loss);
    if (opts_.on_step) opts_.on_step(rec);
    result_.steps.push_back(rec);
    ++step_;
  }

  void run_task(std::size_t i) {
    const TaskDataset& ds = result_.datasets[i];
    log("task " + task_label(cfg_, i) + ": training on " + std::to_string(ds.train.size()) + " samples with " +
        std::to_string(buffer_.size()) + " replay entries");
    // θ_{i−1}, kept only until the forgettability increment for task i is done.
    std::optional<ModelState> previous;
    if (cfg_.method == Method::seekr) previous = model_;

    for (std::size_t e = 0; e < cfg_.epochs; ++e) train_epoch(ds.train, i, e);

    try {
      task_boundary(i, previous ? &*previous : nullptr);
    } catch (const Error& e) {
      throw OrchestrationError("task " + task_label(cfg_, i) + " boundary: " + e.what());
    }
    previous.reset();

    result_.checkpoints.push_back(model_);
    if (dir_) save_checkpoint(*dir_ / ("ckpt_task" + std::to_string(i + 1) + ".bin"), model_);
    for (std::size_t k = 0; k <= i; ++k) result_.matrix.set(k, i, evaluate(model_, result_.datasets[k].test));
    std::ostringstream os;
    os << "task " << task_label(cfg_, i) << ": accuracy";
    for (std::size_t k = 0; k <= i; ++k) os << ' ' << fixed(*result_.matrix.get(k, i), 3);
    log(os.str());
  }

  void task_boundary(std::size_t i, const ModelState* previous) {
    if (!cfg_.uses_buffer() || cfg_.replay_ratio <= 0.0) return;
    const TaskDataset& ds = result_.datasets[i];
    const std::vector<Sample> replay = select_replay(ds, cfg_.replay_ratio, derive_seed(cfg_.seed, "replay", i));

    if (cfg_.method == Method::seekr) {
      HeadScoreTable& table = result_.scores;
      const HeadGrid raw = task_sensitivity(model_, replay, cfg_.importance);
      table.accumulate_sensitivity(i, raw, layer_normalize(raw, cfg_.importance.normalization));
      table.accumulate_forgettability(i, forgettability_increment(model_, previous, replay, cfg_.importance));
      table.refresh_importance();
      selection_ = allocate_budget(table, cfg_.budgets, derive_seed(cfg_.seed, "allocate", i), cfg_.scorer);
      if (dir_) write_importance_csv(*dir_ / ("importance_task" + std::to_string(i + 1) + ".csv"), table, selection_);
      if (opts_.on_boundary) opts_.on_boundary({i, selection_, &table});
    }

    CaptureOptions copt;
    copt.policy = cfg_.storage;
    copt.selected = selection_.heads;
    copt.query_budget = cfg_.budgets.queries;
    copt.attention = cfg_.method == Method::seekr;
    auto entries = capture_signals(model_, replay, i, copt, cfg_.seed);
    if (dir_) {
      save_signals(*dir_ / ("signals_task" + std::to_string(i + 1) + ".bin"), cfg_.model, entries);
      std::vector<Sample> samples;
      for (const auto& e : entries) samples.push_back(e.sample);
      write_samples_jsonl(*dir_ / ("replay_task" + std::to_string(i + 1) + ".jsonl"), samples);
    }
    buffer_.add_task(std::move(entries));
  }

  void run_mtl() {
    const std::size_t n = cfg_.tasks.size();
    std::vector<Sample> all;
    for (const auto& ds : result_.datasets) all.insert(all.end(), ds.train.begin(), ds.train.end());
    log("mtl: training on " + std::to_string(all.size()) + " samples for " + std::to_string(cfg_.epochs * n) +
        " epochs");
    for (std::size_t e = 0; e < cfg_.epochs * n; ++e) train_epoch(all, n, e);
    result_.checkpoints.push_back(model_);
    if (dir_) save_checkpoint(*dir_ / "ckpt_task1.bin", model_);
    result_.matrix = MetricsMatrix(n, 1);
    for (std::size_t k = 0; k < n; ++k) result_.matrix.set(k, 0, evaluate(model_, result_.datasets[k].test));
  }

  void write_outputs() {
    write_matrix_csv(*dir_ / "matrix.csv", result_.matrix);
    write_summary_csv(*dir_ / "summary.csv",
                      {{std::string(method_name(cfg_.method)), cfg_.seed, result_.summary.op, result_.summary.bwt}});
    std::ofstream os(*dir_ / "report.txt", std::ios::trunc);
    os << "method " << method_name(cfg_.method) << ", seed " << cfg_.seed << "\n\n";
    os << "accuracy (rows: task evaluated, columns: after task)\n";
    for (std::size_t i = 0; i < result_.matrix.n_tasks(); ++i) {
      os << std::setw(8) << task_name(cfg_.tasks[i]);
      for (std::size_t j = 0; j < result_.matrix.n_columns(); ++j) {
        const auto v = result_.matrix.get(i, j);
        os << "  " << (v ? fixed(*v, 3) : std::string("    -"));
      }
      os << '\n';
    }
    os << "\nOP  " << fixed(result_.summary.op, 4) << '\n';
    os << "BWT " << (result_.summary.bwt ? fixed(*result_.summary.bwt, 4) : std::string("n/a")) << '\n';
    os << "steps " << step_ << '\n';
    if (cfg_.method == Method::seekr && !selection_.heads.empty()) {
      os << "selected heads after the last task:";
      for (const auto& [l, h] : selection_.heads) os << " (" << l << ',' << h << ')';
      os << '\n';
    }
  }

  const RunConfig& cfg_;
  const RunOptions& opts_;
  std::optional<std::filesystem::path> dir_ = opts_.output_dir;
  LossWeights weights_;
  ObjectiveTerms terms_;
  Optimizer optimizer_;
  ModelState model_;
  ReplayBuffer buffer_{cfg_.replay_ratio};
  SelectionState selection_;
  RunResult result_;
  std::ofstream losses_;
  std::size_t step_ = 0;
};

}  // namespace

RunResult run(const RunConfig& config, const RunOptions& options) {
  config.validate();
  Trainer t(config, options);
  return t.run();
}

}  // namespace seekr
