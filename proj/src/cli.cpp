#include "seekr/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "seekr/checkpoint.hpp"
#include "seekr/config.hpp"
#include "seekr/error.hpp"
#include "seekr/rng.hpp"
#include "seekr/sweep.hpp"
#include "seekr/trainer.hpp"

namespace seekr {

namespace {

namespace fs = std::filesystem;

fs::path run_root() {
  const char* env = std::getenv("SEEKR_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> settings;
  std::string method;
  std::string seed;
};

void add_config_options(CLI::App& cmd, ConfigArgs& a) {
  cmd.add_option("-c,--config", a.config_path, "key = value config file");
  cmd.add_option("-s,--set", a.settings, "override one key, as key=value (repeatable)");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_config(a.config_path, cfg);
  for (const auto& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "override must look like key=value");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.method.empty()) apply_setting(cfg, "method", a.method);
  if (!a.seed.empty()) apply_setting(cfg, "seed", a.seed);
  cfg.validate();
  return cfg;
}

std::function<void(const std::string&)> logger(std::ostream& err, bool quiet) {
  if (quiet) return {};
  return [&err](const std::string& msg) { err << msg << std::endl; };
}

std::string summary_line(const RunConfig& cfg, const OpBwt& s) {
  std::ostringstream os;
  os << method_name(cfg.method) << " seed " << cfg.seed << ": OP " << std::fixed << std::setprecision(4) << s.op
     << "  BWT ";
  if (s.bwt) os << *s.bwt;
  else os << "n/a";
  return os.str();
}

int cmd_run(const ConfigArgs& a, const std::string& out_dir, bool quiet, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a);
  const fs::path dir = out_dir.empty() ? run_root() / run_directory_name(cfg) : fs::path(out_dir);
  fs::create_directories(dir);
  RunOptions opts;
  opts.output_dir = dir;
  opts.log = logger(err, quiet);
  const RunResult r = run(cfg, opts);
  out << summary_line(cfg, r.summary) << '\n' << "run directory: " << dir.string() << '\n';
  return 0;
}

bool completed_run(const fs::path& dir, const RunConfig& cfg) {
  if (!fs::exists(dir / "summary.csv") || !fs::exists(dir / "config.txt")) return false;
  std::ifstream is(dir / "config.txt");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str() == describe(cfg);
}

int cmd_sweep(const ConfigArgs& a, const std::vector<std::string>& methods, const std::vector<std::uint64_t>& seeds,
              bool quiet, std::ostream& out, std::ostream& err) {
  if (methods.empty()) throw ConfigError("methods", "at least one method is required");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  const RunConfig base = resolve_config(a);
  std::vector<RunConfig> cells;
  for (const auto& m : methods) {
    for (auto s : seeds) {
      RunConfig c = base;
      c.method = parse_method(m);
      c.seed = s;
      c.validate();
      cells.push_back(c);
    }
  }
  RunConfig tag = base;
  std::string key;
  for (const auto& m : methods) key += m + ",";
  for (auto s : seeds) key += std::to_string(s) + ",";
  tag.seed = hash_tag(key);
  const fs::path sweep_dir = run_root() / ("sweep-" + run_directory_name(tag).substr(3, 16));
  fs::create_directories(sweep_dir);

  std::vector<SummaryRow> rows;
  std::vector<std::string> failed;
  std::ofstream cells_csv(sweep_dir / "cells.csv", std::ios::trunc);
  cells_csv << "method,seed,status,run_directory\n";
  for (const auto& c : cells) {
    const fs::path dir = run_root() / run_directory_name(c);
    const std::string m(method_name(c.method));
    try {
      if (!completed_run(dir, c)) {
        fs::create_directories(dir);
        RunOptions opts;
        opts.output_dir = dir;
        opts.log = logger(err, quiet);
        run(c, opts);
      }
      const auto summary = read_summary_csv(dir / "summary.csv");
      if (summary.size() != 1) throw IoError((dir / "summary.csv").string() + ": expected one row");
      rows.push_back(summary.front());
      out << summary_line(c, {summary.front().op, summary.front().bwt}) << '\n';
      cells_csv << m << ',' << c.seed << ",ok," << dir.string() << '\n';
    } catch (const std::exception& e) {
      failed.push_back(m);
      err << "cell " << m << " seed " << c.seed << " failed: " << e.what() << '\n';
      cells_csv << m << ',' << c.seed << ",failed," << dir.string() << '\n';
    }
  }
  const auto agg = aggregate(rows, failed);
  write_aggregate_csv(sweep_dir / "aggregate.csv", agg);
  std::ofstream report(sweep_dir / "report.txt", std::ios::trunc);
  std::ostringstream table;
  table << "method      OP (BWT), mean over seeds      std OP / BWT     runs\n";
  for (const auto& r : agg) {
    table << std::left << std::setw(12) << r.method << std::setw(31) << format_op_bwt(r.op_mean, r.bwt_mean);
    std::ostringstream sd;
    sd << std::fixed << std::setprecision(2) << 100.0 * r.op_std << " / ";
    if (r.bwt_std) sd << 100.0 * *r.bwt_std;
    else sd << "n/a";
    table << std::setw(17) << sd.str() << r.runs;
    if (r.failures) table << " (" << r.failures << " failed)";
    table << '\n';
  }
  report << table.str();
  out << table.str() << "sweep directory: " << sweep_dir.string() << '\n';
  return failed.empty() ? 0 : 1;
}

int cmd_graft(const std::string& run_dir, std::ostream& out) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "config.txt")) throw OrchestrationError(dir.string() + " has no config.txt");
  const RunConfig cfg = load_config(dir / "config.txt");
  cfg.validate();
  std::vector<TaskDataset> datasets;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k)
    datasets.push_back(load_jsonl(dir / "data" / ("task" + std::to_string(k + 1)), cfg.tasks[k]));
  std::vector<ModelState> ckpts;
  const std::size_t n_ckpt = cfg.method == Method::mtl ? 1 : cfg.tasks.size();
  for (std::size_t k = 0; k < n_ckpt; ++k) {
    const fs::path p = dir / ("ckpt_task" + std::to_string(k + 1) + ".bin");
    if (!fs::exists(p)) throw OrchestrationError("missing checkpoint " + p.string());
    ckpts.push_back(load_checkpoint(p));
  }
  std::vector<const ModelState*> sources;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) sources.push_back(&ckpts[std::min(k, n_ckpt - 1)]);
  const auto rows = grafting_diagnostic(ckpts.back(), sources, datasets);
  write_graft_csv(dir / "graft.csv", rows);
  out << "task  kind      plain   grafted\n";
  for (const auto& r : rows)
    out << std::left << std::setw(6) << r.task + 1 << std::setw(8) << task_name(r.kind) << std::right << std::fixed
        << std::setprecision(3) << std::setw(7) << r.plain << std::setw(10) << r.grafted << '\n';
  out << "wrote " << (dir / "graft.csv").string() << '\n';
  return 0;
}

int cmd_gen_data(const std::string& task, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                 const GeneratorOptions& gen, const std::string& out_dir, std::ostream& out) {
  const TaskDataset ds = generate_task(parse_task_kind(task), seed, n_train, n_test, gen);
  save_jsonl(ds, out_dir);
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test samples of " << task << " to "
      << out_dir << '\n';
  return 0;
}

void print_importance(const fs::path& path, std::ostream& out) {
  const auto rows = read_importance_csv(path);
  std::size_t n_layers = 0, n_heads = 0;
  for (const auto& r : rows) {
    n_layers = std::max(n_layers, r.layer + 1);
    n_heads = std::max(n_heads, r.head + 1);
  }
  std::map<std::pair<std::size_t, std::size_t>, ImportanceCsvRow> grid;
  for (const auto& r : rows) grid[{r.layer, r.head}] = r;
  out << path.filename().string() << "  (* = selected)\n";
  auto table = [&](const char* title, double ImportanceCsvRow::*field, bool mark) {
    out << title << '\n' << "layer";
    for (std::size_t h = 0; h < n_heads; ++h) out << std::setw(11) << ("h" + std::to_string(h));
    out << '\n';
    for (std::size_t l = 0; l < n_layers; ++l) {
      out << std::setw(5) << l;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const auto it = grid.find({l, h});
        std::ostringstream cell;
        if (it != grid.end()) {
          cell << std::scientific << std::setprecision(2) << it->second.*field;
          if (mark && it->second.selected) cell << '*';
        }
        out << std::setw(11) << cell.str();
      }
      out << '\n';
    }
  };
  table("sensitivity, raw (last task)", &ImportanceCsvRow::s_raw, false);
  table("sensitivity, normalized and accumulated", &ImportanceCsvRow::s_norm_accum, false);
  table("forgettability", &ImportanceCsvRow::forgettability, false);
  table("importance", &ImportanceCsvRow::importance, true);
}

int cmd_inspect(const std::string& target, std::ostream& out) {
  const fs::path p(target);
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
      const auto name = e.path().filename().string();
      if (name.starts_with("importance_task") && name.ends_with(".csv")) files.push_back(e.path());
    }
    if (files.empty()) throw IoError(p.string() + " contains no importance_task*.csv files");
    std::sort(files.begin(), files.end(), [](const fs::path& x, const fs::path& y) {
      const auto num = [](const fs::path& f) { return std::stoul(f.stem().string().substr(15)); };
      return num(x) < num(y);
    });
    for (const auto& f : files) {
      print_importance(f, out);
      out << '\n';
    }
    return 0;
  }
  print_importance(p, out);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual-learning experiments with attention distillation on a small transformer"};
  app.require_subcommand(1);

  ConfigArgs run_args;
  std::string run_out;
  bool quiet = false;
  auto* run_cmd = app.add_subcommand("run", "train one method on the task sequence");
  add_config_options(*run_cmd, run_args);
  run_cmd->add_option("-m,--method", run_args.method, "seqft, replay, derpp, seekr or mtl");
  run_cmd->add_option("--seed", run_args.seed, "global seed");
  run_cmd->add_option("-o,--out", run_out, "run directory (default: content-addressed under the run root)");
  run_cmd->add_flag("-q,--quiet", quiet, "no progress output");

  ConfigArgs sweep_args;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  auto* sweep_cmd = app.add_subcommand("sweep", "run every method x seed cell and aggregate OP/BWT");
  add_config_options(*sweep_cmd, sweep_args);
  sweep_cmd->add_option("--methods", methods, "methods to compare")->delimiter(',')->required();
  sweep_cmd->add_option("--seeds", seeds, "seeds")->delimiter(',')->required();
  sweep_cmd->add_flag("-q,--quiet", quiet, "no progress output");

  std::string graft_dir;
  auto* graft_cmd = app.add_subcommand("graft", "plain vs grafted accuracy per task for a finished run");
  graft_cmd->add_option("run_dir", graft_dir, "run directory")->required();

  std::string gen_task, gen_out;
  std::uint64_t gen_seed = 1;
  std::size_t gen_train = 1000, gen_test = 100;
  GeneratorOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write one task's train/test splits as JSONL");
  gen_cmd->add_option("-t,--task", gen_task, "copy, reverse, sort, modadd, parity or kvlookup")->required();
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--train", gen_train, "training samples");
  gen_cmd->add_option("--test", gen_test, "test samples");
  gen_cmd->add_option("--min-payload", gen.min_payload, "shortest payload");
  gen_cmd->add_option("--max-payload", gen.max_payload, "longest payload");
  gen_cmd->add_option("-o,--out", gen_out, "output directory")->required();

  std::string inspect_target;
  auto* inspect_cmd = app.add_subcommand("inspect-importance", "print importance tables from a run");
  inspect_cmd->add_option("path", inspect_target, "importance CSV or run directory")->required();

  auto* keys_cmd = app.add_subcommand("config", "print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_args, run_out, quiet, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args, methods, seeds, quiet, out, err);
    if (graft_cmd->parsed()) return cmd_graft(graft_dir, out);
    if (gen_cmd->parsed()) return cmd_gen_data(gen_task, gen_seed, gen_train, gen_test, gen, gen_out, out);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_target, out);
    if (keys_cmd->parsed()) {
      for (const auto& k : config_keys()) out << "# " << k.help << '\n' << k.name << " = " << k.default_value << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace seekr
