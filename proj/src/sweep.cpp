#include "seekr/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "seekr/error.hpp"

namespace seekr {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<SummaryRow>& rows, const std::vector<std::string>& failed) {
  std::vector<std::string> order;
  auto note = [&](const std::string& m) {
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
  };
  for (const auto& r : rows) note(r.method);
  for (const auto& m : failed) note(m);

  std::vector<AggregateRow> out;
  for (const auto& m : order) {
    AggregateRow a;
    a.method = m;
    a.failures = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), m));
    std::vector<double> ops, bwts;
    bool all_bwt = true;
    for (const auto& r : rows) {
      if (r.method != m) continue;
      ops.push_back(r.op);
      if (r.bwt) bwts.push_back(*r.bwt);
      else all_bwt = false;
    }
    a.runs = ops.size();
    if (!ops.empty()) std::tie(a.op_mean, a.op_std) = mean_std(ops);
    if (!bwts.empty() && all_bwt) {
      const auto [bm, bs] = mean_std(bwts);
      a.bwt_mean = bm;
      a.bwt_std = bs;
    }
    out.push_back(a);
  }
  return out;
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "method,runs,failures,op_mean,op_std,bwt_mean,bwt_std\n" << std::setprecision(17);
  for (const auto& r : rows)
    os << r.method << ',' << r.runs << ',' << r.failures << ',' << r.op_mean << ',' << r.op_std << ','
       << format_optional(r.bwt_mean) << ',' << format_optional(r.bwt_std) << '\n';
}

std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "method,runs,failures,op_mean,op_std,bwt_mean,bwt_std")
    throw ParseError(1, path.string() + ": unexpected header");
  std::vector<AggregateRow> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw ParseError(line_no, "expected 7 fields");
    try {
      AggregateRow r;
      r.method = f[0];
      r.runs = std::stoul(f[1]);
      r.failures = std::stoul(f[2]);
      r.op_mean = std::stod(f[3]);
      r.op_std = std::stod(f[4]);
      if (f[5] != "n/a") r.bwt_mean = std::stod(f[5]);
      if (f[6] != "n/a") r.bwt_std = std::stod(f[6]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed aggregate row");
    }
  }
  return out;
}

std::string format_op_bwt(double op, const std::optional<double>& bwt) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * op << " (";
  if (bwt) os << 100.0 * *bwt;
  else os << "n/a";
  os << ')';
  return os.str();
}

}  // namespace seekr
