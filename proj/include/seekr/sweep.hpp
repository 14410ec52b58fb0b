#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seekr/trainer.hpp"

namespace seekr {

// Mean and sample standard deviation of OP and BWT for one method.
struct AggregateRow {
  std::string method;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double op_mean = 0.0;
  double op_std = 0.0;
  std::optional<double> bwt_mean;
  std::optional<double> bwt_std;
};

// Groups by method in first-appearance order. `failed` lists methods of failed cells.
std::vector<AggregateRow> aggregate(const std::vector<SummaryRow>& rows, const std::vector<std::string>& failed = {});

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path);

// "OP (BWT)" in percent with two decimals, e.g. "54.99 (-2.61)".
std::string format_op_bwt(double op, const std::optional<double>& bwt);

}  // namespace seekr
