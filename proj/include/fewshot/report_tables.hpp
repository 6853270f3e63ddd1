#pragma once

#include <optional>
#include <string>
#include <vector>

namespace fewshot {

// Accuracy grid: rows = metrics, columns = shot counts; absent cells render
// as an em-dash placeholder.
struct MetricTable {
  std::vector<std::string> metrics;
  std::vector<size_t> shots;
  // cells[r][c]: accuracy in [0,1], or nullopt when no checkpoint exists
  std::vector<std::vector<std::optional<double>>> cells;
};

std::string metric_table_markdown(const MetricTable& table);
std::string metric_table_csv(const MetricTable& table);

}  // namespace fewshot
