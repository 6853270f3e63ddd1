#include "fewshot/report_tables.hpp"

#include <sstream>
#include <stdexcept>

namespace fewshot {

namespace {

void check(const MetricTable& t) {
  if (t.cells.size() != t.metrics.size())
    throw std::invalid_argument("metric table: one cell row per metric required");
  for (const auto& row : t.cells)
    if (row.size() != t.shots.size())
      throw std::invalid_argument("metric table: one cell per shot column required");
}

std::string cell_text(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << *v * 100.0 << "%";
  return os.str();
}

}  // namespace

std::string metric_table_markdown(const MetricTable& t) {
  check(t);
  std::ostringstream os;
  os << "| Distance Metric |";
  for (size_t s : t.shots) os << " " << s << "-Shot |";
  os << "\n|---|";
  for (size_t i = 0; i < t.shots.size(); ++i) os << "---|";
  os << "\n";
  for (size_t r = 0; r < t.metrics.size(); ++r) {
    os << "| " << t.metrics[r] << " |";
    for (size_t c = 0; c < t.shots.size(); ++c) os << " " << cell_text(t.cells[r][c]) << " |";
    os << "\n";
  }
  return os.str();
}

std::string metric_table_csv(const MetricTable& t) {
  check(t);
  std::ostringstream os;
  os << "metric";
  for (size_t s : t.shots) os << "," << s << "-shot";
  os << "\n";
  for (size_t r = 0; r < t.metrics.size(); ++r) {
    os << t.metrics[r];
    for (size_t c = 0; c < t.shots.size(); ++c) os << "," << cell_text(t.cells[r][c]);
    os << "\n";
  }
  return os.str();
}

}  // namespace fewshot
