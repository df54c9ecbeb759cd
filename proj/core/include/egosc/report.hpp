#pragma once

#include <string>
#include <utility>
#include <vector>

#include "egosc/eval.hpp"

namespace egosc {

// Markdown comparison table, columns Acc | F1 | Recall | Spec. The range
// column renders as "mean ± range" when a nonzero range is supplied.
struct TableRow {
  std::string label;
  Metrics mean;
  Metrics range;  // zeros -> plain numbers
};
std::string metrics_table_markdown(const std::string& title, const std::vector<TableRow>& rows);

struct Series {
  std::string label;
  std::vector<double> ys;
};

// Minimal self-contained SVG renderings; enough to eyeball trends.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& xs,
                           const std::vector<Series>& series);
std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::pair<std::string, double>>& bars);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace egosc
