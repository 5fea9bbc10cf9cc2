#pragma once

#include <string>
#include <vector>

#include "sdst/metrics.hpp"

namespace sdst {

// "62.3 [61.1, 63.5]" — percentages with one decimal.
std::string format_jga_cell(double jga, double ci_low, double ci_high);

// One row per model label, one column per scenario; cells merge reports
// that share (model, scenario).
std::string render_markdown_table(const std::vector<EvalReport>& reports);

std::string render_csv(const std::vector<EvalReport>& reports);

// Grouped bar chart of per-group F1, one bar cluster per report.
std::string render_group_f1_svg(const std::vector<EvalReport>& reports);

// Per-turn accuracy lines with support counts along the x axis.
std::string render_turn_accuracy_svg(const std::vector<EvalReport>& reports);

}  // namespace sdst
