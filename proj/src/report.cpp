#include "sdst/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

namespace sdst {

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

std::string num(double v, const char* fmt = "%.4f") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string row_label(const EvalReport& r) {
  if (r.model_label == "cascade" && r.mode == "ground_truth_text") return "cascade (g.t. text)";
  return r.model_label;
}

const char* kPalette[6] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};

}  // namespace

std::string format_jga_cell(double jga, double ci_low, double ci_high) {
  return pct(jga) + " [" + pct(ci_low) + ", " + pct(ci_high) + "]";
}

std::string render_markdown_table(const std::vector<EvalReport>& reports) {
  std::set<std::string> scenario_set, row_set;
  std::map<std::pair<std::string, std::string>, const EvalReport*> cells;
  for (const auto& r : reports) {
    scenario_set.insert(r.scenario);
    row_set.insert(row_label(r));
    cells[{row_label(r), r.scenario}] = &r;
  }
  std::vector<std::string> scenarios(scenario_set.begin(), scenario_set.end());

  std::string out = "| model |";
  for (const auto& s : scenarios) out += " " + s + " |";
  out += "\n|---|";
  for (size_t i = 0; i < scenarios.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& row : row_set) {
    out += "| " + row + " |";
    for (const auto& s : scenarios) {
      auto it = cells.find({row, s});
      if (it == cells.end()) out += " n/a |";
      else out += " " + format_jga_cell(it->second->jga, it->second->ci_low, it->second->ci_high) + " |";
    }
    out += "\n";
  }
  return out;
}

std::string render_csv(const std::vector<EvalReport>& reports) {
  std::string out = "model,mode,scenario,corpus,n_turns,jga,ci_low,ci_high,parse_warning_rate\n";
  for (const auto& r : reports) {
    out += r.model_label + "," + r.mode + "," + r.scenario + "," + r.corpus_tag + "," +
           std::to_string(r.n_turns) + "," + num(r.jga) + "," + num(r.ci_low) + "," + num(r.ci_high) +
           "," + num(r.parse_warning_rate) + "\n";
  }
  return out;
}

std::string render_group_f1_svg(const std::vector<EvalReport>& reports) {
  const int width = 640, height = 360;
  const double plot_x = 60, plot_y = 20, plot_w = 520, plot_h = 280;
  static const char* kGroups[3] = {"categorical", "open", "time"};

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
                    std::to_string(width) + " " + std::to_string(height) + "\">\n";
  svg += "<rect width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" fill=\"white\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    double frac = tick / 4.0;
    double y = plot_y + plot_h * (1.0 - frac);
    svg += "<line x1=\"" + num(plot_x, "%.1f") + "\" y1=\"" + num(y, "%.1f") + "\" x2=\"" +
           num(plot_x + plot_w, "%.1f") + "\" y2=\"" + num(y, "%.1f") +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + num(plot_x - 8, "%.1f") + "\" y=\"" + num(y + 4, "%.1f") +
           "\" font-size=\"12\" text-anchor=\"end\">" + num(frac, "%.2f") + "</text>\n";
  }
  size_t n_reports = std::max<size_t>(1, reports.size());
  double cluster_w = plot_w / 3.0;
  double bar_w = std::min(40.0, cluster_w * 0.8 / static_cast<double>(n_reports));
  for (int g = 0; g < 3; ++g) {
    double cx = plot_x + cluster_w * (g + 0.5);
    double start = cx - bar_w * static_cast<double>(reports.size()) / 2.0;
    for (size_t ri = 0; ri < reports.size(); ++ri) {
      double f1 = 0.0;
      auto it = reports[ri].group_f1.find(kGroups[g]);
      if (it != reports[ri].group_f1.end()) f1 = it->second;
      double bh = plot_h * f1;
      svg += "<rect x=\"" + num(start + bar_w * static_cast<double>(ri), "%.1f") + "\" y=\"" +
             num(plot_y + plot_h - bh, "%.1f") + "\" width=\"" + num(bar_w - 2, "%.1f") +
             "\" height=\"" + num(bh, "%.1f") + "\" fill=\"" + kPalette[ri % 6] + "\"/>\n";
    }
    svg += "<text x=\"" + num(cx, "%.1f") + "\" y=\"" + num(plot_y + plot_h + 18, "%.1f") +
           "\" font-size=\"13\" text-anchor=\"middle\">" + kGroups[g] + "</text>\n";
  }
  for (size_t ri = 0; ri < reports.size(); ++ri) {
    double ly = plot_y + plot_h + 40 + 16 * static_cast<double>(ri);
    svg += "<rect x=\"" + num(plot_x, "%.1f") + "\" y=\"" + num(ly - 10, "%.1f") +
           "\" width=\"12\" height=\"12\" fill=\"" + kPalette[ri % 6] + "\"/>\n";
    svg += "<text x=\"" + num(plot_x + 18, "%.1f") + "\" y=\"" + num(ly, "%.1f") +
           "\" font-size=\"12\">" + row_label(reports[ri]) + " (" + reports[ri].scenario + ")</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_turn_accuracy_svg(const std::vector<EvalReport>& reports) {
  const int width = 640, height = 360;
  const double plot_x = 60, plot_y = 20, plot_w = 520, plot_h = 260;

  int max_turn = 1;
  for (const auto& r : reports)
    for (const auto& [ordinal, acc] : r.per_turn) max_turn = std::max(max_turn, ordinal);

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
                    std::to_string(width) + " " + std::to_string(height) + "\">\n";
  svg += "<rect width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" fill=\"white\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    double frac = tick / 4.0;
    double y = plot_y + plot_h * (1.0 - frac);
    svg += "<line x1=\"" + num(plot_x, "%.1f") + "\" y1=\"" + num(y, "%.1f") + "\" x2=\"" +
           num(plot_x + plot_w, "%.1f") + "\" y2=\"" + num(y, "%.1f") +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + num(plot_x - 8, "%.1f") + "\" y=\"" + num(y + 4, "%.1f") +
           "\" font-size=\"12\" text-anchor=\"end\">" + num(frac, "%.2f") + "</text>\n";
  }
  auto x_of = [&](int ordinal) {
    if (max_turn == 1) return plot_x + plot_w / 2.0;
    return plot_x + plot_w * (static_cast<double>(ordinal - 1) / static_cast<double>(max_turn - 1));
  };
  for (size_t ri = 0; ri < reports.size(); ++ri) {
    std::string points;
    for (const auto& [ordinal, acc] : reports[ri].per_turn) {
      points += num(x_of(ordinal), "%.1f");
      points += ",";
      points += num(plot_y + plot_h * (1.0 - acc.accuracy), "%.1f");
      points += " ";
    }
    if (!points.empty()) points.pop_back();
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(kPalette[ri % 6]) +
           "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  }
  for (int ordinal = 1; ordinal <= max_turn; ++ordinal) {
    svg += "<text x=\"" + num(x_of(ordinal), "%.1f") + "\" y=\"" + num(plot_y + plot_h + 16, "%.1f") +
           "\" font-size=\"12\" text-anchor=\"middle\">" + std::to_string(ordinal) + "</text>\n";
    int support = 0;
    for (const auto& r : reports) {
      auto it = r.per_turn.find(ordinal);
      if (it != r.per_turn.end()) support = std::max(support, it->second.support);
    }
    svg += "<text x=\"" + num(x_of(ordinal), "%.1f") + "\" y=\"" + num(plot_y + plot_h + 32, "%.1f") +
           "\" font-size=\"10\" text-anchor=\"middle\" fill=\"#888888\">n=" + std::to_string(support) +
           "</text>\n";
  }
  for (size_t ri = 0; ri < reports.size(); ++ri) {
    double ly = plot_y + plot_h + 52 + 16 * static_cast<double>(ri);
    svg += "<rect x=\"" + num(plot_x, "%.1f") + "\" y=\"" + num(ly - 10, "%.1f") +
           "\" width=\"12\" height=\"12\" fill=\"" + kPalette[ri % 6] + "\"/>\n";
    svg += "<text x=\"" + num(plot_x + 18, "%.1f") + "\" y=\"" + num(ly, "%.1f") +
           "\" font-size=\"12\">" + row_label(reports[ri]) + " (" + reports[ri].scenario + ")</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace sdst
