#include "svg_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "airway/errors.hpp"

namespace airway::report {

namespace {

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                          "#8172b3", "#937860", "#da8bc3"};

std::string fmt(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

void write_eval_svg(const std::string& path, const std::vector<EvalRow>& rows) {
  const auto& names = metric_names();
  const int n_metrics = static_cast<int>(names.size());
  const int n_cases = static_cast<int>(rows.size());

  const int table_row_h = 22;
  const int table_top = 40;
  const int table_h = table_top + (n_cases + 2) * table_row_h;
  const int chart_top = table_h + 40;
  const int chart_h = 220;
  const int bar_w = std::max(2, 160 / std::max(1, n_cases));
  const int group_w = bar_w * n_cases + 24;
  const int width = std::max(860, 80 + n_metrics * group_w);
  const int height = chart_top + chart_h + 70;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<text x=\"20\" y=\"24\" font-size=\"16\">Evaluation report (" << n_cases
      << " cases)</text>\n";

  // --- table -----------------------------------------------------------------
  out << "<text x=\"20\" y=\"" << table_top + 14 << "\" font-weight=\"bold\">case</text>\n";
  for (int m = 0; m < n_metrics; ++m) {
    out << "<text x=\"" << 140 + m * 90 << "\" y=\"" << table_top + 14
        << "\" font-weight=\"bold\">" << names[m] << "</text>\n";
  }
  std::vector<double> mean(n_metrics, 0.0);
  std::vector<int> counted(n_metrics, 0);
  for (int r = 0; r < n_cases; ++r) {
    const int y = table_top + (r + 1) * table_row_h + 14;
    out << "<text x=\"20\" y=\"" << y << "\">" << rows[r].case_id << "</text>\n";
    for (int m = 0; m < n_metrics && m < static_cast<int>(rows[r].values.size()); ++m) {
      out << "<text x=\"" << 140 + m * 90 << "\" y=\"" << y << "\">" << fmt(rows[r].values[m])
          << "</text>\n";
      if (!std::isnan(rows[r].values[m])) {
        mean[m] += rows[r].values[m];
        ++counted[m];
      }
    }
  }
  const int mean_y = table_top + (n_cases + 1) * table_row_h + 14;
  out << "<text x=\"20\" y=\"" << mean_y << "\" font-weight=\"bold\">mean</text>\n";
  for (int m = 0; m < n_metrics; ++m) {
    const double v = counted[m] ? mean[m] / counted[m] : std::nan("");
    out << "<text x=\"" << 140 + m * 90 << "\" y=\"" << mean_y << "\" font-weight=\"bold\">"
        << fmt(v) << "</text>\n";
  }

  // --- per-case bars, grouped by metric ----------------------------------------
  double max_v = 1.0;
  for (const auto& r : rows) {
    for (double v : r.values) {
      if (!std::isnan(v)) max_v = std::max(max_v, v);
    }
  }
  const int base_y = chart_top + chart_h;
  out << "<line x1=\"60\" y1=\"" << base_y << "\" x2=\"" << width - 20 << "\" y2=\"" << base_y
      << "\" stroke=\"#333\"/>\n";
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const int ty = base_y - static_cast<int>(tick / max_v * chart_h);
    out << "<line x1=\"56\" y1=\"" << ty << "\" x2=\"60\" y2=\"" << ty
        << "\" stroke=\"#333\"/>\n<text x=\"24\" y=\"" << ty + 4 << "\">" << fmt(tick)
        << "</text>\n";
  }
  for (int m = 0; m < n_metrics; ++m) {
    const int gx = 70 + m * group_w;
    out << "<text x=\"" << gx << "\" y=\"" << base_y + 18 << "\">" << names[m] << "</text>\n";
    for (int r = 0; r < n_cases; ++r) {
      if (m >= static_cast<int>(rows[r].values.size())) continue;
      const double v = rows[r].values[m];
      if (std::isnan(v)) continue;
      const int h = static_cast<int>(std::max(0.0, v) / max_v * chart_h);
      out << "<rect x=\"" << gx + r * bar_w << "\" y=\"" << base_y - h << "\" width=\""
          << bar_w - 1 << "\" height=\"" << h << "\" fill=\"" << kPalette[m % 7] << "\"/>\n";
    }
  }
  out << "</svg>\n";
}

void write_curves_svg(const std::string& path, const std::vector<Series>& series) {
  const int width = 860, height = 360, left = 60, top = 30;
  const int plot_w = width - left - 30, plot_h = height - top - 50;

  double max_v = 1e-9, min_v = 1e9;
  std::size_t max_n = 2;
  for (const auto& s : series) {
    max_n = std::max(max_n, s.values.size());
    for (double v : s.values) {
      if (std::isfinite(v)) {
        max_v = std::max(max_v, v);
        min_v = std::min(min_v, v);
      }
    }
  }
  min_v = std::min(min_v, 0.0);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<text x=\"20\" y=\"20\" font-size=\"15\">Training curves</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"#333\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"#333\"/>\n";

  auto ypix = [&](double v) {
    return top + plot_h - (v - min_v) / std::max(1e-12, max_v - min_v) * plot_h;
  };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.values.size() < 2) continue;
    out << "<polyline fill=\"none\" stroke=\"" << kPalette[si % 7] << "\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double x =
          left + static_cast<double>(i) / static_cast<double>(max_n - 1) * plot_w;
      out << x << "," << ypix(s.values[i]) << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << left + 10 + 130 * static_cast<int>(si) << "\" y=\"" << height - 12
        << "\" fill=\"" << kPalette[si % 7] << "\">" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace airway::report
