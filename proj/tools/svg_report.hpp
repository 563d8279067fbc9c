#pragma once

#include <string>
#include <vector>

namespace airway::report {

struct EvalRow {
  std::string case_id;
  // iou, dice, dlr, dbr, precision, leakage, amr (NaN when undefined)
  std::vector<double> values;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"iou",       "dice",    "dlr", "dbr",
                                              "precision", "leakage", "amr"};
  return names;
}

/// Metric table + per-case grouped bar plot, one SVG file.
void write_eval_svg(const std::string& path, const std::vector<EvalRow>& rows);

/// Loss curves from a train log (epoch-indexed series).
struct Series {
  std::string name;
  std::vector<double> values;
};
void write_curves_svg(const std::string& path, const std::vector<Series>& series);

}  // namespace airway::report
