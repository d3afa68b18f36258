#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rlab/harness.hpp"

namespace rlab {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Deterministic standalone SVG line chart (fixed canvas, fixed palette,
/// fixed number formatting): same inputs, same bytes.
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series);

/// Plain-text summary: one line per record.
std::string summary_table(const std::vector<MetricsRecord>& log);

/// One SVG per attack id (nat/rob accuracy and ASR vs step) plus summary.txt.
/// Returns the files written.
std::vector<std::string> report_metrics(const std::string& csv_path,
                                        const std::string& out_dir);

// Sweep CSV: the metrics schema with an `alpha` column prepended.
struct SweepRow {
    double alpha = 0.0;
    MetricsRecord rec;
};
std::string sweep_csv_header();
std::string sweep_csv_row(double alpha, const MetricsRecord& rec);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

/// One SVG with a robust-accuracy curve per attack over alpha, plus the
/// natural-accuracy curve, plus summary.txt.
std::vector<std::string> report_sweep(const std::string& csv_path,
                                      const std::string& out_dir);

}  // namespace rlab
