#pragma once

#include <string>
#include <vector>

#include "mixflow/experiment.hpp"

namespace mixflow {

struct ChartSeries {
  std::string name;
  std::vector<double> values;
  bool right_axis = false;
};

struct ChartSpec {
  std::string title;
  std::string x_label = "AV penetration rate (%)";
  std::string y_label;
  std::string y2_label;
  std::vector<double> x;  // penetration, percent
  std::vector<ChartSeries> series;
  std::string file_name;

  /// Throws ValidationError unless every series matches the grid length.
  void validate() const;
};

/// Standalone SVG document. Every point carries its exact values in
/// data-x / data-y attributes, printed like the CSV cells.
std::string render_svg(const ChartSpec& spec);

/// The seven chart families per (route, duration, scope): fuel benefit
/// with vehicle count, average queue, maximum queue, delay, stopped delay,
/// emissions and stops.
std::vector<ChartSpec> sweep_charts(const std::vector<AggregateRow>& rows);

}  // namespace mixflow
