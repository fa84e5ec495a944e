#include "mixflow/chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "mixflow/csv.hpp"
#include "mixflow/error.hpp"

namespace mixflow {

void ChartSpec::validate() const {
  if (x.empty()) throw ValidationError("chart '" + title + "' has no grid");
  if (series.empty()) throw ValidationError("chart '" + title + "' has no series");
  for (const auto& s : series)
    if (s.values.size() != x.size())
      throw ValidationError("chart '" + title + "': series '" + s.name + "' does not match the grid length");
}

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 80.0;
constexpr double kTop = 50.0;
constexpr double kBottom = 70.0;
const char* const kColors[] = {"#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Range {
  double lo;
  double hi;
};

Range nice_range(double lo, double hi) {
  if (lo > 0.0 && lo < 0.5 * hi) lo = 0.0;
  if (hi < 0.0 && hi > 0.5 * lo) hi = 0.0;
  if (hi - lo < 1e-12) {
    const double pad = std::max(1.0, std::abs(hi) * 0.1);
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.08;
  return {lo == 0.0 ? 0.0 : lo - pad, hi + pad};
}

std::string tick_label(double v, double span) {
  const int digits = span >= 50 ? 0 : span >= 5 ? 1 : span >= 0.5 ? 2 : span >= 0.05 ? 3 : 5;
  return fixed(v, digits);
}

}  // namespace

std::string render_svg(const ChartSpec& spec) {
  spec.validate();
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const auto [xmin_it, xmax_it] = std::minmax_element(spec.x.begin(), spec.x.end());
  const double xmin = *xmin_it;
  const double xmax = *xmax_it > xmin ? *xmax_it : xmin + 1.0;

  Range axis[2] = {{0, 1}, {0, 1}};
  for (int side = 0; side < 2; ++side) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : spec.series) {
      if (s.right_axis != (side == 1)) continue;
      for (double v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (lo <= hi) axis[side] = nice_range(lo, hi);
  }
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y, int side) { return kTop + ph - (y - axis[side].lo) / (axis[side].hi - axis[side].lo) * ph; };
  const bool has_right = std::any_of(spec.series.begin(), spec.series.end(), [](const ChartSeries& s) { return s.right_axis; });

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(kWidth, 0) + "\" height=\"" + fixed(kHeight, 0) +
         "\" viewBox=\"0 0 " + fixed(kWidth, 0) + " " + fixed(kHeight, 0) + "\" font-family=\"sans-serif\">\n";
  svg += "<title>" + escape(spec.title) + "</title>\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fixed(kWidth / 2) + "\" y=\"28\" text-anchor=\"middle\" font-size=\"15\">" + escape(spec.title) +
         "</text>\n";

  svg += "<g stroke=\"#444\" stroke-width=\"1\">\n";
  svg += "<line x1=\"" + fixed(kLeft) + "\" y1=\"" + fixed(kTop + ph) + "\" x2=\"" + fixed(kLeft + pw) + "\" y2=\"" +
         fixed(kTop + ph) + "\"/>\n";
  svg += "<line x1=\"" + fixed(kLeft) + "\" y1=\"" + fixed(kTop) + "\" x2=\"" + fixed(kLeft) + "\" y2=\"" +
         fixed(kTop + ph) + "\"/>\n";
  if (has_right)
    svg += "<line x1=\"" + fixed(kLeft + pw) + "\" y1=\"" + fixed(kTop) + "\" x2=\"" + fixed(kLeft + pw) + "\" y2=\"" +
           fixed(kTop + ph) + "\"/>\n";
  svg += "</g>\n<g font-size=\"11\" fill=\"#222\">\n";
  for (double x : spec.x)
    svg += "<text x=\"" + fixed(px(x)) + "\" y=\"" + fixed(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
           format_number(x) + "</text>\n";
  for (int side = 0; side < (has_right ? 2 : 1); ++side) {
    const double span = axis[side].hi - axis[side].lo;
    for (int k = 0; k <= 5; ++k) {
      const double v = axis[side].lo + span * k / 5.0;
      const double xpos = side == 0 ? kLeft - 6 : kLeft + pw + 6;
      svg += "<text x=\"" + fixed(xpos) + "\" y=\"" + fixed(py(v, side) + 4) + "\" text-anchor=\"" +
             (side == 0 ? "end" : "start") + "\">" + tick_label(v, span) + "</text>\n";
    }
  }
  svg += "<text x=\"" + fixed(kLeft + pw / 2) + "\" y=\"" + fixed(kHeight - 30) + "\" text-anchor=\"middle\">" +
         escape(spec.x_label) + "</text>\n";
  svg += "<text transform=\"translate(18," + fixed(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(spec.y_label) + "</text>\n";
  if (has_right)
    svg += "<text transform=\"translate(" + fixed(kWidth - 14) + "," + fixed(kTop + ph / 2) +
           ") rotate(90)\" text-anchor=\"middle\">" + escape(spec.y2_label) + "</text>\n";
  svg += "</g>\n";

  for (std::size_t i = 0; i < spec.series.size(); ++i) {
    const auto& s = spec.series[i];
    const int side = s.right_axis ? 1 : 0;
    const char* color = kColors[i % std::size(kColors)];
    std::string points;
    for (std::size_t k = 0; k < s.values.size(); ++k)
      points += (k ? " " : "") + fixed(px(spec.x[k])) + "," + fixed(py(s.values[k], side));
    svg += "<g class=\"series\" data-series=\"" + escape(s.name) + "\" data-axis=\"" + (side ? "right" : "left") +
           "\">\n";
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\"" +
           (s.right_axis ? " stroke-dasharray=\"6 4\"" : "") + " points=\"" + points + "\"/>\n";
    for (std::size_t k = 0; k < s.values.size(); ++k)
      svg += "<circle cx=\"" + fixed(px(spec.x[k])) + "\" cy=\"" + fixed(py(s.values[k], side)) + "\" r=\"3.5\" fill=\"" +
             color + "\" data-x=\"" + format_number(spec.x[k]) + "\" data-y=\"" + format_number(s.values[k]) + "\"/>\n";
    svg += "</g>\n";
    const double ly = kHeight - 12;
    const double lx = kLeft + static_cast<double>(i) * 160.0;
    svg += "<rect x=\"" + fixed(lx) + "\" y=\"" + fixed(ly - 9) + "\" width=\"14\" height=\"4\" fill=\"" + color +
           "\"/>\n<text x=\"" + fixed(lx + 20) + "\" y=\"" + fixed(ly - 4) + "\" font-size=\"11\">" + escape(s.name) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<ChartSpec> sweep_charts(const std::vector<AggregateRow>& rows) {
  std::map<std::tuple<std::string, double, Scope>, std::vector<const AggregateRow*>> groups;
  for (const auto& a : rows) groups[{a.route, a.duration, a.scope}].push_back(&a);
  std::vector<ChartSpec> out;
  for (auto& [key, cells] : groups) {
    std::sort(cells.begin(), cells.end(),
              [](const AggregateRow* a, const AggregateRow* b) { return a->penetration < b->penetration; });
    const std::string stem = std::get<0>(key) + "_" + format_number(std::get<1>(key)) + "s_" +
                             std::string(to_string(std::get<2>(key)));
    const std::string where = std::get<0>(key) + ", " + format_number(std::get<1>(key)) + " s, " +
                              std::string(to_string(std::get<2>(key)));
    std::vector<double> x;
    for (const auto* c : cells) x.push_back(penetration_pct(c->penetration));
    auto col = [&cells](double AggregateRow::*field) {
      std::vector<double> v;
      for (const auto* c : cells) v.push_back(c->*field);
      return v;
    };
    auto single = [&](const std::string& kind, const std::string& title, const std::string& label,
                      double AggregateRow::*field) {
      ChartSpec c;
      c.title = title + " vs AV penetration (" + where + ")";
      c.y_label = label;
      c.x = x;
      c.series.push_back({label, col(field), false});
      c.file_name = stem + "_" + kind + ".svg";
      out.push_back(std::move(c));
    };

    ChartSpec fuel;
    fuel.title = "Fuel economy and number of vehicles vs AV penetration (" + where + ")";
    fuel.y_label = "% fuel economy wrt no AV";
    fuel.y2_label = "number of vehicles";
    fuel.x = x;
    fuel.series.push_back({"% fuel economy", col(&AggregateRow::pct_fuel_benefit), false});
    fuel.series.push_back({"vehicles", col(&AggregateRow::veh_count_mean), true});
    fuel.file_name = stem + "_fuel_mobility.svg";
    out.push_back(std::move(fuel));

    single("avg_queue", "Average queue length", "average queue length (m)", &AggregateRow::avg_queue_m_mean);
    single("max_queue", "Maximum queue length", "maximum queue length (m)", &AggregateRow::max_queue_m_mean);
    single("delay", "Average vehicle delay", "average delay (s)", &AggregateRow::avg_delay_s_mean);
    single("stopped_delay", "Average stopped delay", "average stopped delay (s)",
           &AggregateRow::avg_stopped_delay_s_mean);

    ChartSpec em;
    em.title = "Emissions per vehicle vs AV penetration (" + where + ")";
    em.y_label = "grams per vehicle";
    em.x = x;
    em.series.push_back({"CO", col(&AggregateRow::co_g_per_veh), false});
    em.series.push_back({"NOx", col(&AggregateRow::nox_g_per_veh), false});
    em.series.push_back({"VOC", col(&AggregateRow::voc_g_per_veh), false});
    em.file_name = stem + "_emissions.svg";
    out.push_back(std::move(em));

    single("stops", "Number of stops", "stops (mean per run)", &AggregateRow::total_stops_mean);
  }
  return out;
}

}  // namespace mixflow
