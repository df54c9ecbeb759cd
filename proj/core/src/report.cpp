#include "egosc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace egosc {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_pm(double mean, double range) {
  if (range <= 0.0) return fmt(mean);
  return fmt(mean) + " ± " + fmt(range);
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string metrics_table_markdown(const std::string& title, const std::vector<TableRow>& rows) {
  std::string out = "### " + title + "\n\n";
  out += "| Condition | Acc | F1 | Recall | Spec |\n";
  out += "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += "| " + r.label + " | " + fmt_pm(r.mean.accuracy, r.range.accuracy) + " | " +
           fmt_pm(r.mean.macro_f1, r.range.macro_f1) + " | " +
           fmt_pm(r.mean.recall, r.range.recall) + " | " +
           fmt_pm(r.mean.specificity, r.range.specificity) + " |\n";
  }
  return out;
}

namespace {

constexpr double kW = 640, kH = 400;
constexpr double kL = 70, kR = 160, kT = 50, kB = 50;  // margins (legend on the right)

struct Scale {
  double lo, hi;
  double map(double v, double p0, double p1) const {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return p0 + t * (p1 - p0);
  }
};

std::string svg_header(const std::string& title) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\" font-family=\"sans-serif\" font-size=\"12\">\n",
                kW, kH, kW, kH);
  std::string out = buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(kW / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         esc(title) + "</text>\n";
  return out;
}

std::string axis_and_ticks(const Scale& sy, const std::string& x_label,
                           const std::string& y_label) {
  std::string out;
  out += "<line x1=\"" + fmt(kL) + "\" y1=\"" + fmt(kH - kB) + "\" x2=\"" + fmt(kW - kR) +
         "\" y2=\"" + fmt(kH - kB) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt(kL) + "\" y1=\"" + fmt(kT) + "\" x2=\"" + fmt(kL) + "\" y2=\"" +
         fmt(kH - kB) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = sy.lo + (sy.hi - sy.lo) * i / 4.0;
    const double y = sy.map(v, kH - kB, kT);
    out += "<line x1=\"" + fmt(kL - 4) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(kL) + "\" y2=\"" +
           fmt(y) + "\" stroke=\"black\"/>\n";
    out += "<text x=\"" + fmt(kL - 8) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">" +
           fmt(v) + "</text>\n";
  }
  out += "<text x=\"" + fmt((kL + kW - kR) / 2) + "\" y=\"" + fmt(kH - 12) +
         "\" text-anchor=\"middle\">" + esc(x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + fmt((kT + kH - kB) / 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " + fmt((kT + kH - kB) / 2) +
         ")\">" + esc(y_label) + "</text>\n";
  return out;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& xs,
                           const std::vector<Series>& series) {
  double ylo = 1e300, yhi = -1e300;
  for (const auto& s : series)
    for (double v : s.ys) {
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  if (series.empty() || xs.empty()) {
    ylo = 0;
    yhi = 1;
  }
  const double pad = std::max(0.02, (yhi - ylo) * 0.1);
  Scale sy{ylo - pad, yhi + pad};
  Scale sx{xs.empty() ? 0.0 : xs.front(), xs.empty() ? 1.0 : xs.back()};
  if (sx.hi == sx.lo) sx.hi = sx.lo + 1;

  std::string out = svg_header(title);
  out += axis_and_ticks(sy, x_label, y_label);
  for (double x : xs) {
    const double px = sx.map(x, kL, kW - kR);
    out += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(kH - kB) + "\" x2=\"" + fmt(px) + "\" y2=\"" +
           fmt(kH - kB + 4) + "\" stroke=\"black\"/>\n";
    out += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(kH - kB + 18) + "\" text-anchor=\"middle\">" +
           fmt(x) + "</text>\n";
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 6];
    std::string pts;
    for (std::size_t i = 0; i < series[si].ys.size() && i < xs.size(); ++i) {
      pts += fmt(sx.map(xs[i], kL, kW - kR)) + ',' + fmt(sy.map(series[si].ys[i], kH - kB, kT));
      pts += ' ';
      out += "<circle cx=\"" + fmt(sx.map(xs[i], kL, kW - kR)) + "\" cy=\"" +
             fmt(sy.map(series[si].ys[i], kH - kB, kT)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\"/>\n";
    const double ly = kT + 18.0 * static_cast<double>(si);
    out += "<rect x=\"" + fmt(kW - kR + 12) + "\" y=\"" + fmt(ly) +
           "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
    out += "<text x=\"" + fmt(kW - kR + 30) + "\" y=\"" + fmt(ly + 10) + "\">" +
           esc(series[si].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::pair<std::string, double>>& bars) {
  double yhi = 0.0;
  for (const auto& [_, v] : bars) yhi = std::max(yhi, v);
  if (yhi <= 0.0) yhi = 1.0;
  Scale sy{0.0, yhi * 1.1};
  std::string out = svg_header(title);
  out += axis_and_ticks(sy, "", y_label);
  const double span = kW - kR - kL;
  const double slot = bars.empty() ? span : span / static_cast<double>(bars.size());
  const double bw = slot * 0.6;
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x0 = kL + slot * static_cast<double>(i) + (slot - bw) / 2;
    const double ytop = sy.map(bars[i].second, kH - kB, kT);
    out += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(ytop) + "\" width=\"" + fmt(bw) +
           "\" height=\"" + fmt(kH - kB - ytop) + "\" fill=\"" + kColors[i % 6] + "\"/>\n";
    out += "<text x=\"" + fmt(x0 + bw / 2) + "\" y=\"" + fmt(ytop - 5) +
           "\" text-anchor=\"middle\">" + fmt(bars[i].second) + "</text>\n";
    out += "<text x=\"" + fmt(x0 + bw / 2) + "\" y=\"" + fmt(kH - kB + 16) +
           "\" text-anchor=\"middle\">" + esc(bars[i].first) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write: " + path);
  os << content;
}

}  // namespace egosc
