#include "casdc/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "casdc/errors.hpp"

namespace casdc {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 480;
constexpr int kMargin = 56;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                          "#bcbd22", "#17becf"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

struct Scale {
  double lo, hi;
  double to_px(double v, int px_lo, int px_hi) const {
    const double range = hi - lo;
    const double t = range > 0 ? (v - lo) / range : 0.5;
    return px_lo + t * (px_hi - px_lo);
  }
};

void svg_header(std::ofstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";
}

void svg_axes(std::ofstream& out, const Scale& sx, const Scale& sy,
              const std::string& xlabel, const std::string& ylabel) {
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin
      << "\" x2=\"" << kWidth - kMargin << "\" y2=\"" << kHeight - kMargin
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\""
      << kMargin << "\" y2=\"" << kHeight - kMargin
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = sx.lo + (sx.hi - sx.lo) * i / 4.0;
    const double fy = sy.lo + (sy.hi - sy.lo) * i / 4.0;
    const double px = sx.to_px(fx, kMargin, kWidth - kMargin);
    const double py = sy.to_px(fy, kHeight - kMargin, kMargin);
    out << "<text x=\"" << px << "\" y=\"" << kHeight - kMargin + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt(fx) << "</text>\n"
        << "<text x=\"" << kMargin - 8 << "\" y=\"" << py + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt(fy) << "</text>\n";
  }
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">"
      << xlabel << "</text>\n"
      << "<text x=\"16\" y=\"" << kHeight / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 16 "
      << kHeight / 2 << ")\">" << ylabel << "</text>\n";
}

}  // namespace

void emit_curve_plot(const CCRCurve& curve, const std::filesystem::path& path) {
  if (curve.points.empty()) throw DataError("emit_curve_plot: empty curve");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());

  Scale sx{curve.points.front().first, curve.points.back().first};
  if (sx.hi <= sx.lo) sx.hi = sx.lo + 1.0;
  Scale sy{0.0, 1.0};

  svg_header(out, "CCR vs TPR");
  svg_axes(out, sx, sy, "TPR", "CCR");

  out << "<polyline fill=\"none\" stroke=\"" << kPalette[0]
      << "\" stroke-width=\"2\" points=\"";
  for (const auto& [tpr, ccr] : curve.points)
    out << sx.to_px(tpr, kMargin, kWidth - kMargin) << ","
        << sy.to_px(ccr, kHeight - kMargin, kMargin) << " ";
  out << "\"/>\n";
  for (const auto& [tpr, ccr] : curve.points)
    out << "<circle cx=\"" << sx.to_px(tpr, kMargin, kWidth - kMargin)
        << "\" cy=\"" << sy.to_px(ccr, kHeight - kMargin, kMargin)
        << "\" r=\"3\" fill=\"" << kPalette[0] << "\"/>\n";
  out << "</svg>\n";
}

void emit_projection_plot(const Projection& projection,
                          const std::filesystem::path& path) {
  if (projection.points.empty())
    throw DataError("emit_projection_plot: empty projection");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());

  Scale sx{projection.points[0].x, projection.points[0].x};
  Scale sy{projection.points[0].y, projection.points[0].y};
  for (const ProjectedPoint& p : projection.points) {
    sx.lo = std::min(sx.lo, p.x);
    sx.hi = std::max(sx.hi, p.x);
    sy.lo = std::min(sy.lo, p.y);
    sy.hi = std::max(sy.hi, p.y);
  }
  if (sx.hi <= sx.lo) sx.hi = sx.lo + 1.0;
  if (sy.hi <= sy.lo) sy.hi = sy.lo + 1.0;

  // Stable color assignment: tags in first-appearance order.
  std::map<std::string, std::size_t> color;
  std::vector<std::string> tag_order;
  for (const ProjectedPoint& p : projection.points)
    if (color.emplace(p.tag, color.size()).second) tag_order.push_back(p.tag);

  svg_header(out, "Embedding projection (" + projection.method + ")");
  svg_axes(out, sx, sy, "component 1", "component 2");

  for (const ProjectedPoint& p : projection.points)
    out << "<circle cx=\"" << sx.to_px(p.x, kMargin, kWidth - kMargin)
        << "\" cy=\"" << sy.to_px(p.y, kHeight - kMargin, kMargin)
        << "\" r=\"2.5\" fill=\"" << kPalette[color[p.tag] % kPaletteSize]
        << "\" fill-opacity=\"0.7\"/>\n";

  double ly = kMargin;
  for (const std::string& tag : tag_order) {
    out << "<circle cx=\"" << kWidth - kMargin + 10 << "\" cy=\"" << ly
        << "\" r=\"4\" fill=\"" << kPalette[color[tag] % kPaletteSize]
        << "\"/>\n"
        << "<text x=\"" << kWidth - kMargin + 20 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << tag
        << "</text>\n";
    ly += 16;
    if (ly > kHeight - kMargin) break;  // legend overflow: stop listing
  }
  out << "</svg>\n";
}

void emit_plots(const std::filesystem::path& curve_csv,
                const std::filesystem::path& projection_csv,
                const std::filesystem::path& out_dir) {
  if (!std::filesystem::exists(curve_csv))
    throw IoError("emit_plots: missing input " + curve_csv.string());
  if (!std::filesystem::exists(projection_csv))
    throw IoError("emit_plots: missing input " + projection_csv.string());
  std::filesystem::create_directories(out_dir);
  emit_curve_plot(read_curve_csv(curve_csv), out_dir / "curve.svg");
  emit_projection_plot(read_projection_csv(projection_csv),
                       out_dir / "projection.svg");
}

}  // namespace casdc
