#pragma once

#include <filesystem>

#include "casdc/evaluation.hpp"

namespace casdc {

// Static figures as standalone SVG files: a CCR-vs-TPR line plot and a 2-D
// embedding scatter colored per tag.
void emit_curve_plot(const CCRCurve& curve, const std::filesystem::path& path);
void emit_projection_plot(const Projection& projection,
                          const std::filesystem::path& path);

// CSV-driven variants used by the CLI `plot` subcommand; missing inputs
// raise IoError.
void emit_plots(const std::filesystem::path& curve_csv,
                const std::filesystem::path& projection_csv,
                const std::filesystem::path& out_dir);

}  // namespace casdc
