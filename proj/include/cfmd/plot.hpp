#pragma once

#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "cfmd/common.hpp"
#include "cfmd/metrics.hpp"

namespace cfmd {

/// Standalone SVG line plot of one or more ROC curves with the chance diagonal.
inline std::string roc_svg(const std::vector<std::pair<std::string, RocCurve>>& curves, int size = 400) {
    require(!curves.empty(), "nothing to plot");
    static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const int pad = 50;
    const int w = size + 2 * pad;
    auto x = [&](double fpr) { return pad + fpr * size; };
    auto y = [&](double tpr) { return pad + (1.0 - tpr) * size; };

    std::string out = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n", w);
    out += fmt::format("<rect x=\"{0}\" y=\"{0}\" width=\"{1}\" height=\"{1}\" fill=\"none\" stroke=\"#000\"/>\n", pad, size);
    out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n", x(0),
                       y(0), x(1), y(1));
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        out += fmt::format("<text x=\"{:.1f}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.2f}</text>\n", x(v),
                           pad + size + 16, v);
        out += fmt::format("<text x=\"{}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"end\">{:.2f}</text>\n", pad - 6,
                           y(v) + 4, v);
    }
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">False positive rate</text>\n",
                       pad + size / 2, w - 10);
    out += fmt::format(
        "<text x=\"14\" y=\"{0}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">True "
        "positive rate</text>\n",
        pad + size / 2);
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& [name, curve] = curves[i];
        require(!curve.points.empty(), "ROC curve '" + name + "' has no points");
        const char* colour = palette[i % std::size(palette)];
        std::string pts;
        for (const auto& p : curve.points) pts += fmt::format("{:.2f},{:.2f} ", x(p.fpr), y(p.tpr));
        out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", colour, pts);
        out += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{} (AUROC {:.3f})</text>\n", pad + 10,
                           pad + size - 10 - 16 * static_cast<int>(curves.size() - 1 - i), colour, name, area(curve));
    }
    out += "</svg>\n";
    return out;
}

}  // namespace cfmd
