#include <fstream>
#include <iomanip>
#include <sstream>

#include "nbed/errors.hpp"
#include "nbed/eval.hpp"

namespace nbed {

void write_pr_svg(const EvalSummary& summary, const std::filesystem::path& path) {
  constexpr double kSize = 400, kMargin = 50, kPlot = kSize - 2 * kMargin;
  auto px = [&](double recall) { return kMargin + recall * kPlot; };
  auto py = [&](double precision) { return kSize - kMargin - precision * kPlot; };

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i <= 10; ++i) {
    const double v = i / 10.0;
    svg << "<line x1=\"" << px(v) << "\" y1=\"" << py(0) << "\" x2=\"" << px(v) << "\" y2=\"" << py(1)
        << "\" stroke=\"#eee\"/>\n";
    svg << "<line x1=\"" << px(0) << "\" y1=\"" << py(v) << "\" x2=\"" << px(1) << "\" y2=\"" << py(v)
        << "\" stroke=\"#eee\"/>\n";
    if (i % 2 == 0) {
      svg << "<text x=\"" << px(v) << "\" y=\"" << py(0) + 16 << "\" text-anchor=\"middle\">" << std::setprecision(1)
          << v << "</text>\n";
      svg << "<text x=\"" << px(0) - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n"
          << std::setprecision(2);
    }
  }
  svg << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kPlot << "\" height=\"" << kPlot
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kSize / 2 << "\" y=\"" << kSize - 12 << "\" text-anchor=\"middle\">Recall</text>\n";
  svg << "<text x=\"14\" y=\"" << kSize / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << kSize / 2
      << ")\">Precision</text>\n";

  svg << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (const auto& p : summary.pr_points) {
    if (p.precision == 0.0 && p.recall == 0.0) continue;
    svg << px(p.recall) << ',' << py(p.precision) << ' ';
  }
  svg << "\"/>\n";
  svg << std::setprecision(4) << "<text x=\"" << px(0.05) << "\" y=\"" << py(0.05)
      << "\">ODS=" << summary.ods << " OIS=" << summary.ois << "</text>\n";
  svg << "</svg>\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg.str();
}

}  // namespace nbed
