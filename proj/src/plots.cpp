#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fsed/evaluation.hpp"

namespace fsed {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string ebr_svg(const MetricsReport& r) {
    constexpr double w = 480, h = 320, left = 60, right = 20, top = 30, bottom = 50;
    const double pw = w - left - right;
    const double ph = h - top - bottom;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\">" << r.variant << ": F1 by event-to-background ratio</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t * 0.25;
        const double y = top + ph * (1.0 - v);
        s << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
        s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
    }
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">EBR (dB)</text>\n";
    s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << top + ph / 2 << ")\">macro F1</text>\n";
    if (r.ebr_f1.empty()) {
        s << "</svg>\n";
        return s.str();
    }
    const double lo = r.ebr_f1.begin()->first;
    const double hi = r.ebr_f1.rbegin()->first;
    auto x_of = [&](double level) { return hi > lo ? left + pw * (level - lo) / (hi - lo) : left + pw / 2; };
    std::string path;
    for (const auto& [level, t] : r.ebr_f1) {
        const double x = x_of(level);
        s << "<text x=\"" << x << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fmt(level, 0) << "</text>\n";
        if (!t) continue;  // undefined bucket: gap in the line
        const double y = top + ph * (1.0 - t->macro);
        path += (path.empty() ? "M" : " L") + fmt(x) + " " + fmt(y);
        s << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    if (!path.empty()) s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
    s << "</svg>\n";
    return s.str();
}

std::string confusion_svg(const MetricsReport& r) {
    const auto n = r.confusion.size();
    constexpr double cell = 44, left = 90, top = 60;
    const double w = left + cell * static_cast<double>(n) + 20;
    const double h = top + cell * static_cast<double>(n) + 40;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\">" << r.variant << ": confusion (rows truth, columns prediction)</text>\n";
    auto label = [&](std::size_t i) { return i + 1 == n ? std::string("none") : "slot" + std::to_string(i); };
    for (std::size_t i = 0; i < n; ++i) {
        long long row_total = 0;
        for (auto v : r.confusion[i]) row_total += v;
        const double y = top + cell * static_cast<double>(i);
        s << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">" << label(i) << "</text>\n";
        s << "<text x=\"" << left + cell * static_cast<double>(i) + cell / 2 << "\" y=\"" << top - 6 << "\" text-anchor=\"middle\">" << label(i) << "</text>\n";
        for (std::size_t j = 0; j < n; ++j) {
            const double frac = row_total > 0 ? static_cast<double>(r.confusion[i][j]) / static_cast<double>(row_total) : 0.0;
            const int shade = 255 - static_cast<int>(200 * frac);
            const double x = left + cell * static_cast<double>(j);
            s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
              << shade << "," << shade << ",255)\" stroke=\"#999\"/>\n";
            s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\">" << r.confusion[i][j] << "</text>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace

std::vector<fs::path> write_plots(const MetricsReport& report, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> out{dir / "f1_vs_ebr.svg", dir / "confusion.svg"};
    write_file(out[0], ebr_svg(report));
    write_file(out[1], confusion_svg(report));
    return out;
}

}  // namespace fsed
