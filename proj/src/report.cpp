#include "rlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rlab {

namespace {

constexpr int kWidth = 640, kHeight = 420;
constexpr int kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out;
}

}  // namespace

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) {  // no data at all
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return kHeight - kBottom - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"monospace\" font-size=\"14\">" << title << "</text>\n";

    // Axes and ticks.
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
        << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
        << kWidth - kRight << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 5.0;
        const double fy = ymin + (ymax - ymin) * t / 5.0;
        svg << "<text x=\"" << fmt(sx(fx)) << "\" y=\"" << kHeight - kBottom + 16
            << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"10\">" << fmt(fx)
            << "</text>\n";
        svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(sy(fy) + 3)
            << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">" << fmt(fy)
            << "</text>\n";
        svg << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(sy(fy)) << "\" x2=\""
            << kWidth - kRight << "\" y2=\"" << fmt(sy(fy))
            << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" << xlabel
        << "</text>\n";
    svg << "<text x=\"14\" y=\"" << kHeight / 2
        << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\" "
        << "transform=\"rotate(-90 14 " << kHeight / 2 << ")\">" << ylabel << "</text>\n";

    for (size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        if (!series[i].points.empty()) {
            svg << "<polyline fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : series[i].points)
                svg << fmt(sx(x)) << "," << fmt(sy(y)) << " ";
            svg << "\"/>\n";
        }
        const int ly = kTop + 14 * static_cast<int>(i);
        svg << "<line x1=\"" << kWidth - kRight - 120 << "\" y1=\"" << ly << "\" x2=\""
            << kWidth - kRight - 100 << "\" y2=\"" << ly << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << kWidth - kRight - 94 << "\" y=\"" << ly + 4
            << "\" font-family=\"monospace\" font-size=\"10\">" << series[i].name
            << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write svg: " + path);
    out << svg.str();
}

std::string summary_table(const std::vector<MetricsRecord>& log) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-12s %8s %8s %8s %8s %8s %6s\n", "attack", "step",
                  "epoch", "nat_acc", "rob_acc", "asr", "n");
    out << buf;
    for (const auto& rec : log) {
        std::snprintf(buf, sizeof(buf), "%-12s %8lld %8.3f %8.4f %8.4f %8s %6lld\n",
                      rec.attack_id.c_str(), static_cast<long long>(rec.step), rec.epoch,
                      rec.nat_acc, rec.rob_acc,
                      rec.asr.has_value() ? fmt(*rec.asr).c_str() : "-",
                      static_cast<long long>(rec.example_count));
        out << buf;
    }
    return out.str();
}

std::vector<std::string> report_metrics(const std::string& csv_path,
                                        const std::string& out_dir) {
    const auto log = read_metrics_csv(csv_path);
    std::vector<std::string> written;

    // Group by attack, preserving first-seen order.
    std::vector<std::string> attack_order;
    for (const auto& rec : log)
        if (std::find(attack_order.begin(), attack_order.end(), rec.attack_id) ==
            attack_order.end())
            attack_order.push_back(rec.attack_id);

    for (const auto& attack : attack_order) {
        Series nat{"nat_acc", {}}, rob{"rob_acc", {}}, asr{"asr", {}};
        for (const auto& rec : log) {
            if (rec.attack_id != attack) continue;
            const auto x = static_cast<double>(rec.step);
            nat.points.emplace_back(x, rec.nat_acc);
            rob.points.emplace_back(x, rec.rob_acc);
            if (rec.asr.has_value()) asr.points.emplace_back(x, *rec.asr);
        }
        const std::string path = out_dir + "/metrics_" + sanitize(attack) + ".svg";
        write_svg_chart(path, "attack " + attack, "step", "accuracy / asr",
                        {nat, rob, asr});
        written.push_back(path);
    }

    const std::string summary_path = out_dir + "/summary.txt";
    std::ofstream sum(summary_path, std::ios::trunc);
    if (!sum) throw FormatError("cannot write summary: " + summary_path);
    sum << summary_table(log);
    written.push_back(summary_path);
    return written;
}

std::string sweep_csv_header() { return "alpha," + metrics_csv_header(); }

std::string sweep_csv_row(double alpha, const MetricsRecord& rec) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f,", alpha);
    return std::string(buf) + metrics_csv_row(rec);
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open sweep csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != sweep_csv_header())
        throw FormatError(path + ": unexpected sweep csv header");

    std::vector<SweepRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw FormatError(path + ": malformed row at line " + std::to_string(lineno));
        SweepRow row;
        try {
            row.alpha = std::stod(line.substr(0, comma));
        } catch (const std::exception&) {
            throw FormatError(path + ": malformed alpha at line " + std::to_string(lineno));
        }
        // Reuse the metrics parser on the remainder via a temp buffer.
        const std::string rest = line.substr(comma + 1);
        std::vector<std::string> fields;
        std::stringstream ss(rest);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!rest.empty() && rest.back() == ',') fields.push_back("");
        if (fields.size() != 8)
            throw FormatError(path + ": malformed row at line " + std::to_string(lineno));
        try {
            row.rec.step = std::stoll(fields[0]);
            row.rec.epoch = std::stod(fields[1]);
            row.rec.attack_id = fields[2];
            row.rec.nat_acc = std::stod(fields[3]);
            row.rec.rob_acc = std::stod(fields[4]);
            if (!fields[5].empty()) row.rec.asr = std::stod(fields[5]);
            row.rec.example_count = std::stoll(fields[6]);
            row.rec.seed = std::stoull(fields[7]);
        } catch (const std::exception&) {
            throw FormatError(path + ": malformed row at line " + std::to_string(lineno));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::string> report_sweep(const std::string& csv_path,
                                      const std::string& out_dir) {
    const auto rows = read_sweep_csv(csv_path);
    std::vector<std::string> written;

    std::vector<std::string> attack_order;
    for (const auto& row : rows)
        if (std::find(attack_order.begin(), attack_order.end(), row.rec.attack_id) ==
            attack_order.end())
            attack_order.push_back(row.rec.attack_id);

    std::vector<Series> series;
    Series nat{"nat_acc", {}};
    for (const auto& attack : attack_order) {
        Series s{attack, {}};
        for (const auto& row : rows) {
            if (row.rec.attack_id != attack) continue;
            s.points.emplace_back(row.alpha, row.rec.rob_acc);
        }
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
    }
    for (const auto& row : rows)
        if (row.rec.attack_id == attack_order.front())
            nat.points.emplace_back(row.alpha, row.rec.nat_acc);
    std::sort(nat.points.begin(), nat.points.end());
    series.push_back(std::move(nat));

    const std::string path = out_dir + "/sweep.svg";
    write_svg_chart(path, "robust accuracy vs mix ratio", "alpha", "accuracy", series);
    written.push_back(path);

    const std::string summary_path = out_dir + "/sweep_summary.txt";
    std::ofstream sum(summary_path, std::ios::trunc);
    if (!sum) throw FormatError("cannot write summary: " + summary_path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-8s %-12s %8s %8s %8s\n", "alpha", "attack", "nat_acc",
                  "rob_acc", "asr");
    sum << buf;
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-8.2f %-12s %8.4f %8.4f %8s\n", row.alpha,
                      row.rec.attack_id.c_str(), row.rec.nat_acc, row.rec.rob_acc,
                      row.rec.asr.has_value() ? fmt(*row.rec.asr).c_str() : "-");
        sum << buf;
    }
    written.push_back(summary_path);
    return written;
}

}  // namespace rlab
