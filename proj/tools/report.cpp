#include "report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "coalfake/pipeline.hpp"
#include "coalfake/util.hpp"

namespace coalfake::tools {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double y2 = 0.0;
  int n = 0;
};

struct RunSummary {
  std::string strategy;
  double rho = 0.0;
  std::vector<Point> curve;  // (labelled fraction, macro-F1) per round
  double final_f1 = 0.0;
  double total_usd = 0.0;
};

RunSummary summarize(const fs::path& dir) {
  const fs::path file = fs::is_directory(dir) ? dir / "state.json" : dir;
  const json doc = pipeline::load_checked_json(file);
  const auto state = pipeline::run_state_from_json(doc.at("state"));
  const auto& cfg = doc.at("config");
  if (state.rounds.empty()) throw InvalidArgument(file.string() + ": run has no completed rounds");

  RunSummary s;
  s.strategy = cfg.at("sampling").at("strategy").get<std::string>();
  s.rho = cfg.at("annotator").at("rho").get<double>();
  std::size_t drawn = 0;
  for (const auto& r : state.rounds) drawn += r.selected.size();
  const double pool = static_cast<double>(state.pool_remaining.size() + drawn);
  std::size_t cumulative = 0;
  for (const auto& r : state.rounds) {
    cumulative += r.selected.size();
    s.curve.push_back({pool > 0 ? static_cast<double>(cumulative) / pool : 0.0, r.metrics.at("macro_f1").get<double>()});
  }
  const auto& last = state.rounds.back().metrics;
  s.final_f1 = last.at("macro_f1").get<double>();
  s.total_usd = last.at("cost").at("total_usd").get<double>();
  return s;
}

std::ofstream open(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw IoError(p.string(), "cannot write " + p.string());
  f << std::setprecision(10);
  return f;
}

// Minimal line chart: one polyline per series, axes scaled to the data.
void write_svg(const fs::path& path, const std::string& title, const std::string& xlabel, const std::string& ylabel,
               const std::map<std::string, std::vector<Point>>& series) {
  constexpr double W = 640, H = 420, L = 60, R = 150, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [_, pts] : series)
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  auto f = open(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n"
    << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 15 " << (T + H - B) / 2
    << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = xmin + (xmax - xmin) * i / 4, y = ymin + (ymax - ymin) * i / 4;
    f << "<text x=\"" << sx(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << std::setprecision(3) << x << "</text>\n"
      << "<text x=\"" << L - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << y << "</text>\n";
  }
  int c = 0;
  for (const auto& [name, pts] : series) {
    const char* color = colors[c % 6];
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) f << sx(p.x) << ',' << sy(p.y) << ' ';
    f << "\"/>\n";
    for (const auto& p : pts) f << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    f << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * c << "\" fill=\"" << color << "\">" << name << "</text>\n";
    ++c;
  }
  f << "</svg>\n";
}

}  // namespace

int write_report(const std::vector<std::string>& run_dirs, const fs::path& out) {
  std::vector<RunSummary> runs;
  for (const auto& d : run_dirs) runs.push_back(summarize(d));
  fs::create_directories(out);

  // Curves: average per (strategy, round index).
  std::map<std::string, std::vector<Point>> curves;
  for (const auto& r : runs) {
    auto& acc = curves[r.strategy];
    if (acc.size() < r.curve.size()) acc.resize(r.curve.size());
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      acc[i].x += r.curve[i].x;
      acc[i].y += r.curve[i].y;
      ++acc[i].n;
    }
  }
  for (auto& [_, pts] : curves)
    for (auto& p : pts) p.x /= p.n, p.y /= p.n;

  {
    auto csv = open(out / "curves.csv");
    csv << "strategy,round,labelled_fraction,macro_f1,runs\n";
    json j = json::object();
    for (const auto& [name, pts] : curves) {
      j[name] = json::array();
      for (std::size_t i = 0; i < pts.size(); ++i) {
        csv << name << ',' << i + 1 << ',' << pts[i].x << ',' << pts[i].y << ',' << pts[i].n << '\n';
        j[name].push_back({{"round", i + 1}, {"labelled_fraction", pts[i].x}, {"macro_f1", pts[i].y}, {"runs", pts[i].n}});
      }
    }
    open(out / "curves.json") << j.dump(2) << '\n';
    write_svg(out / "curves.svg", "Macro-F1 by labelled fraction", "labelled fraction of pool", "macro-F1", curves);
  }

  // rho: average final macro-F1 and cost per rho.
  std::map<double, Point> by_rho;
  for (const auto& r : runs) {
    auto& p = by_rho[r.rho];
    p.x = r.rho;
    p.y += r.final_f1;
    p.y2 += r.total_usd;
    ++p.n;
  }
  {
    auto csv = open(out / "rho.csv");
    csv << "rho,macro_f1,total_usd,runs\n";
    json j = json::array();
    std::vector<Point> f1, cost;
    for (auto& [rho, p] : by_rho) {
      p.y /= p.n, p.y2 /= p.n;
      csv << rho << ',' << p.y << ',' << p.y2 << ',' << p.n << '\n';
      j.push_back({{"rho", rho}, {"macro_f1", p.y}, {"total_usd", p.y2}, {"runs", p.n}});
      f1.push_back({rho, p.y});
      cost.push_back({rho, p.y2});
    }
    open(out / "rho.json") << j.dump(2) << '\n';
    write_svg(out / "rho_f1.svg", "Macro-F1 by human share", "rho", "macro-F1", {{"macro-F1", f1}});
    write_svg(out / "rho_cost.svg", "Annotation cost by human share", "rho", "USD", {{"total cost", cost}});
  }
  std::cerr << "report: " << runs.size() << " runs -> " << out.string() << '\n';
  return 0;
}

}  // namespace coalfake::tools
