// coalfake: run, sweep, eval-llm, serve and report.
#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "coalfake/config.hpp"
#include "coalfake/pipeline.hpp"
#include "coalfake/service.hpp"
#include "coalfake/util.hpp"
#include "report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace coalfake;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run config (JSON)");
  cmd->add_option("--set", c.sets, "Override a dotted config key: key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("--out", c.out, "Output directory");
}

json build_config(const Common& c) {
  json cfg = c.config_path.empty() ? config::defaults() : config::load_file(c.config_path);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    config::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg["seed"] = *c.seed;
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void log_header(const char* command, const config::RunConfig& cfg, const fs::path& out) {
  std::cerr << "[coalfake " << command << "] seed=" << cfg.seed << " strategy=" << cfg.sampling.strategy
            << " M_per_round=" << cfg.sampling.M_per_round << " rho=" << cfg.annotator.rho
            << " mode=" << annotator::prompt_mode_name(cfg.annotator.mode) << " backend=" << cfg.annotator.backend
            << " out=" << out.string() << '\n';
}

int cmd_run(const Common& c, const std::string& resume) {
  std::unique_ptr<pipeline::Pipeline> p;
  if (!resume.empty()) {
    p = pipeline::Pipeline::resume(resume, c.out);
  } else {
    const auto cfg = config::parse(build_config(c));
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "config.json", cfg.raw);
    p = std::make_unique<pipeline::Pipeline>(cfg, c.out);
  }
  log_header("run", p->config(), c.out);
  while (p->state().status != pipeline::Status::kDone) {
    if (!p->step()) throw Conflict("run is waiting for human labels; use `coalfake serve` or annotator.human=oracle");
    if (p->state().status == pipeline::Status::kSampling || p->state().status == pipeline::Status::kDone) {
      const auto& m = p->state().rounds.back().metrics;
      std::cerr << "round " << m["round"] << ": macro_f1=" << m["macro_f1"] << " labelled=" << m["labelled"]
                << " flagged=" << m["flagged"] << " human=" << m["human_labeled"]
                << " total_usd=" << m["cost"]["total_usd"] << '\n';
    }
  }
  std::cerr << "stopped: " << p->state().stop_reason << '\n';
  return 0;
}

// "model.lambda4=0,0.1,0.5" -> ("model.lambda4", ["0", "0.1", "0.5"])
std::pair<std::string, std::vector<std::string>> parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("--grid expects key=v1,v2,..., got '" + spec + "'");
  std::vector<std::string> values;
  std::stringstream ss(spec.substr(eq + 1));
  for (std::string v; std::getline(ss, v, ',');)
    if (!v.empty()) values.push_back(v);
  if (values.empty()) throw InvalidArgument("--grid axis '" + spec.substr(0, eq) + "' has no values");
  return {spec.substr(0, eq), values};
}

int cmd_sweep(const Common& c, const std::vector<std::string>& grid) {
  if (grid.empty()) throw InvalidArgument("sweep needs at least one --grid axis");
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& g : grid) axes.push_back(parse_axis(g));
  std::sort(axes.begin(), axes.end());
  const json base = build_config(c);

  // Cartesian product in lexicographic order of the (sorted) axes.
  std::vector<std::vector<std::string>> points{{}};
  for (const auto& [key, values] : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        auto q = p;
        q.push_back(v);
        next.push_back(q);
      }
    points = std::move(next);
  }

  struct Row {
    std::vector<std::string> setting;
    std::vector<double> numeric;
    double macro_f1;
    double total_usd;
    int rounds;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    json cfg_json = base;
    std::vector<double> numeric;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      config::apply_override(cfg_json, axes[a].first, points[i][a]);
      try {
        numeric.push_back(std::stod(points[i][a]));
      } catch (const std::exception&) {
        numeric.push_back(0.0);
      }
    }
    const auto cfg = config::parse(cfg_json);
    const fs::path dir = fs::path(c.out) / ("point_" + std::to_string(i));
    fs::create_directories(dir);
    write_json(dir / "config.json", cfg.raw);
    pipeline::Pipeline p(cfg, dir);
    p.run();
    const auto& m = p.state().rounds.back().metrics;
    rows.push_back({points[i], numeric, m["macro_f1"].get<double>(), m["cost"]["total_usd"].get<double>(), p.state().round});
    std::cerr << "point " << i << ": macro_f1=" << rows.back().macro_f1 << '\n';
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.numeric != b.numeric ? a.numeric < b.numeric : a.setting < b.setting;
  });

  std::ofstream csv(fs::path(c.out) / "sweep.csv");
  json out = json::array();
  for (const auto& [key, _] : axes) csv << key << ',';
  csv << "macro_f1,total_usd,rounds\n";
  for (const auto& r : rows) {
    json setting = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      csv << r.setting[a] << ',';
      setting[axes[a].first] = r.setting[a];
    }
    csv << r.macro_f1 << ',' << r.total_usd << ',' << r.rounds << '\n';
    out.push_back({{"setting", setting}, {"macro_f1", r.macro_f1}, {"total_usd", r.total_usd}, {"rounds", r.rounds}});
  }
  write_json(fs::path(c.out) / "sweep.json", out);
  return 0;
}

int cmd_eval_llm(const Common& c) {
  const auto cfg = config::parse(build_config(c));
  log_header("eval-llm", cfg, c.out);
  json out = json::object();
  for (auto mode : {annotator::PromptMode::kPlain, annotator::PromptMode::kKnn}) {
    const auto res = pipeline::evaluate_detector(cfg, mode);
    json m = metrics::to_json(res.report);
    m["cost"] = {{"llm_usd", res.ledger.llm_usd()}, {"human_usd", 0.0}, {"total_usd", res.ledger.total_usd()}};
    out[annotator::prompt_mode_name(mode)] = m;
  }
  write_json(fs::path(c.out) / "eval_llm.json", out);
  std::cout << out.dump(2) << '\n';
  return 0;
}

service::Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const Common& c, const std::string& resume, std::optional<int> port) {
  std::unique_ptr<pipeline::Pipeline> p;
  if (!resume.empty()) {
    p = pipeline::Pipeline::resume(resume, c.out);
  } else {
    const auto cfg = config::parse(build_config(c));
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "config.json", cfg.raw);
    p = std::make_unique<pipeline::Pipeline>(cfg, c.out);
  }
  const auto& sc = p->config().service;
  log_header("serve", p->config(), c.out);
  service::Service svc(*p, {"default", sc.token, sc.cors_origin});
  const int bound = svc.bind(sc.host, port.value_or(sc.port));
  std::cerr << "listening on http://" << sc.host << ':' << bound << "/runs/default/status\n";
  g_service = &svc;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::jthread driver([&](std::stop_token st) {
    try {
      svc.drive(st);
      std::cerr << "run finished: " << svc.status_snapshot()["stop_reason"] << '\n';
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      svc.stop();
    }
  });
  svc.listen();
  driver.request_stop();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-LLM co-annotation with domain-aware active learning"};
  app.require_subcommand(1);

  // Accept --section.key=value as shorthand for --set section.key=value.
  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);  // CLI11 parses reversed vectors
  for (auto& a : args) {
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const auto key = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    if (key.find('.') != std::string::npos && eq != std::string::npos) a = "--set=" + a.substr(2);
  }

  Common common;
  std::string resume;
  std::vector<std::string> grid;
  std::optional<int> port;
  std::vector<std::string> report_runs;

  auto* run = app.add_subcommand("run", "Run rounds until the stopping rule fires");
  add_common(run, common);
  run->add_option("--resume", resume, "Continue from a saved state.json");

  auto* sweep = app.add_subcommand("sweep", "One run per point of a hyperparameter grid");
  add_common(sweep, common);
  sweep->add_option("--grid", grid, "Axis as key=v1,v2,... (repeatable)")->required();

  auto* eval = app.add_subcommand("eval-llm", "Score the LLM as a direct detector in plain and knn prompt modes");
  add_common(eval, common);

  auto* serve = app.add_subcommand("serve", "Run with the human-annotation HTTP service");
  add_common(serve, common);
  serve->add_option("--resume", resume, "Continue from a saved state.json");
  serve->add_option("--port", port, "Override service.port");

  auto* report = app.add_subcommand("report", "Export strategy and co-annotation curves from stored runs");
  report->add_option("--runs", report_runs, "Run directories (each with state.json)")->required();
  report->add_option("--out", common.out, "Output directory");

  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(common, resume);
    if (*sweep) return cmd_sweep(common, grid);
    if (*eval) return cmd_eval_llm(common);
    if (*serve) return cmd_serve(common, resume, port);
    if (*report) return tools::write_report(report_runs, common.out);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << " (path: " << e.path() << ")\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
