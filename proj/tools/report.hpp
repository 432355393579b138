#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace coalfake::tools {

/// Reads state.json from each run directory and writes
///   curves.{csv,json,svg}  macro-F1 against labelled pool fraction, per strategy
///   rho.{csv,json,svg}     final macro-F1 and cost against rho
/// into `out`. Runs sharing a setting are averaged. Returns a process exit code.
int write_report(const std::vector<std::string>& run_dirs, const std::filesystem::path& out);

}  // namespace coalfake::tools
