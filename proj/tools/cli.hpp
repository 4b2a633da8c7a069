#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace boxformer::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

/// Entry point of the boxformer tool: gen-data, train, translate, eval,
/// grad-check, report. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace boxformer::cli
