#include "admd/errors.hpp"

namespace admd {
namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  if (problems.empty()) return "configuration error";
  std::string out = problems.front();
  for (std::size_t i = 1; i < problems.size(); ++i) out += "; " + problems[i];
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(join_problems(problems)), problems_(std::move(problems)) {}

}  // namespace admd
