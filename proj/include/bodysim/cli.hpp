#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bodysim {

inline constexpr std::string_view kVersion = "1.0.0";

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace bodysim
