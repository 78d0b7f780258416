#pragma once

#include <iosfwd>

namespace ncfkkt {

// Exit codes: 0 all checks passed, 1 a check failed, 2 usage or input error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ncfkkt
