#pragma once

#include <ostream>

namespace seekr {

// Entry point of the command-line tool. Exit status: 0 on success, 2 for
// usage or configuration errors, 1 for any other failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace seekr
