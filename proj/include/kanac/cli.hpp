// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kanac::cli {

/// Runs one `kanac` invocation. `args[0]` is the program name. Results go to
/// `out`, progress and errors to `err`. Returns 0 on success, 1 on a runtime
/// or validation failure, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Shortest round-trip decimal form, always with a decimal point or exponent.
std::string format_number(double value);

}  // namespace kanac::cli
