#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trifield::cli {

/// Parses and executes one subcommand (gen-data, train-head, train-torso,
/// render, collisions, gradcheck, eval). args excludes the program name.
/// Returns 0 on success, 1 on validation errors (bad flags, unreadable
/// inputs), 2 on runtime failures; diagnostics go to err.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace trifield::cli
