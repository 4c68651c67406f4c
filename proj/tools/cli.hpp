// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace adamoe::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kQualityGate = 2,
    kNumerical = 3,
};

/// Runs one command line (args[0] is the program name). `env` is an
/// environ-style array scanned for ADAMOE_* keys; it may be null.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, char** env);

}  // namespace adamoe::cli
