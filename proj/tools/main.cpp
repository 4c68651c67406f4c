// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "adamoe/runtime.hpp"
#include "cli.hpp"

extern char** environ;

int main(int argc, char** argv) {
    adamoe::tune_allocator();
    const std::vector<std::string> args(argv, argv + argc);
    return adamoe::cli::run_cli(args, std::cout, std::cerr, environ);
}
