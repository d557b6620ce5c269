// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "divex/cli.hpp"

int main(int argc, char** argv) { return divex::run_cli(argc, argv, std::cout, std::cerr); }
