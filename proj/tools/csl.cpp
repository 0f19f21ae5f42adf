// SPDX-License-Identifier: Apache-2.0

#include "csl/cli/app.hpp"

int main(int argc, char** argv) { return csl::cli::run(argc, argv); }
