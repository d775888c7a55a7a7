// SPDX-License-Identifier: Apache-2.0
#include "naepro/cli.hpp"

int main(int argc, char** argv) { return naepro::cli::run(argc, argv); }
