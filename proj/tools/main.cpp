// SPDX-License-Identifier: Apache-2.0
#include "deltattn/cli.hpp"

int main(int argc, char** argv) { return deltattn::cli_main(argc, argv); }
