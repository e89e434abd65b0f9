// SPDX-License-Identifier: Apache-2.0

#include "fist/cli.hpp"

int main(int argc, char** argv) { return fist::cli::dispatch(argc, argv); }
