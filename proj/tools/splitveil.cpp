// SPDX-License-Identifier: Apache-2.0
#include "splitveil/cli.hpp"

int main(int argc, char** argv) { return splitveil::dispatch(argc, argv); }
