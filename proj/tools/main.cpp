// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return trnk::cli::run(argc, argv); }
