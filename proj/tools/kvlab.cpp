// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/cli.hpp"

int main(int argc, char** argv) {
    return kvlab::cli::run(argc, argv);
}
