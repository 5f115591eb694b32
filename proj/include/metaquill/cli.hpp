// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// The metaquill command line. Exit codes: 0 success, 2 validation error,
// 3 numeric failure, 4 I/O error.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace metaquill {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitValidation = 2,
  kExitNumeric = 3,
  kExitIo = 4,
};

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace metaquill
