// Copyright 2026 The DCCDI Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DCCDI_CLI_HPP_
#define DCCDI_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace dccdi {

/// Runs one CLI invocation; args[0] is the program name. Returns the process
/// exit code: 0 on success, 1 on a failed operation or gradient check, 2 on a
/// usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dccdi

#endif  // DCCDI_CLI_HPP_
