// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace naepro {

std::string read_file(const std::string& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never see a half-written file.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace naepro
