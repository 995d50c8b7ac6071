#pragma once

#include <string>

namespace rlvr {

// Writes to "<path>.tmp" then renames over path. Throws kIo.
void write_file_atomic(const std::string& path, const std::string& bytes);
// Throws kIo if the file cannot be opened.
std::string read_file(const std::string& path);

}  // namespace rlvr
