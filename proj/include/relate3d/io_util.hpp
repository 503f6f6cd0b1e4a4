#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "relate3d/errors.hpp"

namespace relate3d {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Write via a temp file in the same directory, then rename into place, so a
// crash never leaves a half-written output.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out << content;
    if (!out.flush()) throw DataError("failed writing file: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw DataError("failed to move " + tmp.string() + " to " + path + ": " + ec.message());
}

}  // namespace relate3d
