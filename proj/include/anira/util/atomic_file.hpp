// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "anira/error.hpp"

namespace anira {

/// Runs `write` against a temporary sibling of `path` and renames it into
/// place only if the callback returns normally.
inline void write_atomically(const std::string& path, const std::function<void(std::ostream&)>& write,
                             std::ios::openmode mode = std::ios::out) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, mode | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    try {
      write(out);
    } catch (...) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw;
    }
    out.flush();
    if (!out) throw DataError("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, target);
}

}  // namespace anira
