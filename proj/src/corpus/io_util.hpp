#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "gca/errors.hpp"

namespace gca::detail {

// Writes to a sibling temp file, then renames over the target.
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace gca::detail
