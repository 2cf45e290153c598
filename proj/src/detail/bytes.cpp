#include "detail/bytes.h"

#include <cstdio>
#include <fstream>

namespace aen::detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open file: " + path);
  }
  in.seekg(0, std::ios::end);
  std::streamoff len = in.tellg();
  if (len < 0) {
    throw IoError("cannot determine size of file: " + path);
  }
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
  if (len > 0 &&
      !in.read(reinterpret_cast<char*>(bytes.data()), len)) {
    throw IoError("failed to read file: " + path);
  }
  return bytes;
}

void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open file for writing: " + path);
  }
  if (!bytes.empty()) {
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  out.flush();
  if (!out) {
    throw IoError("failed to write file: " + path);
  }
}

}  // namespace aen::detail
