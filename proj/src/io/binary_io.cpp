#include "deepself/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace deepself::io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  return ByteReader(read_file(path), path.string());
}

void ByteWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace deepself::io
