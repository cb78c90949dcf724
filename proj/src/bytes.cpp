#include "orthograd/bytes.hpp"

#include <cstdio>

namespace orthograd::bytes {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DecodeError("cannot open " + path + " for reading");
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<std::uint8_t> buf(size > 0 ? static_cast<std::size_t>(size) : 0);
  if (!buf.empty() && std::fread(buf.data(), 1, buf.size(), f) != buf.size()) {
    std::fclose(f);
    throw DecodeError("short read from " + path);
  }
  std::fclose(f);
  return buf;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  if (!data.empty() && std::fwrite(data.data(), 1, data.size(), f) != data.size()) {
    std::fclose(f);
    throw IoError("short write to " + path);
  }
  if (std::fclose(f) != 0) throw IoError("failed to flush " + path);
}

}  // namespace orthograd::bytes
