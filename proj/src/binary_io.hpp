#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lightcts/errors.hpp"

namespace lightcts::detail {

static_assert(std::endian::native == std::endian::little,
              "binary I/O assumes a little-endian host");

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string label)
      : bytes_(std::move(bytes)), label_(std::move(label)) {}

  template <typename T>
  T read(const char* what) {
    if (offset_ > bytes_.size() || bytes_.size() - offset_ < sizeof(T)) {
      throw FormatError(label_ + ": truncated payload reading " + std::string(what) +
                        " at byte offset " + std::to_string(offset_));
    }
    T v;
    std::memcpy(&v, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return v;
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }
  const std::string& bytes() const { return bytes_; }
  void skip(std::size_t n) { offset_ += n; }

 private:
  std::string bytes_;
  std::string label_;
  std::size_t offset_ = 0;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace lightcts::detail
