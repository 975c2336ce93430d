#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vibro {

// Little-endian binary writers/readers. Host is assumed little-endian
// (static_asserted in io.cpp); formats are defined as LE on disk.
class BinaryWriter {
public:
  explicit BinaryWriter(const std::string& path)
      : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for write: " + path);
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), std::streamsize(n));
  }
  void magic(const char m[4]) { bytes(m, 4); }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  template <class T>
  void array(const T* p, std::size_t n) {
    bytes(p, n * sizeof(T));
  }

private:
  std::ofstream out_;
};

class BinaryReader {
public:
  explicit BinaryReader(const std::string& path)
      : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open for read: " + path);
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (!in_) throw std::runtime_error("truncated file");
  }
  void expect_magic(const char m[4]) {
    char got[4];
    bytes(got, 4);
    if (std::string(got, 4) != std::string(m, 4))
      throw std::runtime_error("bad magic, expected " + std::string(m, 4));
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  template <class T>
  void array(T* p, std::size_t n) {
    bytes(p, n * sizeof(T));
  }

private:
  std::ifstream in_;
};

// FNV-1a 64-bit, used for content hashes embedded in artifacts.
std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t fnv1a_file(const std::string& path);

// Flat key=value config files ('#' comments, blank lines ignored).
class Config {
public:
  Config() = default;
  static Config load(const std::string& path);
  static Config parse(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& dflt = "") const;
  double num(const std::string& key, double dflt) const;
  std::int64_t integer(const std::string& key, std::int64_t dflt) const;
  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

private:
  std::map<std::string, std::string> kv_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Splits one CSV line (no quoting; fields here never contain commas).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace vibro
