/**
 * Copyright 2026 The DSG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dsg/binary_io.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace dsg {
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_exact(const fs::path& path, std::uintmax_t bytes) {
  std::error_code ec;
  const auto actual = fs::file_size(path, ec);
  if (ec) throw_format("cannot open " + path.string());
  if (actual != bytes) {
    throw_format(path.string() + ": expected " + std::to_string(bytes) + " bytes, found " + std::to_string(actual));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> buf(bytes);
  if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(bytes))) {
    throw_format(path.string() + ": short read");
  }
  return buf;
}

template <typename U>
U load_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(p[i]) << (8 * i);
  return v;
}

template <typename U>
void store_le(U v, unsigned char* p) {
  for (std::size_t i = 0; i < sizeof(U); ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_format("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw_format("write failed: " + path.string());
}

}  // namespace

Tensor::Array read_f64_file(const fs::path& path, Index count) {
  const auto buf = read_exact(path, std::uintmax_t(count) * 8);
  Tensor::Array values(count);
  for (Index i = 0; i < count; ++i) values[i] = std::bit_cast<double>(load_le<std::uint64_t>(&buf[std::size_t(i) * 8]));
  return values;
}

void write_f64_file(const fs::path& path, const double* values, Index count) {
  std::vector<unsigned char> buf(std::size_t(count) * 8);
  for (Index i = 0; i < count; ++i) store_le(std::bit_cast<std::uint64_t>(values[i]), &buf[std::size_t(i) * 8]);
  write_bytes(path, buf);
}

std::vector<std::int32_t> read_i32_file(const fs::path& path, Index count) {
  const auto buf = read_exact(path, std::uintmax_t(count) * 4);
  std::vector<std::int32_t> values(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<std::int32_t>(load_le<std::uint32_t>(&buf[i * 4]));
  }
  return values;
}

void write_i32_file(const fs::path& path, const std::vector<std::int32_t>& values) {
  std::vector<unsigned char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) store_le(std::bit_cast<std::uint32_t>(values[i]), &buf[i * 4]);
  write_bytes(path, buf);
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_format("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw_format("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_format("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[std::size_t(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace dsg
