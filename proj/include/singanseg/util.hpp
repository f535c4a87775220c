#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace singanseg::util {

/// SHA-256 hex digest of a byte buffer.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

/// SHA-256 hex digest of a file's contents. Throws DataError if unreadable.
std::string sha256_file(const std::filesystem::path& p);

/// Combined digest of every regular file under a directory (sorted relative
/// paths + content hashes), used by determinism tests.
std::string sha256_tree(const std::filesystem::path& dir);

/// key=value progress line on stdout (machine-parseable batch-farm logging).
void log_kv(std::initializer_list<std::pair<std::string, std::string>> kvs);

std::string format_float(double v, int precision = 6);

}  // namespace singanseg::util
