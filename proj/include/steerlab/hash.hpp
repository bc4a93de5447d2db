#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace steerlab {

// SHA-256 digest, raw 32 bytes.
std::vector<unsigned char> sha256(std::span<const unsigned char> bytes);
std::vector<unsigned char> sha256(const std::string& bytes);

// Lowercase hex digest.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& bytes);

// Hash of a file's contents. Throws Error(io_failure) if unreadable.
std::string sha256_file_hex(const std::string& path);

}  // namespace steerlab
