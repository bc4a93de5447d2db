#include "steerlab/hash.hpp"

#include <sodium.h>

#include <fstream>
#include <sstream>

#include "steerlab/error.hpp"

namespace steerlab {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::shape_mismatch: return "shape-mismatch";
        case ErrorCode::non_finite: return "non-finite";
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::io_failure: return "io-failure";
        case ErrorCode::hash_mismatch: return "hash-mismatch";
        case ErrorCode::config_mismatch: return "config-mismatch";
        case ErrorCode::schema_violation: return "schema-violation";
        case ErrorCode::missing_artifact: return "missing-artifact";
        case ErrorCode::network_failure: return "network-failure";
        case ErrorCode::training_aborted: return "training-aborted";
    }
    return "unknown";
}

std::vector<unsigned char> sha256(std::span<const unsigned char> bytes) {
    std::vector<unsigned char> out(crypto_hash_sha256_BYTES);
    crypto_hash_sha256(out.data(), bytes.data(), bytes.size());
    return out;
}

std::vector<unsigned char> sha256(const std::string& bytes) {
    return sha256(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

static std::string to_hex(const std::vector<unsigned char>& digest) {
    static const char* hexdigits = "0123456789abcdef";
    std::string out;
    out.reserve(digest.size() * 2);
    for (unsigned char b : digest) {
        out.push_back(hexdigits[b >> 4]);
        out.push_back(hexdigits[b & 0xf]);
    }
    return out;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    return to_hex(sha256(bytes));
}

std::string sha256_hex(const std::string& bytes) {
    return to_hex(sha256(bytes));
}

std::string sha256_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_failure, "cannot open file for hashing: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

}  // namespace steerlab
