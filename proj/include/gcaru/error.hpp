#pragma once

#include <stdexcept>
#include <string>

namespace gcaru {

// Error taxonomy. The CLI maps these onto process exit codes, so new error
// sites should pick the narrowest matching type.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class CkptFault {
    kBadMagic,
    kBadVersion,
    kChecksum,
    kDigestMismatch,
    kMalformed,
    kIo,
};

struct CheckpointError : std::runtime_error {
    CkptFault fault;
    CheckpointError(CkptFault f, const std::string& msg)
        : std::runtime_error(msg), fault(f) {}
};

// Internal contract violations (impossible for valid specs). Always active,
// independent of NDEBUG, so tests can rely on it.
[[noreturn]] inline void contract_fail(const char* expr, const char* file, int line) {
    throw std::logic_error(std::string("internal contract violation: ") + expr +
                           " at " + file + ":" + std::to_string(line));
}

#define GCARU_CHECK(expr) \
    do { if (!(expr)) ::gcaru::contract_fail(#expr, __FILE__, __LINE__); } while (0)

}  // namespace gcaru
