#pragma once

#include <stdexcept>
#include <string>

namespace dlm {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
    config  = 2,
    data    = 3,
    numeric = 4,
    io      = 5,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string & msg) : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    int       exit_code() const { return static_cast<int>(kind_); }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & msg) {
    throw Error(kind, msg);
}

inline void check(bool cond, ErrorKind kind, const std::string & msg) {
    if (!cond) {
        fail(kind, msg);
    }
}

}  // namespace dlm
