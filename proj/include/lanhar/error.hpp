#pragma once

#include <stdexcept>
#include <string>

namespace lanhar {

// Error taxonomy shared between the C++ core and the C API status codes.
enum class ErrorCode {
  Argument = 1,     // precondition violated by the caller
  Parse = 2,        // malformed input data
  Label = 3,        // unmapped or non-canonical activity label
  Io = 4,           // filesystem failure
  State = 5,        // object used before required setup (e.g. unfitted normalizer)
  Backend = 6,      // LLM backend failed permanently / retries exhausted
  BackendTransient = 7,  // retryable backend failure
  Numeric = 8,      // non-finite value surfaced where finite required
  Dependency = 9,   // missing upstream artifact
  Validation = 10,  // config schema violation
  Internal = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

const char* error_code_name(ErrorCode code);

}  // namespace lanhar
