#ifndef GALLOP_ERROR_HPP
#define GALLOP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace gallop {

enum class ErrorCode {
  kArgument,
  kShape,
  kConfig,
  kFormat,
  kTruncated,
  kData,
  kIo,
};

// Every failure raised by the core carries one of the codes above; the C API
// maps them one-to-one onto gallop_status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace gallop

#endif  // GALLOP_ERROR_HPP
