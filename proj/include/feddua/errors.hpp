#pragma once

#include <stdexcept>
#include <string>

namespace feddua {

// Broken precondition: dimension mismatch, non-finite input, bad call order.
struct contract_error : std::logic_error {
  explicit contract_error(const std::string& what) : std::logic_error(what) {}
};

// Invalid experiment configuration. The CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file. `line` is 1-based, or -1 when unknown.
struct parse_error : std::runtime_error {
  parse_error(const std::string& what, long line_no = -1)
      : std::runtime_error(line_no >= 0 ? what + " (line " + std::to_string(line_no) + ")"
                                        : what),
        line(line_no) {}
  long line;
};

struct io_error : std::runtime_error {
  io_error(const std::string& what, const std::string& path)
      : std::runtime_error(what + ": " + path) {}
};

}  // namespace feddua
