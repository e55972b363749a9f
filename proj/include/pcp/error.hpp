#pragma once

#include <stdexcept>
#include <string>

namespace pcp {

// Error taxonomy shared across the project. Everything derives from Error so
// callers (and the CLI) can distinguish our failures from the runtime's.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };     // dimension mismatch
struct IndexError : Error { using Error::Error; };     // out-of-range id/position
struct ContractError : Error { using Error::Error; };  // precondition violated
struct ParseError : Error { using Error::Error; };     // malformed text input
struct TemplateError : Error { using Error::Error; };  // bad template structure
struct ConfigError : Error { using Error::Error; };    // invalid configuration
struct DataError : Error { using Error::Error; };      // bad dataset content
struct FormatError : Error { using Error::Error; };    // bad checkpoint bytes
struct IoError : Error { using Error::Error; };        // filesystem failure

}  // namespace pcp
