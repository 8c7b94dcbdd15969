#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace digen {

// Base class for every error this library throws. The CLI maps subtypes to
// exit codes: configuration/usage problems exit 2, runtime failures exit 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- configuration / usage ---
struct InvalidParam : Error { using Error::Error; };
struct InvalidPermutation : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct UnmappedClass : Error { using Error::Error; };
struct UnlabeledData : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };

// --- runtime failures ---
struct IoError : Error { using Error::Error; };
struct AllMasked : Error { using Error::Error; };
struct MaskViolation : Error { using Error::Error; };
struct CyclicGraph : Error { using Error::Error; };
struct EigenFailure : Error { using Error::Error; };
struct NonConvergent : Error { using Error::Error; };
struct SingularMatrix : Error { using Error::Error; };
struct ZeroSupport : Error { using Error::Error; };
struct DegenerateSequence : Error { using Error::Error; };
struct InferenceFailure : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };

struct ParseError : Error {
  std::size_t line;
  // line_no 0 means the source message already carries its own location.
  ParseError(const std::string& msg, std::size_t line_no)
      : Error(line_no == 0 ? msg : msg + " (line " + std::to_string(line_no) + ")"),
        line(line_no) {}
};

}  // namespace digen
