#pragma once

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>
#include <system_error>

namespace platoon {

/// Comfort speed limit for passenger vehicles (m/s). Predicted speeds above
/// this are penalized quadratically in the global cost; realized speeds are
/// logged as violations, never clipped.
inline constexpr double kSpeedLimit = 32.6;

/// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad model or game parameters (non-finite entries, b == 0, ...).
struct InvalidParameterError : Error {
  using Error::Error;
};

/// Discretization failed (singular Tustin pencil, overflowing exponential).
struct DiscretizationError : Error {
  using Error::Error;
};

/// Scenario / topology file problems; message carries file:line context.
struct ConfigError : Error {
  using Error::Error;
};

/// Optimizer could not produce a usable answer (contract violations etc.).
/// Note: "infeasible" is a normal SolveReport status, not an exception.
struct SolverError : Error {
  using Error::Error;
};

/// Malformed wire frame; message carries the byte offset of the problem.
struct DecodeError : Error {
  using Error::Error;
};

/// Socket-level failures and round timeouts.
struct TransportError : Error {
  using Error::Error;
};

/// Shortest decimal string that round-trips to exactly the same double.
/// Used for the wire format and CSV logs, where byte-identity matters.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Inverse of format_double. Returns false on trailing garbage or overflow.
inline bool parse_double(std::string_view s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc{} && res.ptr == last;
}

}  // namespace platoon
