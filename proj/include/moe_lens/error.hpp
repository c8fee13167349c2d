#pragma once

#include <stdexcept>
#include <string>

namespace moe_lens {

/// Raised for every validation failure in the library. Messages are short,
/// lowercase and stable enough to match on in tests.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace moe_lens
