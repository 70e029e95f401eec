#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "spicalib/error.hpp"

#include "rig_fixtures.hpp"

namespace testutil {

// Catch matcher for asserting the failure category of a thrown Error.
class ErrorKindMatcher : public Catch::Matchers::MatcherGenericBase {
 public:
  explicit ErrorKindMatcher(spicalib::ErrorKind kind) : kind_(kind) {}
  bool match(const spicalib::Error& e) const { return e.kind() == kind_; }
  std::string describe() const override {
    return std::string("has error kind ") + spicalib::kind_name(kind_);
  }

 private:
  spicalib::ErrorKind kind_;
};

inline ErrorKindMatcher ErrorKindIs(spicalib::ErrorKind kind) {
  return ErrorKindMatcher(kind);
}

}  // namespace testutil
