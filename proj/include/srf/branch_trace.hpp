#pragma once

#include <cstdint>

namespace srf {

/// Fingerprint of the branch decisions taken by piecewise operators (relu
/// signs, sampler cells) while tracing is enabled on the current thread.
/// grad_check compares fingerprints to find finite-difference probes that
/// straddle a kink.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t digest() const;

 private:
  BranchTrace* saved_;
  friend void trace_branch(std::uint64_t);
  friend bool tracing_branches();
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

bool tracing_branches();
/// Folds one decision (or a pre-hashed block of decisions) into the active trace.
void trace_branch(std::uint64_t value);

}  // namespace srf
