#include "srf/branch_trace.hpp"

namespace srf {

namespace {
thread_local BranchTrace* t_active = nullptr;
}

BranchTrace::BranchTrace() : saved_(t_active) { t_active = this; }
BranchTrace::~BranchTrace() { t_active = saved_; }

std::uint64_t BranchTrace::digest() const { return digest_; }

bool tracing_branches() { return t_active != nullptr; }

void trace_branch(std::uint64_t value) {
  if (t_active == nullptr) return;
  std::uint64_t& h = t_active->digest_;
  h ^= value + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
}

}  // namespace srf
