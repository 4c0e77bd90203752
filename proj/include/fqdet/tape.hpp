#pragma once

#include <functional>
#include <vector>

#include "fqdet/tensor.hpp"

namespace fqdet::tc {

/// Ordered record of executed differentiable operations. Ops append one
/// backward step per forward execution; backward() replays them in exact
/// reverse order. A tape is single-threaded; the active tape is per-thread.
class Tape {
 public:
  void record(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }

  /// Seeds d(loss)/d(loss) = 1 on a scalar loss and runs all recorded
  /// steps newest-first. Gradients accumulate into every reachable
  /// requires_grad tensor.
  void backward(const Tensor& loss);

  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  static Tape* active();

 private:
  friend struct TapeScope;
  std::vector<std::function<void()>> steps_;
};

/// RAII activation of a tape on the current thread.
struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Disables recording within a scope (forward values only).
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

/// True when an op on these inputs should be recorded.
inline bool tracing(const Tensor& a) { return Tape::active() != nullptr && a.requires_grad(); }
inline bool tracing(const Tensor& a, const Tensor& b) {
  return Tape::active() != nullptr && (a.requires_grad() || b.requires_grad());
}

}  // namespace fqdet::tc
