#include "fqdet/tape.hpp"

#include <stdexcept>

namespace fqdet::tc {

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Tape* Tape::active() { return t_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
  if (!loss.requires_grad()) throw std::runtime_error("backward: loss does not require grad");
  loss.impl()->ensure_grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = prev_; }

}  // namespace fqdet::tc
