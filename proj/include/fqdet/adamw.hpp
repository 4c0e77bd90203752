#pragma once

#include <string>
#include <vector>

#include "fqdet/tensor.hpp"

namespace fqdet::tc {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay: the decay term joins the update
/// directly and never enters the moment estimates. Parameter groups carry a
/// learning-rate scale (the backbone / sampling-offset 0.1x group).
class AdamW {
 public:
  struct Group {
    std::vector<Tensor> params;
    double lr_scale = 1.0;
  };

  AdamW(std::vector<Group> groups, AdamWConfig config);

  void step();
  void zero_grad();
  void set_lr(double lr);
  double lr() const { return config_.lr; }
  std::int64_t step_count() const { return step_count_; }

  /// Moment tensors and step counter for checkpointing, in group/param order.
  std::vector<std::pair<std::string, Tensor>> state_tensors() const;
  void restore_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                     std::int64_t step_count);

 private:
  std::vector<Group> groups_;
  AdamWConfig config_;
  std::vector<std::vector<Tensor>> m_;
  std::vector<std::vector<Tensor>> v_;
  std::int64_t step_count_ = 0;
};

}  // namespace fqdet::tc
