#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fqdet/tensor.hpp"

namespace fqdet::tc {

/// Ordered, named collection of parameter tensors. Order is creation order
/// and fixes the optimizer/update and serialization order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::int64_t total_params() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace fqdet::tc
