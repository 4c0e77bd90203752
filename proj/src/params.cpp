#include "fqdet/params.hpp"

#include <stdexcept>

namespace fqdet::tc {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::runtime_error("ParamStore: duplicate parameter " + name);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

}  // namespace fqdet::tc
