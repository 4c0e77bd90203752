#include "fqdet/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace fqdet::tc {

AdamW::AdamW(std::vector<Group> groups, AdamWConfig config)
    : groups_(std::move(groups)), config_(config) {
  if (config_.lr <= 0.0) throw std::runtime_error("AdamW: lr must be positive");
  for (const Group& g : groups_) {
    std::vector<Tensor> gm, gv;
    for (const Tensor& p : g.params) {
      gm.push_back(Tensor::zeros(p.shape(), p.dtype()));
      gv.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
    m_.push_back(std::move(gm));
    v_.push_back(std::move(gv));
  }
}

void AdamW::step() {
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = config_.lr * groups_[gi].lr_scale;
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Tensor& p = groups_[gi].params[pi];
      if (!p.has_grad()) continue;
      auto& pd = p.data();
      const auto& gd = p.grad();
      auto& md = m_[gi][pi].data();
      auto& vd = v_[gi][pi].data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        const double g = gd[i];
        md[i] = b1 * md[i] + (1.0 - b1) * g;
        vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
        const double mhat = md[i] / bc1;
        const double vhat = vd[i] / bc2;
        pd[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * pd[i]);
      }
      p.impl()->quantize_data();
      m_[gi][pi].impl()->quantize_data();
      v_[gi][pi].impl()->quantize_data();
    }
  }
}

void AdamW::zero_grad() {
  for (Group& g : groups_)
    for (Tensor& p : g.params) p.zero_grad();
}

void AdamW::set_lr(double lr) {
  if (lr <= 0.0) throw std::runtime_error("AdamW: lr must be positive");
  config_.lr = lr;
}

std::vector<std::pair<std::string, Tensor>> AdamW::state_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const std::string base = "g" + std::to_string(gi) + ".p" + std::to_string(pi);
      out.emplace_back("optim." + base + ".m", m_[gi][pi]);
      out.emplace_back("optim." + base + ".v", v_[gi][pi]);
    }
  }
  return out;
}

void AdamW::restore_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                          std::int64_t step_count) {
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const std::string base = "g" + std::to_string(gi) + ".p" + std::to_string(pi);
      for (const auto& [name, t] : tensors) {
        if (name == "optim." + base + ".m") {
          if (t.shape() != m_[gi][pi].shape()) throw std::runtime_error("AdamW: state shape mismatch " + name);
          m_[gi][pi].data() = t.data();
        } else if (name == "optim." + base + ".v") {
          if (t.shape() != v_[gi][pi].shape()) throw std::runtime_error("AdamW: state shape mismatch " + name);
          v_[gi][pi].data() = t.data();
        }
      }
    }
  }
  step_count_ = step_count;
}

}  // namespace fqdet::tc
