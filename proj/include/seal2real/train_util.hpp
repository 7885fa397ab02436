#pragma once

#include <torch/torch.h>

#include <vector>

#include "seal2real/rng.hpp"

namespace seal2real {

/// Sets requires_grad on a tensor set for the lifetime of the scope and
/// restores the previous flags afterwards.
class RequiresGradScope {
 public:
  RequiresGradScope(std::vector<torch::Tensor> tensors, bool requires_grad) : tensors_(std::move(tensors)) {
    flags_.reserve(tensors_.size());
    for (auto& t : tensors_) {
      flags_.push_back(t.requires_grad());
      t.requires_grad_(requires_grad);
    }
  }
  ~RequiresGradScope() {
    for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].requires_grad_(flags_[i]);
  }
  RequiresGradScope(const RequiresGradScope&) = delete;
  RequiresGradScope& operator=(const RequiresGradScope&) = delete;

 private:
  std::vector<torch::Tensor> tensors_;
  std::vector<bool> flags_;
};

/// Rows of `data` at `batch` indices drawn uniformly with replacement.
inline torch::Tensor random_rows(Rng& rng, const torch::Tensor& data, int batch) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) idx.push_back(rng.uniform_int(0, data.size(0) - 1));
  return data.index_select(0, torch::tensor(idx, torch::kInt64));
}

}  // namespace seal2real
