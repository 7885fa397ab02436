#pragma once

#include <torch/torch.h>

#include <vector>

#include "seal2real/image.hpp"

namespace seal2real {

/// HWC image -> [C,H,W] float32 tensor.
torch::Tensor to_tensor(const Image& image);

/// Stacks same-shape images into [N,C,H,W]. Throws ShapeMismatch.
torch::Tensor stack_images(const std::vector<Image>& images);

/// [C,H,W] tensor (any float dtype) -> image, values clamped to [0,1].
Image to_image(const torch::Tensor& tensor);

}  // namespace seal2real
