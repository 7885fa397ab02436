#include "seal2real/tensor_image.hpp"

#include "seal2real/error.hpp"

namespace seal2real {

torch::Tensor to_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.pixels.data()), {image.height, image.width, image.channels},
                              torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().clone();
}

torch::Tensor stack_images(const std::vector<Image>& images) {
  require(!images.empty(), Errc::ShapeMismatch, "no images to stack");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& im : images) {
    require(im.same_shape(images.front()), Errc::ShapeMismatch, "images differ in shape");
    parts.push_back(to_tensor(im));
  }
  return torch::stack(parts);
}

Image to_image(const torch::Tensor& tensor) {
  require(tensor.dim() == 3, Errc::ShapeMismatch, "expected a [C,H,W] tensor");
  auto hwc = tensor.detach().clamp(0.0, 1.0).to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image out;
  out.channels = static_cast<int>(hwc.size(2));
  out.height = static_cast<int>(hwc.size(0));
  out.width = static_cast<int>(hwc.size(1));
  out.pixels.assign(hwc.data_ptr<float>(), hwc.data_ptr<float>() + hwc.numel());
  return out;
}

}  // namespace seal2real
