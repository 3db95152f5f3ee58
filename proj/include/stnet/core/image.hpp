#ifndef STNET_CORE_IMAGE_HPP
#define STNET_CORE_IMAGE_HPP

#include "stnet/core/tensor.hpp"

#include <string>
#include <vector>

namespace stnet {

/// RGB image, channel-major (3 planes of h*w), values in [0,1].
struct Image {
  int h = 0;
  int w = 0;
  Eigen::ArrayXd chw;

  static Image blank(int h, int w) {
    Image im;
    im.h = h;
    im.w = w;
    im.chw = Eigen::ArrayXd::Zero(3LL * h * w);
    return im;
  }
  double& at(int c, int i, int j) { return chw[(static_cast<int64_t>(c) * h + i) * w + j]; }
  double at(int c, int i, int j) const { return chw[(static_cast<int64_t>(c) * h + i) * w + j]; }
};

Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& im);

/// Area-averaging resize (good for downsampling).
Image resize_image(const Image& im, int h, int w);

/// Stacks same-sized images into a [B,3,H,W] tensor.
Tensor batch_from_images(const std::vector<Image>& ims, const std::vector<int>& indices);

/// Slices one sample of a [B,3,H,W] tensor back into an image, clamping to [0,1].
Image image_from_batch(const Tensor& batch, int b);

}  // namespace stnet

#endif
