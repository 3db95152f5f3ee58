#include "stnet/core/image.hpp"

#include "stnet/core/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <stdexcept>

namespace stnet {

Image load_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw MissingDependencyError("cannot read image: " + path);
  Image im = Image::blank(bgr.rows, bgr.cols);
  for (int i = 0; i < bgr.rows; ++i) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(i);
    for (int j = 0; j < bgr.cols; ++j) {
      im.at(0, i, j) = row[j][2] / 255.0;
      im.at(1, i, j) = row[j][1] / 255.0;
      im.at(2, i, j) = row[j][0] / 255.0;
    }
  }
  return im;
}

void save_image(const std::string& path, const Image& im) {
  cv::Mat bgr(im.h, im.w, CV_8UC3);
  for (int i = 0; i < im.h; ++i) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(i);
    for (int j = 0; j < im.w; ++j) {
      auto q = [&](int c) {
        double v = im.at(c, i, j);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        return static_cast<unsigned char>(v * 255.0 + 0.5);
      };
      row[j] = cv::Vec3b(q(2), q(1), q(0));
    }
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

Image resize_image(const Image& im, int h, int w) {
  if (im.h == h && im.w == w) return im;
  cv::Mat src(im.h, im.w, CV_64FC3);
  for (int i = 0; i < im.h; ++i) {
    cv::Vec3d* row = src.ptr<cv::Vec3d>(i);
    for (int j = 0; j < im.w; ++j) row[j] = cv::Vec3d(im.at(0, i, j), im.at(1, i, j), im.at(2, i, j));
  }
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_AREA);
  Image out = Image::blank(h, w);
  for (int i = 0; i < h; ++i) {
    const cv::Vec3d* row = dst.ptr<cv::Vec3d>(i);
    for (int j = 0; j < w; ++j) {
      out.at(0, i, j) = row[j][0];
      out.at(1, i, j) = row[j][1];
      out.at(2, i, j) = row[j][2];
    }
  }
  return out;
}

Tensor batch_from_images(const std::vector<Image>& ims, const std::vector<int>& indices) {
  if (indices.empty()) throw std::logic_error("batch_from_images: empty index list");
  const Image& first = ims.at(static_cast<size_t>(indices[0]));
  Tensor t({static_cast<int>(indices.size()), 3, first.h, first.w});
  const int64_t chw = 3LL * first.h * first.w;
  for (size_t b = 0; b < indices.size(); ++b) {
    const Image& im = ims.at(static_cast<size_t>(indices[b]));
    if (im.h != first.h || im.w != first.w) throw std::logic_error("batch_from_images: size mismatch");
    t.data.segment(static_cast<int64_t>(b) * chw, chw) = im.chw;
  }
  return t;
}

Image image_from_batch(const Tensor& batch, int b) {
  if (batch.ndim() != 4 || batch.dim(1) != 3) throw std::logic_error("image_from_batch: expected [B,3,H,W]");
  Image im = Image::blank(batch.dim(2), batch.dim(3));
  const int64_t chw = 3LL * im.h * im.w;
  im.chw = batch.data.segment(static_cast<int64_t>(b) * chw, chw).max(0.0).min(1.0);
  return im;
}

}  // namespace stnet
