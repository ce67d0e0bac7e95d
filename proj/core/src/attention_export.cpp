#include "coar/attention_export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "coar/ops.hpp"

namespace coar {

AttentionMaps render_attention(const Model& model, const Tensor& image) {
  const FeatureBundle fb = extract(model.backbone, image);
  const int gh = fb.attention.dim(0);
  const int gw = fb.attention.dim(1);
  const int K = fb.attention.dim(2);
  const int H = image.dim(0);
  const int W = image.dim(1);
  const Tensor soft = softmax2d(fb.attention);  // (gh*gw) x K
  const Tensor up = ag::bilinear_resize_matrix(gh, gw, H, W);

  AttentionMaps out;
  out.width = W;
  out.height = H;
  const Tensor peaks = attention_peaks(fb.attention);
  out.peaks.assign(peaks.values().begin(), peaks.values().end());
  std::vector<double> plane(static_cast<std::size_t>(H) * W);
  for (int j = 0; j < K; ++j) {
    for (int p = 0; p < H * W; ++p) {
      double v = 0.0;
      for (int q = 0; q < gh * gw; ++q) v += up.at(p, q) * soft.at(q, j);
      plane[static_cast<std::size_t>(p)] = v;
    }
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double range = *hi - *lo;
    std::vector<std::uint8_t> px(plane.size(), 0);
    if (range > 0.0) {
      for (std::size_t p = 0; p < plane.size(); ++p) {
        px[p] = static_cast<std::uint8_t>(std::lround(255.0 * (plane[p] - *lo) / range));
      }
    }
    out.channels.push_back(std::move(px));
  }
  return out;
}

void write_png_gray(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, int width, int height) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("pixel buffer does not match image size");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), width, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace coar
