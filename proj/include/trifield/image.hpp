#pragma once

#include <string>
#include <vector>

#include "trifield/math.hpp"

namespace trifield {

/// RGB image with channels in [0,1]. Writes clamp into range; non-finite
/// values are rejected since they always indicate an upstream bug.
class FrameBuffer {
  public:
    FrameBuffer() = default;
    FrameBuffer(int width, int height, Vec3 fill = {0, 0, 0});

    int width() const { return width_; }
    int height() const { return height_; }

    void set(int x, int y, Vec3 rgb);
    Vec3 at(int x, int y) const { return pixels_[index(x, y)]; }

    const std::vector<Vec3>& pixels() const { return pixels_; }
    std::vector<Vec3>& pixels() { return pixels_; }

  private:
    std::size_t index(int x, int y) const;
    int width_ = 0, height_ = 0;
    std::vector<Vec3> pixels_;
};

/// Binary PPM (P6, maxval 255). Channels quantized by rounding half-up.
void write_ppm(const FrameBuffer& fb, const std::string& path);
FrameBuffer read_ppm(const std::string& path);

/// Mean squared error over all pixels and channels.
double image_mse(const FrameBuffer& a, const FrameBuffer& b);

/// 10*log10(1/mse) on [0,1] images, capped at 99 dB for (near-)zero mse.
double psnr_from_mse(double mse);
double image_psnr(const FrameBuffer& a, const FrameBuffer& b);

}  // namespace trifield
