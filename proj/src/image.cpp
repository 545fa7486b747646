#include "trifield/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace trifield {

FrameBuffer::FrameBuffer(int width, int height, Vec3 fill)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height, fill) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("FrameBuffer: bad size");
}

std::size_t FrameBuffer::index(int x, int y) const {
    if (x < 0 || x >= width_ || y < 0 || y >= height_)
        throw std::out_of_range("FrameBuffer: pixel out of range");
    return static_cast<std::size_t>(y) * width_ + x;
}

void FrameBuffer::set(int x, int y, Vec3 rgb) {
    if (!all_finite(rgb)) throw std::runtime_error("FrameBuffer: non-finite pixel value");
    pixels_[index(x, y)] = {clamp01(rgb.x), clamp01(rgb.y), clamp01(rgb.z)};
}

static unsigned char quantize(double v) {
    double q = std::floor(clamp01(v) * 255.0 + 0.5);
    return static_cast<unsigned char>(q);
}

void write_ppm(const FrameBuffer& fb, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P6\n" << fb.width() << " " << fb.height() << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(fb.width()) * 3);
    for (int y = 0; y < fb.height(); ++y) {
        for (int x = 0; x < fb.width(); ++x) {
            Vec3 c = fb.at(x, y);
            row[3 * x + 0] = quantize(c.x);
            row[3 * x + 1] = quantize(c.y);
            row[3 * x + 2] = quantize(c.z);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("short write: " + path);
}

FrameBuffer read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path);
    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comments between header fields
        int c;
        while ((c = in.peek()) != EOF) {
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw std::runtime_error("bad ppm header: " + path);
        return v;
    };
    long w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw std::runtime_error("unsupported ppm maxval: " + path);
    in.get();  // single whitespace before raster
    FrameBuffer fb(static_cast<int>(w), static_cast<int>(h));
    std::vector<unsigned char> raster(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size()))
        throw std::runtime_error("truncated ppm raster: " + path);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
            fb.set(static_cast<int>(x), static_cast<int>(y),
                   {raster[i] / 255.0, raster[i + 1] / 255.0, raster[i + 2] / 255.0});
        }
    return fb;
}

double image_mse(const FrameBuffer& a, const FrameBuffer& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw std::invalid_argument("image_mse: size mismatch");
    double acc = 0.0;
    const auto& pa = a.pixels();
    const auto& pb = b.pixels();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        Vec3 d = pa[i] - pb[i];
        acc += d.x * d.x + d.y * d.y + d.z * d.z;
    }
    return acc / (3.0 * static_cast<double>(pa.size()));
}

double psnr_from_mse(double mse) {
    constexpr double kCap = 99.0;
    if (mse <= 0.0) return kCap;
    double v = 10.0 * std::log10(1.0 / mse);
    return v > kCap ? kCap : v;
}

double image_psnr(const FrameBuffer& a, const FrameBuffer& b) {
    return psnr_from_mse(image_mse(a, b));
}

}  // namespace trifield
