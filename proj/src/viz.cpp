#include "balf/viz.hpp"

#include <algorithm>
#include <cmath>

#include "balf/io.hpp"

namespace balf {
namespace viz {

namespace {

struct Canvas {
    int h = 0, w = 0;
    std::vector<unsigned char> rgb;

    Canvas(int hh, int ww) : h(hh), w(ww), rgb(static_cast<std::size_t>(hh) * ww * 3, 0) {}

    void set(int y, int x, unsigned char r, unsigned char g, unsigned char b) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }

    void blit_gray(const Tensor& img, int x0) {
        for (int i = 0; i < img.dim(0); ++i)
            for (int j = 0; j < img.dim(1); ++j) {
                const double v = std::clamp(static_cast<double>(img.at(i, j, 0)), 0.0, 1.0);
                const auto g = static_cast<unsigned char>(std::lround(v * 255.0));
                set(i, x0 + j, g, g, g);
            }
    }

    void cross(int y, int x, unsigned char r, unsigned char g, unsigned char b) {
        for (int d = -3; d <= 3; ++d) {
            set(y, x + d, r, g, b);
            set(y + d, x, r, g, b);
        }
    }

    void line(int y0, int x0, int y1, int x1, unsigned char r, unsigned char g,
              unsigned char b) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(y0, x0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

int px(double v) { return static_cast<int>(std::lround(v)); }

}  // namespace

void draw_matches(const std::string& path, const Tensor& ref_img, const Tensor& tgt_img,
                  const ev::MatchResult& result) {
    if (ref_img.rank() != 3 || ref_img.dim(2) != 1 || tgt_img.rank() != 3 || tgt_img.dim(2) != 1)
        throw ShapeError("draw_matches expects [H,W,1] images");
    const int off = ref_img.dim(1);
    Canvas cv(std::max(ref_img.dim(0), tgt_img.dim(0)), off + tgt_img.dim(1));
    cv.blit_gray(ref_img, 0);
    cv.blit_gray(tgt_img, off);

    for (const auto& kp : result.filtered_ref) cv.cross(px(kp.y), px(kp.x), 220, 40, 40);
    for (const auto& kp : result.filtered_tgt) cv.cross(px(kp.y), px(kp.x) + off, 220, 40, 40);
    for (const auto& m : result.matches) {
        const auto& a = result.filtered_ref[m.ref];
        const auto& b = result.filtered_tgt[m.tgt];
        cv.line(px(a.y), px(a.x), px(b.y), px(b.x) + off, 40, 220, 40);
        cv.cross(px(a.y), px(a.x), 40, 220, 40);
        cv.cross(px(b.y), px(b.x) + off, 40, 220, 40);
    }
    io::write_image_ppm(path, cv.h, cv.w, cv.rgb);
}

}  // namespace viz
}  // namespace balf
