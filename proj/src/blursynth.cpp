#include "balf/blursynth.hpp"

#include <algorithm>
#include <cmath>

#include "balf/ops.hpp"

namespace balf {
namespace blur {

const BlurLevel& level_easy() {
    static const BlurLevel l{"easy", 9, 0.1, 32};
    return l;
}

const BlurLevel& level_hard() {
    static const BlurLevel l{"hard", 17, 0.3, 64};
    return l;
}

const BlurLevel& level_tough() {
    static const BlurLevel l{"tough", 25, 0.6, 96};
    return l;
}

const BlurLevel& level_by_name(const std::string& name) {
    if (name == "easy") return level_easy();
    if (name == "hard") return level_hard();
    if (name == "tough") return level_tough();
    throw Error("unknown blur level '" + name + "' (expected easy, hard or tough)");
}

std::vector<std::array<double, 2>> sample_trajectory(std::mt19937_64& rng,
                                                     const BlurLevel& level) {
    if (level.steps < 1) throw Error("blur level needs at least one trajectory step");
    std::vector<std::array<double, 2>> pts;
    pts.reserve(level.steps);
    std::uniform_real_distribution<double> heading0(0.0, 2.0 * 3.14159265358979323846);
    double theta = heading0(rng);
    // normal_distribution with sigma zero is undefined; curvature 0 means a
    // perfectly straight trajectory.
    std::normal_distribution<double> turn(0.0, level.curvature > 0 ? level.curvature : 1.0);
    double x = 0.0, y = 0.0;
    pts.push_back({x, y});
    for (int i = 1; i < level.steps; ++i) {
        if (level.curvature > 0) theta += turn(rng);
        x += std::cos(theta);
        y += std::sin(theta);
        pts.push_back({x, y});
    }

    double minx = pts[0][0], maxx = pts[0][0], miny = pts[0][1], maxy = pts[0][1];
    for (const auto& p : pts) {
        minx = std::min(minx, p[0]);
        maxx = std::max(maxx, p[0]);
        miny = std::min(miny, p[1]);
        maxy = std::max(maxy, p[1]);
    }
    const double extent = std::max(maxx - minx, maxy - miny);
    const double limit = level.max_kernel - 2;
    if (extent > limit) {
        const double s = limit / extent;
        for (auto& p : pts) {
            p[0] *= s;
            p[1] *= s;
        }
    }

    double cx = 0.0, cy = 0.0;
    for (const auto& p : pts) {
        cx += p[0];
        cy += p[1];
    }
    cx /= pts.size();
    cy /= pts.size();
    for (auto& p : pts) {
        p[0] -= cx;
        p[1] -= cy;
    }
    return pts;
}

BlurKernel rasterize_psf(const std::vector<std::array<double, 2>>& traj, int k) {
    if (k < 1 || k % 2 == 0) throw Error("PSF side must be odd and positive");
    if (traj.empty()) throw Error("empty trajectory");

    double minx = traj[0][0], maxx = traj[0][0], miny = traj[0][1], maxy = traj[0][1];
    for (const auto& p : traj) {
        minx = std::min(minx, p[0]);
        maxx = std::max(maxx, p[0]);
        miny = std::min(miny, p[1]);
        maxy = std::max(maxy, p[1]);
    }
    if (std::max(maxx - minx, maxy - miny) > k - 1)
        throw Error("trajectory exceeds the PSF grid");

    // Uniform arc-length resampling of the polyline, dense enough that the
    // deposit approximates a line integral (8 samples per unit length).
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < traj.size(); ++i)
        cum.push_back(cum.back() + std::hypot(traj[i][0] - traj[i - 1][0],
                                              traj[i][1] - traj[i - 1][1]));
    const double total = cum.back();

    std::vector<std::array<double, 2>> samples;
    if (total == 0.0) {
        samples.push_back(traj[0]);
    } else {
        const int m = static_cast<int>(std::ceil(8.0 * total)) + 1;
        samples.reserve(m);
        std::size_t seg = 0;
        for (int s = 0; s < m; ++s) {
            const double d = total * s / (m - 1);
            while (seg + 2 < cum.size() && cum[seg + 1] < d) ++seg;
            const double len = cum[seg + 1] - cum[seg];
            const double t = len > 0 ? (d - cum[seg]) / len : 0.0;
            samples.push_back({traj[seg][0] + t * (traj[seg + 1][0] - traj[seg][0]),
                               traj[seg][1] + t * (traj[seg + 1][1] - traj[seg][1])});
        }
    }

    // Bilinear splatting preserves each sample's center of mass, so
    // recentering the samples on their mean puts the kernel's center of
    // mass exactly at the grid center.
    double mx = 0.0, my = 0.0;
    for (const auto& s : samples) {
        mx += s[0];
        my += s[1];
    }
    mx /= samples.size();
    my /= samples.size();

    const double c = (k - 1) / 2.0;
    // A lopsided mass distribution can stick out past the grid even when
    // the bounding box fits; shrink about the mass center just enough. The
    // center of mass stays exactly mid-kernel either way.
    double reach = 0.0;
    for (const auto& s : samples)
        reach = std::max({reach, std::abs(s[0] - mx), std::abs(s[1] - my)});
    const double shrink = reach > c ? (c - 1e-9) / reach : 1.0;

    BlurKernel kern;
    kern.k = k;
    kern.weights.assign(static_cast<std::size_t>(k) * k, 0.0);
    const double w = 1.0 / samples.size();
    for (const auto& s : samples) {
        const double px = c + shrink * (s[0] - mx);
        const double py = c + shrink * (s[1] - my);
        const int ix = static_cast<int>(std::floor(px));
        const int iy = static_cast<int>(std::floor(py));
        const double fx = px - ix, fy = py - iy;
        const double contrib[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
        const int off[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        for (int q = 0; q < 4; ++q) {
            if (contrib[q] == 0.0) continue;
            const int yy = iy + off[q][0], xx = ix + off[q][1];
            if (yy < 0 || yy >= k || xx < 0 || xx >= k)
                throw Error("trajectory exceeds the PSF grid");
            kern.weights[static_cast<std::size_t>(yy) * k + xx] += w * contrib[q];
        }
    }

    double sum = 0.0;
    for (double v : kern.weights) sum += v;
    for (double& v : kern.weights) v /= sum;
    return kern;
}

Tensor correlate_reflect(const Tensor& image, const BlurKernel& kern) {
    if (image.rank() != 3 || image.dim(2) != 1)
        throw ShapeError("blur expects a single-channel [H,W,1] image");
    const int h = image.dim(0), w = image.dim(1), k = kern.k, c = (k - 1) / 2;
    Tensor out = Tensor::zeros(image.shape());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int u = 0; u < k; ++u) {
                const int si = detail::fold_reflect(i + u - c, h);
                for (int v = 0; v < k; ++v) {
                    const double kw = kern.at(u, v);
                    if (kw == 0.0) continue;
                    acc += kw * image.at(si, detail::fold_reflect(j + v - c, w), 0);
                }
            }
            out.at(i, j, 0) = static_cast<float>(acc);
        }
    return out;
}

Tensor apply_blur(const Tensor& image, const BlurKernel& kern) {
    Tensor out = correlate_reflect(image, kern);
    for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

std::pair<Tensor, BlurKernel> synth_pair(const Tensor& sharp, const BlurLevel& level,
                                         std::mt19937_64& rng) {
    const auto traj = sample_trajectory(rng, level);
    BlurKernel kern = rasterize_psf(traj, level.max_kernel);
    return {apply_blur(sharp, kern), std::move(kern)};
}

double mean_abs_laplacian(const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 1)
        throw ShapeError("mean_abs_laplacian expects [H,W,1]");
    const int h = image.dim(0), w = image.dim(1);
    double acc = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double lap = image.at(detail::fold_reflect(i - 1, h), j, 0) +
                               image.at(detail::fold_reflect(i + 1, h), j, 0) +
                               image.at(i, detail::fold_reflect(j - 1, w), 0) +
                               image.at(i, detail::fold_reflect(j + 1, w), 0) -
                               4.0 * image.at(i, j, 0);
            acc += std::abs(lap);
        }
    return acc / (static_cast<double>(h) * w);
}

}  // namespace blur
}  // namespace balf
