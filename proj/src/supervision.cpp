#include "balf/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "balf/adam.hpp"
#include "balf/graph.hpp"
#include "balf/ops.hpp"

namespace balf {
namespace sup {

namespace {

int fold(int i, int n) { return detail::fold_reflect(i, n); }

std::vector<float> smooth_gaussian(const std::vector<float>& img, int h, int w) {
    // sigma = 1, radius 3: plenty for a 7-tap truncation.
    double taps[7];
    double sum = 0.0;
    for (int i = -3; i <= 3; ++i) sum += taps[i + 3] = std::exp(-0.5 * i * i);
    for (double& t : taps) t /= sum;

    std::vector<float> tmp(img.size()), out(img.size());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int d = -3; d <= 3; ++d) acc += taps[d + 3] * img[i * w + fold(j + d, w)];
            tmp[i * w + j] = static_cast<float>(acc);
        }
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int d = -3; d <= 3; ++d) acc += taps[d + 3] * tmp[fold(i + d, h) * w + j];
            out[i * w + j] = static_cast<float>(acc);
        }
    return out;
}

}  // namespace

Keypoints detect_reference_keypoints(const Tensor& sharp, int max_k) {
    if (sharp.rank() != 3 || sharp.dim(2) != 1)
        throw ShapeError("reference detector expects a [H,W,1] image");
    if (max_k <= 0) return {};
    const int h = sharp.dim(0), w = sharp.dim(1);

    std::vector<float> img(sharp.data().begin(), sharp.data().end());
    std::vector<float> s = smooth_gaussian(img, h, w);

    std::vector<double> gx(img.size()), gy(img.size());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            gx[i * w + j] = 0.5 * (s[i * w + fold(j + 1, w)] - s[i * w + fold(j - 1, w)]);
            gy[i * w + j] = 0.5 * (s[fold(i + 1, h) * w + j] - s[fold(i - 1, h) * w + j]);
        }

    // Minimum eigenvalue of the 3x3 box-summed structure tensor.
    std::vector<double> lam(img.size());
    double peak = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double a = 0.0, b = 0.0, c = 0.0;
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    const int q = fold(i + di, h) * w + fold(j + dj, w);
                    a += gx[q] * gx[q];
                    b += gx[q] * gy[q];
                    c += gy[q] * gy[q];
                }
            const double half = 0.5 * (a - c);
            lam[i * w + j] = 0.5 * (a + c) - std::sqrt(half * half + b * b);
            peak = std::max(peak, lam[i * w + j]);
        }
    if (peak <= 0.0) return {};
    for (double& v : lam) v /= peak;

    // Non-maximum suppression, Chebyshev radius 4. On plateaus the earliest
    // pixel in row-major order wins.
    Keypoints kpts;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double v = lam[i * w + j];
            if (v <= 0.0) continue;
            bool keep = true;
            for (int di = -4; di <= 4 && keep; ++di)
                for (int dj = -4; dj <= 4 && keep; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const int qi = i + di, qj = j + dj;
                    if (qi < 0 || qi >= h || qj < 0 || qj >= w) continue;
                    const double q = lam[qi * w + qj];
                    if (q > v || (q == v && (qi < i || (qi == i && qj < j)))) keep = false;
                }
            if (keep) kpts.push_back({static_cast<double>(j), static_cast<double>(i), v});
        }

    std::sort(kpts.begin(), kpts.end(), score_order);
    if (static_cast<int>(kpts.size()) > max_k) kpts.resize(max_k);
    return kpts;
}

Tensor render_heatmap(const Keypoints& kpts, int h, int w, double sigma) {
    if (sigma <= 0) throw Error("heatmap sigma must be positive");
    Tensor out = Tensor::zeros(Shape(h, w, 1));
    const double radius = 3.0 * sigma;
    for (const auto& kp : kpts) {
        const int i0 = std::max(0, static_cast<int>(std::ceil(kp.y - radius)));
        const int i1 = std::min(h - 1, static_cast<int>(std::floor(kp.y + radius)));
        const int j0 = std::max(0, static_cast<int>(std::ceil(kp.x - radius)));
        const int j1 = std::min(w - 1, static_cast<int>(std::floor(kp.x + radius)));
        for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j) {
                const double d2 = (i - kp.y) * (i - kp.y) + (j - kp.x) * (j - kp.x);
                if (d2 > radius * radius) continue;
                const float v = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
                out.at(i, j, 0) = std::max(out.at(i, j, 0), v);
            }
    }
    return out;
}

double lr_schedule(int epoch, const TrainConfig& tc) {
    if (epoch < 1 || epoch > tc.epochs)
        throw Error("epoch " + std::to_string(epoch) + " outside [1, " +
                    std::to_string(tc.epochs) + "]");
    if (epoch <= tc.decay_start) return tc.lr_initial;
    const double t = static_cast<double>(epoch - tc.decay_start) /
                     static_cast<double>(tc.epochs - tc.decay_start);
    // convex combination so the final epoch lands exactly on lr_final
    return tc.lr_initial * (1.0 - t) + tc.lr_final * t;
}

namespace {

struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a.m[i * 3 + k] * b.m[k * 3 + j];
            r.m[i * 3 + j] = acc;
        }
    return r;
}

Mat3 invert(const Mat3& a) {
    const auto& m = a.m;
    const double d = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
    if (std::abs(d) <= 1e-12) throw Error("augmentation transform is singular");
    Mat3 r;
    r.m = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
           (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
           (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
           (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
           (m[0] * m[4] - m[1] * m[3]) / d};
    return r;
}

Mat3 translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }

std::array<double, 2> apply(const Mat3& a, double x, double y) {
    const double w = a.m[6] * x + a.m[7] * y + a.m[8];
    if (std::abs(w) <= 1e-12) throw Error("augmented point maps to infinity");
    return {(a.m[0] * x + a.m[1] * y + a.m[2]) / w, (a.m[3] * x + a.m[4] * y + a.m[5]) / w};
}

double draw(const Range& r, std::mt19937_64& rng) {
    if (r.lo == r.hi) return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

Tensor warp_image(const Tensor& src, const Mat3& inv_map, int crop) {
    const int h = src.dim(0), w = src.dim(1);
    Tensor out = Tensor::zeros(Shape(crop, crop, 1));
    for (int i = 0; i < crop; ++i)
        for (int j = 0; j < crop; ++j) {
            const auto p = apply(inv_map, j, i);
            const int x0 = static_cast<int>(std::floor(p[0]));
            const int y0 = static_cast<int>(std::floor(p[1]));
            const double fx = p[0] - x0, fy = p[1] - y0;
            auto px = [&](int yy, int xx) { return src.at(fold(yy, h), fold(xx, w), 0); };
            const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                             fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
            out.at(i, j, 0) = static_cast<float>(v);
        }
    return out;
}

void photometric(Tensor& img, const AugmentConfig& cfg, std::mt19937_64& rng) {
    const double b = draw(cfg.brightness, rng);
    const double c = draw(cfg.contrast, rng);
    const double g = draw(cfg.gamma, rng);
    const double ns = cfg.noise_sigma > 0
                          ? std::uniform_real_distribution<double>(0.0, cfg.noise_sigma)(rng)
                          : 0.0;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& v : img.data()) {
        double x = std::pow(std::max(0.0, static_cast<double>(v)), g);
        x = (x - 0.5) * c + 0.5 + b;
        if (ns > 0) x += ns * noise(rng);
        v = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
}

}  // namespace

TrainingSample augment(const TrainingSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (s.sharp.shape() != s.blurred.shape())
        throw ShapeError("training sample images differ in size");
    const int h = s.sharp.dim(0), w = s.sharp.dim(1), crop = cfg.crop;
    if (crop > h || crop > w) throw Error("crop larger than the source image");

    // Draw order is fixed so a seed fully determines the sample.
    const double theta = draw(cfg.rotation_deg, rng) * 3.14159265358979323846 / 180.0;
    const double sc = draw(cfg.scale, rng);
    const double skew = std::tan(draw(cfg.skew_deg, rng) * 3.14159265358979323846 / 180.0);
    double p20 = 0.0, p21 = 0.0;
    if (cfg.perspective > 0) {
        std::uniform_real_distribution<double> pj(-cfg.perspective, cfg.perspective);
        p20 = pj(rng) / crop;
        p21 = pj(rng) / crop;
    }
    const int ox = w == crop ? 0 : std::uniform_int_distribution<int>(0, w - crop)(rng);
    const int oy = h == crop ? 0 : std::uniform_int_distribution<int>(0, h - crop)(rng);

    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const Mat3 affine{{sc * std::cos(theta) - sc * std::sin(theta) * skew, -sc * std::sin(theta),
                       0.0, sc * std::sin(theta) + sc * std::cos(theta) * skew,
                       sc * std::cos(theta), 0.0, 0.0, 0.0, 1.0}};
    const Mat3 persp{{1, 0, 0, 0, 1, 0, p20, p21, 1}};
    const Mat3 fwd = matmul(translation(-ox, -oy),
                            matmul(translation(cx, cy),
                                   matmul(persp, matmul(affine, translation(-cx, -cy)))));
    const Mat3 inv = invert(fwd);

    TrainingSample out;
    out.sharp = warp_image(s.sharp, inv, crop);
    out.blurred = warp_image(s.blurred, inv, crop);
    for (const auto& kp : s.gt) {
        const auto p = apply(fwd, kp.x, kp.y);
        if (p[0] >= 0 && p[0] <= crop - 1 && p[1] >= 0 && p[1] <= crop - 1)
            out.gt.push_back({p[0], p[1], kp.score});
    }
    photometric(out.sharp, cfg, rng);
    photometric(out.blurred, cfg, rng);
    return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(a) ^ b) ^ c);
}

}  // namespace

TrainLog train(const std::vector<TrainingSample>& dataset, const TrainConfig& tc,
               const AugmentConfig& ac, Model& model) {
    if (dataset.empty()) throw Error("empty training dataset");
    if (tc.batch < 1) throw Error("batch size must be at least 1");
    if (tc.epochs > 0 && tc.decay_start >= tc.epochs)
        throw Error("decay must start before the final epoch");

    TrainLog log;
    AdamState state;
    std::vector<Tensor> params = model.params.tensors();
    std::mt19937_64 shuffle_rng(tc.seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const double lr = lr_schedule(epoch, tc);
        double epoch_acc = 0.0;
        int epoch_steps = 0;

        for (std::size_t start = 0; start < order.size(); start += tc.batch) {
            const std::size_t stop = std::min(order.size(), start + tc.batch);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            model.params.zero_grad();
            double batch_acc = 0.0;

            for (std::size_t q = start; q < stop; ++q) {
                const int idx = order[q];
                // Each sample draws from its own stream, so results do not
                // depend on batch scheduling.
                std::mt19937_64 rng(mix_seed(tc.seed, static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(idx)));
                TrainingSample aug = augment(dataset[idx], ac, rng);
                const bool use_sharp = std::bernoulli_distribution(tc.mix_sharp)(rng);

                Graph g;
                Tensor pred = score_map(&g, model, use_sharp ? aug.sharp : aug.blurred);
                Tensor gt = render_heatmap(aug.gt, ac.crop, ac.crop, tc.sigma_gt);
                Tensor loss = mse_loss(&g, pred, gt);
                const double lval = loss.at(0);
                if (!std::isfinite(lval))
                    throw Error("non-finite loss at epoch " + std::to_string(epoch) +
                                ", sample " + std::to_string(idx));
                batch_acc += lval;
                Tensor scaled = scale(&g, loss, static_cast<float>(inv_b));
                g.backward(scaled, /*release=*/true);
            }

            adam_step(params, state, static_cast<float>(lr));
            log.step_loss.push_back(batch_acc * inv_b);
            epoch_acc += batch_acc * inv_b;
            ++epoch_steps;
        }
        log.epoch_loss.push_back(epoch_acc / epoch_steps);
    }
    return log;
}

}  // namespace sup
}  // namespace balf
