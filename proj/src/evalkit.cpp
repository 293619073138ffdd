#include "balf/evalkit.hpp"

#include <algorithm>
#include <cmath>

#include "balf/tensor.hpp"

namespace balf {
namespace ev {

double Homography::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void Homography::normalize() {
    if (m[8] != 0.0)
        for (double& v : m) v /= m[8];
}

Homography Homography::inverse() const {
    const double d = det();
    if (std::abs(d) <= 1e-12) throw Error("homography is singular");
    Homography inv;
    inv.m = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
             (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
             (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
             (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
             (m[0] * m[4] - m[1] * m[3]) / d};
    inv.normalize();
    return inv;
}

std::array<double, 2> warp_point(const Homography& hm, double x, double y) {
    const auto& m = hm.m;
    const double w = m[6] * x + m[7] * y + m[8];
    if (std::abs(w) <= 1e-12) throw Error("point maps to infinity under the homography");
    return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

double jacobian_scale(const Homography& hm, double x, double y) {
    const auto& m = hm.m;
    const double w = m[6] * x + m[7] * y + m[8];
    if (std::abs(w) <= 1e-12) throw Error("degenerate Jacobian: point maps to infinity");
    const double xp = (m[0] * x + m[1] * y + m[2]) / w;
    const double yp = (m[3] * x + m[4] * y + m[5]) / w;
    const double j00 = (m[0] - xp * m[6]) / w, j01 = (m[1] - xp * m[7]) / w;
    const double j10 = (m[3] - yp * m[6]) / w, j11 = (m[4] - yp * m[7]) / w;
    return std::sqrt(std::abs(j00 * j11 - j01 * j10));
}

double region_overlap_error(const Keypoint& ref, const Keypoint& tgt, const Homography& hm,
                            double rho) {
    if (rho <= 0) throw Error("region half-side rho must be positive");
    const auto c = warp_point(hm, ref.x, ref.y);
    const double hr = rho * jacobian_scale(hm, ref.x, ref.y);

    const double ix = std::max(0.0, std::min(c[0] + hr, tgt.x + rho) - std::max(c[0] - hr, tgt.x - rho));
    const double iy = std::max(0.0, std::min(c[1] + hr, tgt.y + rho) - std::max(c[1] - hr, tgt.y - rho));
    const double inter = ix * iy;
    const double uni = 4.0 * hr * hr + 4.0 * rho * rho - inter;
    return 1.0 - inter / uni;
}

namespace {

bool inside_inset(const std::array<double, 2>& p, ImageDims dims, double rho) {
    return p[0] >= rho && p[0] <= dims.w - 1 - rho && p[1] >= rho && p[1] <= dims.h - 1 - rho;
}

Keypoints filter_side(const Keypoints& kpts, const Homography& hm, ImageDims other, double rho) {
    Keypoints kept;
    for (const auto& kp : kpts) {
        try {
            if (inside_inset(warp_point(hm, kp.x, kp.y), other, rho)) kept.push_back(kp);
        } catch (const Error&) {
            // a keypoint at infinity is not observed by the other image
        }
    }
    return kept;
}

}  // namespace

std::pair<Keypoints, Keypoints> shared_region_filter(const Keypoints& ref, const Keypoints& tgt,
                                                     const Homography& hm, ImageDims ref_dims,
                                                     ImageDims tgt_dims, double rho) {
    const Homography inv = hm.inverse();
    return {filter_side(ref, hm, tgt_dims, rho), filter_side(tgt, inv, ref_dims, rho)};
}

std::vector<Match> match_one_to_one(const std::vector<std::vector<double>>& errors, double eps) {
    std::vector<Match> cand;
    for (std::size_t i = 0; i < errors.size(); ++i)
        for (std::size_t j = 0; j < errors[i].size(); ++j)
            if (errors[i][j] < eps)
                cand.push_back({static_cast<int>(i), static_cast<int>(j), errors[i][j]});
    std::sort(cand.begin(), cand.end(), [](const Match& a, const Match& b) {
        if (a.err != b.err) return a.err < b.err;
        if (a.ref != b.ref) return a.ref < b.ref;
        return a.tgt < b.tgt;
    });

    std::vector<char> used_ref(errors.size(), 0);
    std::vector<char> used_tgt(errors.empty() ? 0 : errors[0].size(), 0);
    std::vector<Match> out;
    for (const auto& c : cand) {
        if (used_ref[c.ref] || used_tgt[c.tgt]) continue;
        used_ref[c.ref] = used_tgt[c.tgt] = 1;
        out.push_back(c);
    }
    return out;
}

MatchResult repeatability(const Keypoints& ref, const Keypoints& tgt, const Homography& hm,
                          ImageDims ref_dims, ImageDims tgt_dims, int top_k, double eps,
                          double rho) {
    auto take_top = [top_k](Keypoints k) {
        std::sort(k.begin(), k.end(), score_order);
        if (static_cast<int>(k.size()) > top_k) k.resize(top_k);
        return k;
    };

    MatchResult r;
    std::tie(r.filtered_ref, r.filtered_tgt) =
        shared_region_filter(take_top(ref), take_top(tgt), hm, ref_dims, tgt_dims, rho);

    std::vector<std::vector<double>> errors(r.filtered_ref.size(),
                                            std::vector<double>(r.filtered_tgt.size(), 1.0));
    for (std::size_t i = 0; i < r.filtered_ref.size(); ++i)
        for (std::size_t j = 0; j < r.filtered_tgt.size(); ++j)
            errors[i][j] = region_overlap_error(r.filtered_ref[i], r.filtered_tgt[j], hm, rho);

    r.matches = match_one_to_one(errors, eps);
    const std::size_t denom = std::min(r.filtered_ref.size(), r.filtered_tgt.size());
    r.repeatability = denom == 0 ? 0.0 : static_cast<double>(r.matches.size()) / denom;
    return r;
}

}  // namespace ev
}  // namespace balf
