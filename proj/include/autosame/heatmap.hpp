#pragma once

#include "autosame/core.hpp"
#include "autosame/geometry.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace autosame::heatmap {

/// Channel order of every landmark heatmap stack: apex, mitral left, mitral right.
constexpr int kNumLandmarks = 3;

/// Three Gaussian response maps plus the sigma they were rendered with.
template <typename T>
struct HeatmapSet {
    std::array<Matrix<T>, kNumLandmarks> maps;
    T sigma_px = T(0);
};

/// Unnormalized Gaussian bump: map[r,c] = exp(-((c-x)^2 + (r-y)^2) / (2 sigma^2)).
/// Amplitude 1, so the MSE scale is independent of sigma.
template <typename T>
Matrix<T> make_heatmap(const Point2& point, double sigma_px, int h, int w) {
    ASAME_CHECK(sigma_px > 0.0, "make_heatmap: sigma_px must be positive");
    if (point.x() < 0.0 || point.x() >= static_cast<double>(w) || point.y() < 0.0 ||
        point.y() >= static_cast<double>(h))
        throw InvalidArgument("make_heatmap: point outside the grid");
    Matrix<T> map(h, w);
    const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
    for (int r = 0; r < h; ++r) {
        const double dy2 = (r - point.y()) * (r - point.y());
        for (int c = 0; c < w; ++c) {
            const double dx2 = (c - point.x()) * (c - point.x());
            map(r, c) = static_cast<T>(std::exp(-(dx2 + dy2) * inv));
        }
    }
    return map;
}

template <typename T>
HeatmapSet<T> make_heatmap_set(const geometry::Landmarks& lm, double sigma_px, int h, int w) {
    HeatmapSet<T> set;
    set.sigma_px = static_cast<T>(sigma_px);
    set.maps[0] = make_heatmap<T>(lm.apex, sigma_px, h, w);
    set.maps[1] = make_heatmap<T>(lm.mitral_left, sigma_px, h, w);
    set.maps[2] = make_heatmap<T>(lm.mitral_right, sigma_px, h, w);
    return set;
}

/// Target sigma per epoch: held at 20 px through warm-up, then linear decay
/// reaching exactly 10 px at the final epoch.
inline double sigma_schedule(int epoch, int warmup_epochs, int total_epochs) {
    ASAME_CHECK(total_epochs >= 1 && warmup_epochs >= 0 && warmup_epochs < total_epochs,
                "sigma_schedule: need 0 <= warmup_epochs < total_epochs");
    if (epoch < 0 || epoch >= total_epochs)
        throw InvalidArgument("sigma_schedule: epoch " + std::to_string(epoch) +
                              " outside [0, " + std::to_string(total_epochs) + ")");
    constexpr double kSigmaStart = 20.0;
    constexpr double kSigmaEnd = 10.0;
    if (epoch < warmup_epochs) return kSigmaStart;
    const int span = total_epochs - 1 - warmup_epochs;
    if (span <= 0) return kSigmaEnd;
    const double t = static_cast<double>(epoch - warmup_epochs) / span;
    return kSigmaStart + (kSigmaEnd - kSigmaStart) * t;
}

/// Argmax refined by a per-axis quadratic fit over the 3x3 neighborhood,
/// clamped to +-0.5 px. Returns subpixel (x, y).
template <typename T>
Point2 extract_peak(const Matrix<T>& map) {
    const int h = static_cast<int>(map.rows());
    const int w = static_cast<int>(map.cols());
    ASAME_CHECK(h > 0 && w > 0, "extract_peak: empty map");
    Eigen::Index pr = 0, pc = 0;
    const T peak = map.maxCoeff(&pr, &pc);
    if (peak == map.minCoeff()) throw NumericError("extract_peak: constant map has no peak");

    auto refine = [](double fm, double f0, double fp) {
        const double denom = fm - 2.0 * f0 + fp;
        if (std::abs(denom) < 1e-12) return 0.0;
        const double off = 0.5 * (fm - fp) / denom;
        return std::min(0.5, std::max(-0.5, off));
    };

    double x = static_cast<double>(pc);
    double y = static_cast<double>(pr);
    if (pc > 0 && pc < w - 1)
        x += refine(static_cast<double>(map(pr, pc - 1)), static_cast<double>(map(pr, pc)),
                    static_cast<double>(map(pr, pc + 1)));
    if (pr > 0 && pr < h - 1)
        y += refine(static_cast<double>(map(pr - 1, pc)), static_cast<double>(map(pr, pc)),
                    static_cast<double>(map(pr + 1, pc)));
    return {x, y};
}

template <typename T>
geometry::Landmarks extract_landmarks(const HeatmapSet<T>& set) {
    geometry::Landmarks lm;
    lm.apex = extract_peak(set.maps[0]);
    lm.mitral_left = extract_peak(set.maps[1]);
    lm.mitral_right = extract_peak(set.maps[2]);
    return lm;
}

/// Percentage of correct keypoints with threshold input_size/20 (inclusive),
/// averaged over all individual landmarks of all items.
inline double pck(const std::vector<geometry::Landmarks>& pred,
                  const std::vector<geometry::Landmarks>& gt, int input_size) {
    if (pred.size() != gt.size())
        throw ShapeMismatch("pck: prediction and ground-truth lists differ in length");
    ASAME_CHECK(input_size > 0, "pck: input_size must be positive");
    if (pred.empty()) return 0.0;
    const double thresh = static_cast<double>(input_size) / 20.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::array<Point2, 3> p{pred[i].apex, pred[i].mitral_left, pred[i].mitral_right};
        const std::array<Point2, 3> g{gt[i].apex, gt[i].mitral_left, gt[i].mitral_right};
        for (int k = 0; k < 3; ++k, ++total)
            if ((p[static_cast<std::size_t>(k)] - g[static_cast<std::size_t>(k)]).norm() <= thresh)
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace autosame::heatmap
