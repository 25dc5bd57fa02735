#pragma once

#include "autosame/core.hpp"
#include "autosame/geometry.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace autosame::metrics {

/// Overlap 2|A and B| / (|A| + |B|). Two empty masks agree perfectly (1).
inline double dice_coefficient(const MaskGrid& pred, const MaskGrid& gt) {
    ASAME_CHECK_SHAPE(pred.rows() == gt.rows() && pred.cols() == gt.cols(),
                      "dice_coefficient: mask shapes differ");
    long inter = 0, total = 0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
        for (Eigen::Index c = 0; c < pred.cols(); ++c) {
            const bool a = pred(r, c) != 0, b = gt(r, c) != 0;
            inter += a && b;
            total += a;
            total += b;
        }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

/// Sample Pearson correlation. Undefined cases (fewer than two samples, or a
/// zero-variance argument) are reported as NaN rather than silently zeroed, so
/// degenerate constant predictions stay visible; callers exclude NaN from
/// aggregates.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw ShapeMismatch("pearson: sample vectors differ in length");
    const std::size_t n = x.size();
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

/// Pearson r of each clinical indicator, predicted vs reference.
struct IndicatorCorr {
    double edl = std::numeric_limits<double>::quiet_NaN();
    double esl = std::numeric_limits<double>::quiet_NaN();
    double edv = std::numeric_limits<double>::quiet_NaN();
    double esv = std::numeric_limits<double>::quiet_NaN();
    double ef = std::numeric_limits<double>::quiet_NaN();

    /// Mean of the defined correlations; NaN when none are defined.
    double mean_defined() const {
        double sum = 0.0;
        int n = 0;
        for (double v : {edl, esl, edv, esv, ef})
            if (!std::isnan(v)) {
                sum += v;
                ++n;
            }
        return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }
};

inline IndicatorCorr indicator_correlations(const std::vector<geometry::LVIndicators>& pred,
                                            const std::vector<geometry::LVIndicators>& truth) {
    if (pred.size() != truth.size())
        throw ShapeMismatch("indicator_correlations: list lengths differ");
    auto gather = [&](double geometry::LVIndicators::* field) {
        std::vector<double> a(pred.size()), b(pred.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            a[i] = pred[i].*field;
            b[i] = truth[i].*field;
        }
        return pearson(a, b);
    };
    IndicatorCorr corr;
    corr.edl = gather(&geometry::LVIndicators::edl_mm);
    corr.esl = gather(&geometry::LVIndicators::esl_mm);
    corr.edv = gather(&geometry::LVIndicators::edv_ml);
    corr.esv = gather(&geometry::LVIndicators::esv_ml);
    corr.ef = gather(&geometry::LVIndicators::ef_percent);
    return corr;
}

}  // namespace autosame::metrics
