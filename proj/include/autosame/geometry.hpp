#pragma once

#include "autosame/core.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace autosame::geometry {

enum class View { A4C, A2C };
enum class Phase { ED, ES };

inline std::string to_string(View v) { return v == View::A4C ? "a4c" : "a2c"; }
inline std::string to_string(Phase p) { return p == Phase::ED ? "ed" : "es"; }

inline View view_from_string(const std::string& s) {
    if (s == "a4c" || s == "A4C") return View::A4C;
    if (s == "a2c" || s == "A2C") return View::A2C;
    throw InvalidArgument("unknown view: " + s);
}
inline Phase phase_from_string(const std::string& s) {
    if (s == "ed" || s == "ED") return Phase::ED;
    if (s == "es" || s == "ES") return Phase::ES;
    throw InvalidArgument("unknown phase: " + s);
}

/// Binary LV cavity mask with its acquisition tag and isotropic pixel spacing.
struct ViewMask {
    MaskGrid grid;   // (h, w), entries in {0,1}
    View view = View::A4C;
    Phase phase = Phase::ED;
    double spacing_mm = 1.0;

    int height() const { return static_cast<int>(grid.rows()); }
    int width() const { return static_cast<int>(grid.cols()); }

    void validate() const {
        ASAME_CHECK(spacing_mm > 0.0, "ViewMask: spacing_mm must be positive");
        ASAME_CHECK(height() >= 16 && width() >= 16, "ViewMask: grid must be at least 16x16");
        for (int r = 0; r < height(); ++r)
            for (int c = 0; c < width(); ++c)
                ASAME_CHECK(grid(r, c) <= 1, "ViewMask: grid entries must be 0 or 1");
    }
};

/// Apex and the two mitral-annulus endpoints, subpixel image coordinates.
struct Landmarks {
    Point2 apex;          // P_A
    Point2 mitral_left;   // P_L
    Point2 mitral_right;  // P_R

    void validate(int h, int w) const {
        auto inside = [&](const Point2& p) {
            return p.x() >= 0.0 && p.x() < static_cast<double>(w) && p.y() >= 0.0 &&
                   p.y() < static_cast<double>(h);
        };
        ASAME_CHECK(inside(apex) && inside(mitral_left) && inside(mitral_right),
                    "Landmarks: all points must lie inside [0,w)x[0,h)");
        ASAME_CHECK((mitral_left - mitral_right).norm() > 0.0,
                    "Landmarks: P_L and P_R must be distinct");
        // Apex must not sit on the mitral segment (degenerate axis/triangle).
        const Point2 d = mitral_right - mitral_left;
        const Point2 s = apex - mitral_left;
        const double cross = d.x() * s.y() - d.y() * s.x();
        const double t = s.dot(d) / d.squaredNorm();
        ASAME_CHECK(std::abs(cross) > 1e-9 || t < 0.0 || t > 1.0,
                    "Landmarks: apex must not lie on the mitral segment");
    }
};

/// Per-slice cavity diameters taken perpendicular to the long axis.
struct DiskProfile {
    std::vector<double> diameters_mm;  // ordered base -> apex
    double axis_length_mm = 0.0;
    int n_disks = 0;
};

/// Final clinical outputs of the measurement pipeline.
struct LVIndicators {
    double edl_mm = 0.0;
    double esl_mm = 0.0;
    double edv_ml = 0.0;
    double esv_ml = 0.0;
    double ef_percent = 0.0;
};

/// One (view, phase) item of a study: mask, landmarks and the gray image.
struct StudyItem {
    ViewMask mask;
    Landmarks landmarks;
    MatrixF image;  // [0,1] gray, same (h, w) as the mask; may be empty for measurement-only use

    void validate() const {
        mask.validate();
        landmarks.validate(mask.height(), mask.width());
        if (image.size() > 0)
            ASAME_CHECK_SHAPE(image.rows() == mask.grid.rows() && image.cols() == mask.grid.cols(),
                              "StudyItem: image and mask dimensions differ");
    }
};

/// The four-image measurement unit: {A4C, A2C} x {ED, ES}.
struct StudyQuad {
    std::string id;
    std::map<std::pair<View, Phase>, StudyItem> items;

    const StudyItem& at(View v, Phase p) const {
        const auto it = items.find({v, p});
        if (it == items.end())
            throw DataError("StudyQuad '" + id + "': missing (" + to_string(v) + ", " +
                            to_string(p) + ")");
        return it->second;
    }

    bool complete() const { return items.size() == 4; }

    void validate() const {
        for (View v : {View::A4C, View::A2C}) {
            double spacing = -1.0;
            for (Phase p : {Phase::ED, Phase::ES}) {
                const StudyItem& item = at(v, p);
                item.validate();
                ASAME_CHECK(item.mask.view == v && item.mask.phase == p,
                            "StudyQuad '" + id + "': item stored under wrong (view, phase) key");
                if (spacing < 0.0)
                    spacing = item.mask.spacing_mm;
                else if (item.mask.spacing_mm != spacing)
                    throw DataError("StudyQuad '" + id + "': inconsistent spacing within view " +
                                    to_string(v));
            }
        }
    }
};

/// Midpoint of the mitral annulus.
inline Point2 mitral_midpoint(const Landmarks& lm) {
    return 0.5 * (lm.mitral_left + lm.mitral_right);
}

/// Long axis from the mitral midpoint toward the apex.
/// Returns the unit direction (pixel coords) and the physical length in mm.
inline std::pair<Point2, double> long_axis(const Landmarks& lm, double spacing_mm) {
    ASAME_CHECK(spacing_mm > 0.0, "long_axis: spacing_mm must be positive");
    const Point2 mid = mitral_midpoint(lm);
    const Point2 d = lm.apex - mid;
    const double len_px = d.norm();
    if (len_px < 1.0)
        throw NumericError("long_axis: degenerate axis, apex within 1 px of the mitral midpoint");
    return {d / len_px, len_px * spacing_mm};
}

namespace detail {

/// Bilinear sample of the binary grid; outside points read as 0.
inline double sample_mask(const MaskGrid& grid, double x, double y) {
    const int h = static_cast<int>(grid.rows());
    const int w = static_cast<int>(grid.cols());
    if (x < -1.0 || y < -1.0 || x > static_cast<double>(w) || y > static_cast<double>(h))
        return 0.0;
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    auto v = [&](int yy, int xx) -> double {
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
        return static_cast<double>(grid(yy, xx));
    };
    return v(y0, x0) * (1 - fx) * (1 - fy) + v(y0, x0 + 1) * fx * (1 - fy) +
           v(y0 + 1, x0) * (1 - fx) * fy + v(y0 + 1, x0 + 1) * fx * fy;
}

/// Distance from `origin` along `dir` to the 0.5-crossing of the mask field,
/// following the connected run that contains the origin. Subpixel via linear
/// interpolation between the last inside and first outside sample.
inline double march_to_boundary(const MaskGrid& grid, const Point2& origin, const Point2& dir,
                                double s_max) {
    constexpr double kStep = 0.25;
    double s_prev = 0.0;
    double v_prev = sample_mask(grid, origin.x(), origin.y());
    for (double s = kStep; s <= s_max; s += kStep) {
        const Point2 p = origin + s * dir;
        const double v = sample_mask(grid, p.x(), p.y());
        if (v < 0.5) {
            const double t = (v_prev - 0.5) / std::max(v_prev - v, 1e-12);
            return s_prev + t * (s - s_prev);
        }
        s_prev = s;
        v_prev = v;
    }
    return s_max;
}

}  // namespace detail

/// Chord lengths of the cavity at n_disks slice midpoints along the long axis.
/// The chord through each level is the connected run of mask containing the
/// axis point; 0 if the axis point itself lies outside the mask.
inline DiskProfile diameter_profile(const ViewMask& mask, const Landmarks& lm, int n_disks) {
    ASAME_CHECK(n_disks >= 1, "diameter_profile: n_disks must be >= 1");
    const auto [dir, length_mm] = long_axis(lm, mask.spacing_mm);
    const double length_px = length_mm / mask.spacing_mm;
    const Point2 base = mitral_midpoint(lm);
    const Point2 perp(-dir.y(), dir.x());
    const double s_max = std::hypot(static_cast<double>(mask.height()),
                                    static_cast<double>(mask.width()));

    DiskProfile prof;
    prof.axis_length_mm = length_mm;
    prof.n_disks = n_disks;
    prof.diameters_mm.resize(static_cast<std::size_t>(n_disks), 0.0);
    for (int i = 0; i < n_disks; ++i) {
        const double t = (i + 0.5) / n_disks;
        const Point2 center = base + t * length_px * dir;
        if (detail::sample_mask(mask.grid, center.x(), center.y()) < 0.5) continue;
        const double left = detail::march_to_boundary(mask.grid, center, -perp, s_max);
        const double right = detail::march_to_boundary(mask.grid, center, perp, s_max);
        prof.diameters_mm[static_cast<std::size_t>(i)] = (left + right) * mask.spacing_mm;
    }
    return prof;
}

/// Biplane method of disks: V = (pi/4) * (L/N) * sum a_i * b_i, in mL.
/// L is the longer of the two views' long-axis lengths.
inline double simpson_biplane(const DiskProfile& a4c, const DiskProfile& a2c) {
    if (a4c.n_disks != a2c.n_disks)
        throw ShapeMismatch("simpson_biplane: disk counts differ (" +
                            std::to_string(a4c.n_disks) + " vs " + std::to_string(a2c.n_disks) +
                            ")");
    const double axis_mm = std::max(a4c.axis_length_mm, a2c.axis_length_mm);
    double sum = 0.0;
    for (int i = 0; i < a4c.n_disks; ++i)
        sum += a4c.diameters_mm[static_cast<std::size_t>(i)] *
               a2c.diameters_mm[static_cast<std::size_t>(i)];
    const double volume_mm3 = std::numbers::pi / 4.0 * (axis_mm / a4c.n_disks) * sum;
    return volume_mm3 / 1000.0;
}

inline double ejection_fraction(double edv_ml, double esv_ml) {
    if (!(edv_ml > 0.0)) throw InvalidArgument("ejection_fraction: EDV must be positive");
    ASAME_CHECK(esv_ml >= 0.0, "ejection_fraction: ESV must be nonnegative");
    return 100.0 * (edv_ml - esv_ml) / edv_ml;
}

/// Full guideline pipeline: per-phase biplane volumes, per-phase long-axis
/// lengths (max over views), and EF. Pure function of the study.
inline LVIndicators measure_study(const StudyQuad& study, int n_disks = 20) {
    for (View v : {View::A4C, View::A2C})
        for (Phase p : {Phase::ED, Phase::ES}) study.at(v, p);  // completeness, names the gap
    study.validate();

    auto profile = [&](View v, Phase p) {
        const StudyItem& item = study.at(v, p);
        try {
            return diameter_profile(item.mask, item.landmarks, n_disks);
        } catch (const Error& e) {
            throw NumericError("measure_study (" + to_string(v) + ", " + to_string(p) +
                               "): " + e.what());
        }
    };

    LVIndicators out;
    const DiskProfile a4c_ed = profile(View::A4C, Phase::ED);
    const DiskProfile a2c_ed = profile(View::A2C, Phase::ED);
    const DiskProfile a4c_es = profile(View::A4C, Phase::ES);
    const DiskProfile a2c_es = profile(View::A2C, Phase::ES);

    out.edl_mm = std::max(a4c_ed.axis_length_mm, a2c_ed.axis_length_mm);
    out.esl_mm = std::max(a4c_es.axis_length_mm, a2c_es.axis_length_mm);
    out.edv_ml = simpson_biplane(a4c_ed, a2c_ed);
    out.esv_ml = simpson_biplane(a4c_es, a2c_es);
    out.ef_percent = ejection_fraction(out.edv_ml, out.esv_ml);
    return out;
}

}  // namespace autosame::geometry
