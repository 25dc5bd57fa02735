#pragma once

#include "autosame/core.hpp"
#include "autosame/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <utility>

namespace autosame::phantom {

inline constexpr double kPi = 3.14159265358979323846;

/// Continuous cavity silhouette in canonical coordinates: u runs along the
/// long axis from base (u = 0) to apex (u = l_mm), v is the signed lateral
/// offset. The base shape is the half ellipse with semi-axes l_mm and
/// d_mm / 2; an optional circular "notch" bite carved into the +v boundary
/// makes the silhouette non-convex (papillary-muscle stand-in).
struct CavitySilhouette {
    double l_mm = 0.0;         ///< long-axis length, base to apex
    double d_mm = 0.0;         ///< basal diameter
    double notch_depth = 0.0;  ///< bite radius as a fraction of d_mm / 2; 0 disables
    double notch_pos = 0.45;   ///< bite centre along the axis as a fraction of l_mm

    void validate() const {
        ASAME_CHECK(l_mm > 0.0 && d_mm > 0.0, "CavitySilhouette: axis and diameter must be positive");
        ASAME_CHECK(notch_depth >= 0.0 && notch_depth <= 0.6,
                    "CavitySilhouette: notch_depth must lie in [0, 0.6]");
        if (notch_depth > 0.0) {
            ASAME_CHECK(notch_pos >= 0.15 && notch_pos <= 0.8,
                        "CavitySilhouette: notch_pos must lie in [0.15, 0.8]");
            // The chord through the axis must stay connected: the bite may not
            // reach closer than 10% of the basal radius to the axis.
            ASAME_CHECK(notch_center().y() - notch_radius() >= 0.1 * 0.5 * d_mm,
                        "CavitySilhouette: notch reaches too close to the long axis");
        }
    }

    /// Half width of the smooth half ellipse at axial position u; 0 outside [0, l].
    double half_width(double u) const {
        if (u < 0.0 || u > l_mm) return 0.0;
        const double t = u / l_mm;
        return 0.5 * d_mm * std::sqrt(std::max(0.0, 1.0 - t * t));
    }

    double notch_radius() const { return notch_depth * 0.5 * d_mm; }

    /// Bite centre (u0, v0), placed on the +v boundary of the smooth shape.
    Point2 notch_center() const {
        const double u0 = notch_pos * l_mm;
        return {u0, half_width(u0)};
    }

    bool contains(double u, double v) const {
        if (u < 0.0 || u > l_mm) return false;
        const double t = u / l_mm;
        const double s = 2.0 * v / d_mm;
        if (t * t + s * s > 1.0) return false;
        if (notch_depth > 0.0) {
            const Point2 c = notch_center();
            const double r = notch_radius();
            if ((u - c.x()) * (u - c.x()) + (v - c.y()) * (v - c.y()) < r * r) return false;
        }
        return true;
    }

    /// Width of the connected chord through the axis (v = 0) at height u. The
    /// bite can split a crossing line into two runs; only the run containing
    /// the axis counts, mirroring the measurement engine's chord rule.
    double chord_mm(double u) const {
        const double half = half_width(u);
        if (half <= 0.0) return 0.0;
        if (notch_depth > 0.0) {
            const Point2 c = notch_center();
            const double r = notch_radius();
            const double dd = r * r - (u - c.x()) * (u - c.x());
            if (dd > 0.0) {
                const double lo = c.y() - std::sqrt(dd);  // validate() keeps lo > 0
                return half + std::min(half, lo);
            }
        }
        return 2.0 * half;
    }
};

/// Volume of the biplane solid of elliptical disks spanned by two orthogonal
/// silhouettes sharing one long axis, by fine midpoint quadrature of
/// (pi/4) * a(u) * b(u) du. This is the high-resolution reference for notched
/// shapes; for smooth ones it reproduces pi * L * D_a * D_b / 6 to quadrature
/// accuracy.
inline double cavity_volume_ml(const CavitySilhouette& a4c, const CavitySilhouette& a2c,
                               int n_steps = 200000) {
    a4c.validate();
    a2c.validate();
    ASAME_CHECK(n_steps >= 1, "cavity_volume_ml: n_steps must be positive");
    ASAME_CHECK(std::abs(a4c.l_mm - a2c.l_mm) <= 1e-9 * std::max(a4c.l_mm, a2c.l_mm),
                "cavity_volume_ml: views must share the long-axis length");
    const double du = a4c.l_mm / n_steps;
    double sum = 0.0;
    for (int i = 0; i < n_steps; ++i) {
        const double u = (i + 0.5) * du;
        sum += a4c.chord_mm(u) * a2c.chord_mm(u);
    }
    return 0.25 * kPi * sum * du / 1000.0;  // mm^3 -> mL
}

/// Full parameter set of one synthetic study. Lengths in mm; the analytic
/// volumes of the smooth shape are closed-form half-ellipsoid volumes
/// pi * L * D4 * D2 / 6.
struct PhantomParams {
    double l_ed_mm = 80.0;
    double l_es_mm = 64.0;
    double d4_ed_mm = 48.0;
    double d4_es_mm = 33.0;
    double d2_ed_mm = 48.0;
    double d2_es_mm = 33.0;
    double spacing_mm = 0.6;
    double tilt_deg = 0.0;     ///< in-plane rotation of the long axis
    double noise = 0.35;       ///< multiplicative speckle strength in [0, 1]
    double notch_depth = 0.0;  ///< non-convex variant; see CavitySilhouette
    double notch_pos = 0.45;
    int image_size = 256;
    std::uint64_t seed = 0;

    CavitySilhouette silhouette(geometry::View v, geometry::Phase p) const {
        const double l = p == geometry::Phase::ED ? l_ed_mm : l_es_mm;
        const double d4 = p == geometry::Phase::ED ? d4_ed_mm : d4_es_mm;
        const double d2 = p == geometry::Phase::ED ? d2_ed_mm : d2_es_mm;
        return {l, v == geometry::View::A4C ? d4 : d2, notch_depth, notch_pos};
    }

    /// True volume of the generated shape: closed form when smooth, fine
    /// quadrature of the notched silhouettes otherwise.
    double volume_ml(geometry::Phase p) const {
        if (notch_depth == 0.0) {
            const double l = p == geometry::Phase::ED ? l_ed_mm : l_es_mm;
            const double d4 = p == geometry::Phase::ED ? d4_ed_mm : d4_es_mm;
            const double d2 = p == geometry::Phase::ED ? d2_ed_mm : d2_es_mm;
            return kPi * l * d4 * d2 / 6.0 / 1000.0;
        }
        return cavity_volume_ml(silhouette(geometry::View::A4C, p),
                                silhouette(geometry::View::A2C, p));
    }

    geometry::LVIndicators analytic_indicators() const {
        geometry::LVIndicators out;
        out.edl_mm = l_ed_mm;
        out.esl_mm = l_es_mm;
        out.edv_ml = volume_ml(geometry::Phase::ED);
        out.esv_ml = volume_ml(geometry::Phase::ES);
        out.ef_percent = geometry::ejection_fraction(out.edv_ml, out.esv_ml);
        return out;
    }

    void validate() const {
        ASAME_CHECK(l_ed_mm > 0.0 && l_es_mm > 0.0 && d4_ed_mm > 0.0 && d4_es_mm > 0.0 &&
                        d2_ed_mm > 0.0 && d2_es_mm > 0.0,
                    "PhantomParams: all lengths must be positive");
        ASAME_CHECK(l_es_mm <= l_ed_mm && d4_es_mm <= d4_ed_mm && d2_es_mm <= d2_ed_mm,
                    "PhantomParams: ES dimensions must not exceed ED dimensions");
        ASAME_CHECK(spacing_mm > 0.0, "PhantomParams: spacing_mm must be positive");
        ASAME_CHECK(noise >= 0.0 && noise <= 1.0, "PhantomParams: noise must lie in [0, 1]");
        ASAME_CHECK(std::abs(tilt_deg) <= 45.0, "PhantomParams: |tilt_deg| must be <= 45");
        ASAME_CHECK(image_size >= 64, "PhantomParams: image_size must be at least 64");
        for (geometry::View v : {geometry::View::A4C, geometry::View::A2C})
            for (geometry::Phase p : {geometry::Phase::ED, geometry::Phase::ES})
                silhouette(v, p).validate();
        // The rotated bounding rectangle of the largest silhouette must fit
        // inside the frame with a safety margin.
        const double margin_px = 6.0;
        const double l_px = l_ed_mm / spacing_mm;
        const double d_px = std::max(d4_ed_mm, d2_ed_mm) / spacing_mm;
        const double reach = std::hypot(0.5 * l_px, 0.5 * d_px) + margin_px;
        ASAME_CHECK(reach <= 0.5 * (image_size - 1),
                    "PhantomParams: cavity does not fit in the frame at this spacing");
        const double edv = volume_ml(geometry::Phase::ED);
        const double esv = volume_ml(geometry::Phase::ES);
        ASAME_CHECK(edv > esv, "PhantomParams: analytic EF must be positive (EDV > ESV)");
    }

    /// Solves the basal diameters (shared between views, per phase) that give
    /// the prescribed volume pair: D = sqrt(6 V / (pi L)).
    static PhantomParams from_volumes(double edv_ml, double esv_ml, double l_ed_mm = 85.0,
                                      double l_es_mm = 70.0) {
        ASAME_CHECK(edv_ml > 0.0 && esv_ml > 0.0 && edv_ml > esv_ml,
                    "PhantomParams::from_volumes: need EDV > ESV > 0");
        ASAME_CHECK(l_ed_mm > 0.0 && l_es_mm > 0.0 && l_es_mm <= l_ed_mm,
                    "PhantomParams::from_volumes: need 0 < L_es <= L_ed");
        PhantomParams params;
        params.l_ed_mm = l_ed_mm;
        params.l_es_mm = l_es_mm;
        const double d_ed = std::sqrt(6.0 * edv_ml * 1000.0 / (kPi * l_ed_mm));
        const double d_es = std::sqrt(6.0 * esv_ml * 1000.0 / (kPi * l_es_mm));
        params.d4_ed_mm = params.d2_ed_mm = d_ed;
        params.d4_es_mm = params.d2_es_mm = d_es;
        return params;
    }
};

/// Clinically plausible random study parameters, a pure function of the seed.
inline PhantomParams random_params(std::uint64_t seed, bool notched = false) {
    Rng rng = Rng::derive(seed, 0x706172616d73ULL);  // "params"
    PhantomParams p;
    p.l_ed_mm = rng.uniform(70.0, 95.0);
    p.l_es_mm = p.l_ed_mm * rng.uniform(0.72, 0.88);
    p.d4_ed_mm = rng.uniform(40.0, 52.0);
    p.d2_ed_mm = rng.uniform(40.0, 52.0);
    p.d4_es_mm = p.d4_ed_mm * rng.uniform(0.58, 0.8);
    p.d2_es_mm = p.d2_ed_mm * rng.uniform(0.58, 0.8);
    p.tilt_deg = rng.uniform(-12.0, 12.0);
    p.noise = rng.uniform(0.25, 0.5);
    if (notched) {
        p.notch_depth = rng.uniform(0.25, 0.45);
        p.notch_pos = rng.uniform(0.3, 0.6);
    }
    p.seed = seed;
    return p;
}

/// Placement of a silhouette in the image: base midpoint plus the orthonormal
/// axis frame, in pixel units.
struct ViewFrame {
    Point2 base_mid;
    Point2 axis_dir;  ///< unit vector, base -> apex
    Point2 lat_dir;   ///< unit vector, +v side (toward P_R)
};

/// Centers the long axis in the frame; tilt = 0 points the apex straight up.
inline ViewFrame make_frame(double tilt_deg, double l_px, int image_size) {
    const double theta = tilt_deg * kPi / 180.0;
    const Point2 axis{std::sin(theta), -std::cos(theta)};
    const Point2 lat{std::cos(theta), std::sin(theta)};
    const double c = 0.5 * (image_size - 1);
    const Point2 center{c, c};
    return {center - 0.5 * l_px * axis, axis, lat};
}

inline MaskGrid rasterize_cavity(const CavitySilhouette& s, const ViewFrame& f, double spacing_mm,
                                 int image_size) {
    MaskGrid grid = MaskGrid::Zero(image_size, image_size);
    for (int r = 0; r < image_size; ++r)
        for (int c = 0; c < image_size; ++c) {
            const Point2 q = Point2(c, r) - f.base_mid;
            const double u = q.dot(f.axis_dir) * spacing_mm;
            const double v = q.dot(f.lat_dir) * spacing_mm;
            if (s.contains(u, v)) grid(r, c) = 1;
        }
    return grid;
}

namespace detail {

inline MaskGrid dilate_once(const MaskGrid& m) {
    const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
    MaskGrid out = m;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (m(r, c)) continue;
            for (int dr = -1; dr <= 1 && !out(r, c); ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < h && cc >= 0 && cc < w && m(rr, cc)) {
                        out(r, c) = 1;
                        break;
                    }
                }
        }
    return out;
}

/// Separable Gaussian blur with replicated borders.
inline MatrixF gaussian_blur(const MatrixF& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    Eigen::VectorXf kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i)
        kernel(i + radius) = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    kernel /= kernel.sum();
    const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
    MatrixF tmp(h, w), out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel(i + radius) * img(r, std::clamp(c + i, 0, w - 1));
            tmp(r, c) = acc;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel(i + radius) * tmp(std::clamp(r + i, 0, h - 1), c);
            out(r, c) = acc;
        }
    return out;
}

}  // namespace detail

/// Mask-conditioned echo-like texture: dark cavity, bright myocardial rim
/// around it, mid-gray far field; multiplicative speckle, then a light blur.
inline MatrixF render_image(const MaskGrid& mask, double noise, Rng& rng, int rim_px = 8) {
    ASAME_CHECK(noise >= 0.0 && noise <= 1.0, "render_image: noise must lie in [0, 1]");
    ASAME_CHECK(rim_px >= 1, "render_image: rim_px must be positive");
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    MaskGrid dilated = mask;
    for (int i = 0; i < rim_px; ++i) dilated = detail::dilate_once(dilated);
    MatrixF img(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            img(r, c) = mask(r, c) ? 0.08f : (dilated(r, c) ? 0.78f : 0.22f);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double gain = 1.0 + noise * (2.0 * rng.uniform() - 1.0);
            img(r, c) = static_cast<float>(std::max(0.0, img(r, c) * gain));
        }
    img = detail::gaussian_blur(img, 1.2);
    return img.cwiseMax(0.0f).cwiseMin(1.0f);
}

/// One generated study plus the ground-truth indicators of its geometry.
struct PhantomStudy {
    geometry::StudyQuad quad;
    geometry::LVIndicators analytic;
};

/// Rasterizes the four (view, phase) items of one study. Deterministic in
/// params.seed; the analytic indicators are exact properties of the continuous
/// shape, independent of the rasterization.
inline PhantomStudy generate_phantom_study(const PhantomParams& params) {
    params.validate();
    PhantomStudy study;
    study.quad.id = "ph-" + std::to_string(params.seed);
    study.analytic = params.analytic_indicators();
    int stream = 0;
    for (geometry::View v : {geometry::View::A4C, geometry::View::A2C})
        for (geometry::Phase p : {geometry::Phase::ED, geometry::Phase::ES}) {
            const CavitySilhouette s = params.silhouette(v, p);
            const ViewFrame frame = make_frame(params.tilt_deg, s.l_mm / params.spacing_mm,
                                               params.image_size);
            geometry::StudyItem item;
            item.mask.grid = rasterize_cavity(s, frame, params.spacing_mm, params.image_size);
            item.mask.view = v;
            item.mask.phase = p;
            item.mask.spacing_mm = params.spacing_mm;
            const double half_d_px = 0.5 * s.d_mm / params.spacing_mm;
            item.landmarks.apex = frame.base_mid + (s.l_mm / params.spacing_mm) * frame.axis_dir;
            item.landmarks.mitral_left = frame.base_mid - half_d_px * frame.lat_dir;
            item.landmarks.mitral_right = frame.base_mid + half_d_px * frame.lat_dir;
            Rng rng = Rng::derive(params.seed, 0x706869ULL, static_cast<std::uint64_t>(stream++));
            item.image = render_image(item.mask.grid, params.noise, rng);
            item.validate();
            study.quad.items.emplace(std::make_pair(v, p), std::move(item));
        }
    study.quad.validate();
    return study;
}

// ---------------------------------------------------------------------------
// Geometry-consistent augmentation
// ---------------------------------------------------------------------------

/// Sampling ranges of the augmentation composite.
struct AugmentConfig {
    double max_rotation_deg = 15.0;
    double min_crop_scale = 0.8;    ///< crop side as a fraction of the image, then resize back
    double max_perspective = 0.04;  ///< corner jitter as a fraction of the side
    int max_retries = 10;
};

/// One concrete draw of the augmentation transform.
struct TransformDraw {
    double rotation_deg = 0.0;
    double crop_scale = 1.0;
    /// Destination offsets of the TL, TR, BL, BR corners. Note Eigen vectors
    /// do not zero themselves on value-initialization, hence the explicit
    /// defaults.
    std::array<Point2, 4> corner_shift_px{Point2{0.0, 0.0}, Point2{0.0, 0.0}, Point2{0.0, 0.0},
                                          Point2{0.0, 0.0}};
};

inline TransformDraw sample_transform(Rng& rng, const AugmentConfig& cfg, int image_size) {
    ASAME_CHECK(cfg.min_crop_scale > 0.0 && cfg.min_crop_scale <= 1.0,
                "sample_transform: min_crop_scale must lie in (0, 1]");
    TransformDraw draw;
    draw.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    draw.crop_scale = rng.uniform(cfg.min_crop_scale, 1.0);
    const double m = cfg.max_perspective * image_size;
    for (auto& shift : draw.corner_shift_px) shift = {rng.uniform(-m, m), rng.uniform(-m, m)};
    return draw;
}

namespace detail {

/// Homography mapping four source points onto four destination points,
/// normalized so H(2,2) = 1.
inline Eigen::Matrix3d solve_homography(const std::array<Point2, 4>& src,
                                        const std::array<Point2, 4>& dst) {
    Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const double x = src[i].x(), y = src[i].y();
        const double u = dst[i].x(), v = dst[i].y();
        a.row(2 * i) << x, y, 1, 0, 0, 0, -x * u, -y * u;
        a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -x * v, -y * v;
        b(2 * i) = u;
        b(2 * i + 1) = v;
    }
    const Eigen::Matrix<double, 8, 1> h = a.colPivHouseholderQr().solve(b);
    if (!h.allFinite()) throw NumericError("solve_homography: degenerate correspondence");
    Eigen::Matrix3d m;
    m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
    return m;
}

}  // namespace detail

inline Point2 apply_homography(const Eigen::Matrix3d& m, const Point2& p) {
    const Eigen::Vector3d q = m * Eigen::Vector3d(p.x(), p.y(), 1.0);
    if (std::abs(q.z()) < 1e-12)
        throw NumericError("apply_homography: point maps to infinity");
    return {q.x() / q.z(), q.y() / q.z()};
}

/// Source -> destination homography of the composite rotation, center crop
/// (with resize back to the full frame), and perspective jitter. An
/// all-defaults draw yields the exact identity.
inline Eigen::Matrix3d transform_matrix(const TransformDraw& draw, int h, int w) {
    ASAME_CHECK(draw.crop_scale > 0.0 && draw.crop_scale <= 1.0,
                "transform_matrix: crop_scale must lie in (0, 1]");
    const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    if (draw.rotation_deg != 0.0) {
        const double t = draw.rotation_deg * kPi / 180.0;
        const double c = std::cos(t), s = std::sin(t);
        rot << c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1;
    }
    Eigen::Matrix3d crop = Eigen::Matrix3d::Identity();
    if (draw.crop_scale != 1.0) {
        const double inv = 1.0 / draw.crop_scale;
        crop << inv, 0, cx * (1.0 - inv), 0, inv, cy * (1.0 - inv), 0, 0, 1;
    }
    Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
    bool any_shift = false;
    for (const auto& shift : draw.corner_shift_px)
        any_shift = any_shift || shift.x() != 0.0 || shift.y() != 0.0;
    if (any_shift) {
        const std::array<Point2, 4> corners{Point2{0.0, 0.0}, Point2{w - 1.0, 0.0},
                                            Point2{0.0, h - 1.0}, Point2{w - 1.0, h - 1.0}};
        std::array<Point2, 4> moved;
        for (int i = 0; i < 4; ++i) moved[i] = corners[i] + draw.corner_shift_px[i];
        persp = detail::solve_homography(corners, moved);
    }
    return persp * crop * rot;
}

/// Align-corner scale map between two frame sizes (used to bring studies to
/// the network input resolution with the same machinery).
inline Eigen::Matrix3d scale_matrix(int src_h, int src_w, int dst_h, int dst_w) {
    ASAME_CHECK(src_h > 1 && src_w > 1 && dst_h > 1 && dst_w > 1,
                "scale_matrix: sizes must exceed 1");
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = static_cast<double>(dst_w - 1) / (src_w - 1);
    m(1, 1) = static_cast<double>(dst_h - 1) / (src_h - 1);
    return m;
}

/// Bilinear warp; destination pixels mapping outside the source are 0.
inline MatrixF warp_bilinear(const MatrixF& img, const Eigen::Matrix3d& m, int oh, int ow) {
    const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
    ASAME_CHECK(h > 0 && w > 0 && oh > 0 && ow > 0, "warp_bilinear: empty image");
    const Eigen::Matrix3d inv = m.inverse();
    if (!inv.allFinite()) throw NumericError("warp_bilinear: transform is singular");
    MatrixF out(oh, ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            const Point2 q = apply_homography(inv, {static_cast<double>(c), static_cast<double>(r)});
            if (q.x() < -0.5 || q.x() > w - 0.5 || q.y() < -0.5 || q.y() > h - 0.5) {
                out(r, c) = 0.0f;
                continue;
            }
            const double x = std::clamp(q.x(), 0.0, static_cast<double>(w - 1));
            const double y = std::clamp(q.y(), 0.0, static_cast<double>(h - 1));
            const int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
            const int y0 = std::min(static_cast<int>(y), h - 2 >= 0 ? h - 2 : 0);
            const double fx = x - x0, fy = y - y0;
            const double v00 = img(y0, x0), v01 = img(y0, std::min(x0 + 1, w - 1));
            const double v10 = img(std::min(y0 + 1, h - 1), x0);
            const double v11 = img(std::min(y0 + 1, h - 1), std::min(x0 + 1, w - 1));
            out(r, c) = static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                           fy * ((1 - fx) * v10 + fx * v11));
        }
    return out;
}

/// Nearest-neighbor warp; keeps masks strictly binary, outside -> 0.
inline MaskGrid warp_nearest(const MaskGrid& mask, const Eigen::Matrix3d& m, int oh, int ow) {
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    ASAME_CHECK(h > 0 && w > 0 && oh > 0 && ow > 0, "warp_nearest: empty mask");
    const Eigen::Matrix3d inv = m.inverse();
    if (!inv.allFinite()) throw NumericError("warp_nearest: transform is singular");
    MaskGrid out = MaskGrid::Zero(oh, ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            const Point2 q = apply_homography(inv, {static_cast<double>(c), static_cast<double>(r)});
            const int x = static_cast<int>(std::lround(q.x()));
            const int y = static_cast<int>(std::lround(q.y()));
            if (x >= 0 && x < w && y >= 0 && y < h) out(r, c) = mask(y, x);
        }
    return out;
}

/// One augmented training item: the same geometric transform applied to the
/// image (bilinear), mask (nearest), and landmarks (exact coordinates).
struct AugmentedItem {
    MatrixF image;
    MaskGrid mask;
    geometry::Landmarks landmarks;
};

/// Margin (px) landmarks must keep from the frame border after a transform.
inline constexpr double kLandmarkMarginPx = 2.0;

inline bool landmarks_in_frame(const geometry::Landmarks& lm, int h, int w,
                               double margin = kLandmarkMarginPx) {
    auto ok = [&](const Point2& p) {
        return p.x() >= margin && p.x() <= w - 1 - margin && p.y() >= margin &&
               p.y() <= h - 1 - margin;
    };
    return ok(lm.apex) && ok(lm.mitral_left) && ok(lm.mitral_right);
}

/// Applies a fixed transform to one item; destination size = (oh, ow), which
/// defaults to the source size. Throws DataError if a landmark leaves the
/// frame (callers with a free transform choice should resample instead).
inline AugmentedItem apply_transform(const MatrixF& image, const MaskGrid& mask,
                                     const geometry::Landmarks& lm, const Eigen::Matrix3d& m,
                                     int oh = 0, int ow = 0) {
    ASAME_CHECK_SHAPE(image.rows() == mask.rows() && image.cols() == mask.cols(),
                      "apply_transform: image and mask dimensions differ");
    if (oh <= 0) oh = static_cast<int>(image.rows());
    if (ow <= 0) ow = static_cast<int>(image.cols());
    AugmentedItem out;
    out.landmarks.apex = apply_homography(m, lm.apex);
    out.landmarks.mitral_left = apply_homography(m, lm.mitral_left);
    out.landmarks.mitral_right = apply_homography(m, lm.mitral_right);
    if (!landmarks_in_frame(out.landmarks, oh, ow))
        throw DataError("apply_transform: landmark left the frame");
    out.image = warp_bilinear(image, m, oh, ow);
    out.mask = warp_nearest(mask, m, oh, ow);
    return out;
}

/// Samples one augmentation composite, resampling while a landmark would
/// leave the frame; after cfg.max_retries failed draws the sample is skipped
/// with a DataError.
inline AugmentedItem augment(const MatrixF& image, const MaskGrid& mask,
                             const geometry::Landmarks& lm, Rng& rng,
                             const AugmentConfig& cfg = {}) {
    ASAME_CHECK(cfg.max_retries >= 1, "augment: max_retries must be positive");
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        const TransformDraw draw = sample_transform(rng, cfg, std::max(h, w));
        const Eigen::Matrix3d m = transform_matrix(draw, h, w);
        geometry::Landmarks moved;
        moved.apex = apply_homography(m, lm.apex);
        moved.mitral_left = apply_homography(m, lm.mitral_left);
        moved.mitral_right = apply_homography(m, lm.mitral_right);
        if (!landmarks_in_frame(moved, h, w)) continue;
        return apply_transform(image, mask, lm, m);
    }
    throw DataError("augment: landmarks out of frame after " + std::to_string(cfg.max_retries) +
                    " transform draws; sample skipped");
}

}  // namespace autosame::phantom
