#include "autosame/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

namespace autosame::render {

namespace {

void put(png::Image8& img, int r, int c, Rgb color) {
    if (r < 0 || r >= img.height || c < 0 || c >= img.width) return;
    img.at(r, c, 0) = color.r;
    img.at(r, c, 1) = color.g;
    img.at(r, c, 2) = color.b;
}

// 5x7 glyphs, one byte per row, low five bits used (MSB of the five = left
// column). Covers what the plot labels need; anything else renders blank.
struct Glyph {
    char ch;
    std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const std::uint8_t* find_glyph(char ch) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (const auto& g : kFont)
        if (g.ch == up) return g.rows;
    return nullptr;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

png::Image8 gray_to_rgb(const MatrixF& img) {
    ASAME_CHECK(img.size() > 0, "gray_to_rgb: empty image");
    png::Image8 out;
    out.height = static_cast<int>(img.rows());
    out.width = static_cast<int>(img.cols());
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) {
            const float v = std::clamp(img(r, c), 0.0f, 1.0f);
            const auto q = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            out.at(r, c, 0) = out.at(r, c, 1) = out.at(r, c, 2) = q;
        }
    return out;
}

png::Image8 blank_canvas(int height, int width, Rgb fill) {
    ASAME_CHECK(height > 0 && width > 0, "blank_canvas: non-positive size");
    png::Image8 out;
    out.height = height;
    out.width = width;
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(height) * width * 3);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) put(out, r, c, fill);
    return out;
}

void draw_mask_outline(png::Image8& img, const MaskGrid& mask, Rgb color) {
    ASAME_CHECK(img.channels == 3, "draw_mask_outline: need an RGB canvas");
    ASAME_CHECK(static_cast<int>(mask.rows()) == img.height &&
                    static_cast<int>(mask.cols()) == img.width,
                "draw_mask_outline: mask does not match the canvas");
    const int h = img.height, w = img.width;
    auto inside = [&](int r, int c) {
        return r >= 0 && r < h && c >= 0 && c < w && mask(r, c) != 0;
    };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (mask(r, c) == 0) continue;
            if (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) ||
                !inside(r, c + 1))
                put(img, r, c, color);
        }
}

void draw_cross(png::Image8& img, const Point2& center, int half_len, Rgb color) {
    const int c = static_cast<int>(std::lround(center.x()));
    const int r = static_cast<int>(std::lround(center.y()));
    for (int d = -half_len; d <= half_len; ++d) {
        put(img, r + d, c, color);
        put(img, r, c + d, color);
    }
}

void draw_line(png::Image8& img, const Point2& a, const Point2& b, Rgb color) {
    // Bresenham on rounded endpoints.
    int x0 = static_cast<int>(std::lround(a.x())), y0 = static_cast<int>(std::lround(a.y()));
    const int x1 = static_cast<int>(std::lround(b.x())),
              y1 = static_cast<int>(std::lround(b.y()));
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        put(img, y0, x0, color);
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

void draw_text(png::Image8& img, int row, int col, const std::string& text, Rgb color,
               int scale) {
    ASAME_CHECK(scale >= 1, "draw_text: scale must be >= 1");
    int x = col;
    for (char ch : text) {
        if (const std::uint8_t* rows = find_glyph(ch)) {
            for (int gr = 0; gr < 7; ++gr)
                for (int gc = 0; gc < 5; ++gc)
                    if (rows[gr] & (1u << (4 - gc)))
                        for (int sr = 0; sr < scale; ++sr)
                            for (int sc = 0; sc < scale; ++sc)
                                put(img, row + gr * scale + sr, x + gc * scale + sc, color);
        }
        x += 6 * scale;  // 5 px glyph + 1 px gap
    }
}

png::Image8 item_overlay(const geometry::StudyItem& item, const MaskGrid* pred_mask,
                         const geometry::Landmarks* pred_lm, const std::string& label) {
    png::Image8 canvas;
    if (item.image.size() > 0) {
        canvas = gray_to_rgb(item.image);
    } else {
        // No image stored: show the reference mask as a dim field instead.
        MatrixF bg = item.mask.grid.cast<float>() * 0.35f;
        canvas = gray_to_rgb(bg);
    }
    draw_mask_outline(canvas, item.mask.grid, kGreen);
    if (pred_mask) draw_mask_outline(canvas, *pred_mask, kOrange);
    const int half = std::max(2, canvas.width / 64);
    draw_cross(canvas, item.landmarks.apex, half, kGreen);
    draw_cross(canvas, item.landmarks.mitral_left, half, kGreen);
    draw_cross(canvas, item.landmarks.mitral_right, half, kGreen);
    if (pred_lm) {
        draw_cross(canvas, pred_lm->apex, half, kMagenta);
        draw_cross(canvas, pred_lm->mitral_left, half, kMagenta);
        draw_cross(canvas, pred_lm->mitral_right, half, kMagenta);
    }
    draw_text(canvas, 3, 3, label, Rgb{255, 255, 80});
    return canvas;
}

png::Image8 study_montage(const geometry::StudyQuad& reference,
                          const geometry::StudyQuad* predicted) {
    using geometry::Phase;
    using geometry::View;
    std::vector<png::Image8> panels;
    int panel_h = 0, panel_w = 0;
    for (View v : {View::A4C, View::A2C})
        for (Phase p : {Phase::ED, Phase::ES}) {
            const geometry::StudyItem& item = reference.at(v, p);
            const MaskGrid* pm = nullptr;
            const geometry::Landmarks* pl = nullptr;
            if (predicted) {
                const geometry::StudyItem& pi = predicted->at(v, p);
                pm = &pi.mask.grid;
                pl = &pi.landmarks;
            }
            const std::string label =
                std::string(geometry::to_string(v)) + " " + geometry::to_string(p);
            panels.push_back(item_overlay(item, pm, pl, label));
            panel_h = std::max(panel_h, panels.back().height);
            panel_w = std::max(panel_w, panels.back().width);
        }
    const int gap = 2;
    png::Image8 grid = blank_canvas(2 * panel_h + gap, 2 * panel_w + gap, Rgb{30, 30, 30});
    for (int i = 0; i < 4; ++i) {
        const int r0 = (i / 2) * (panel_h + gap), c0 = (i % 2) * (panel_w + gap);
        const png::Image8& p = panels[static_cast<std::size_t>(i)];
        for (int r = 0; r < p.height; ++r)
            for (int c = 0; c < p.width; ++c)
                put(grid, r0 + r, c0 + c, Rgb{p.at(r, c, 0), p.at(r, c, 1), p.at(r, c, 2)});
    }
    return grid;
}

png::Image8 scatter_plot(const std::vector<double>& x, const std::vector<double>& y,
                         const std::string& title, int size) {
    ASAME_CHECK(x.size() == y.size(), "scatter_plot: length mismatch");
    ASAME_CHECK(size >= 120, "scatter_plot: canvas too small");
    png::Image8 img = blank_canvas(size, size, Rgb{255, 255, 255});

    const int left = 48, right = size - 16, top = 30, bottom = size - 36;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        lo = std::min({lo, x[i], y[i]});
        hi = std::max({hi, x[i], y[i]});
    }
    if (!std::isfinite(lo)) {  // no usable points: render an empty frame
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto to_px = [&](double vx, double vy) {
        const double fx = (vx - lo) / (hi - lo), fy = (vy - lo) / (hi - lo);
        return Point2(left + fx * (right - left), bottom - fy * (bottom - top));
    };

    // Frame, identity line, then the points on top.
    draw_line(img, Point2(left, top), Point2(left, bottom), kBlack);
    draw_line(img, Point2(left, bottom), Point2(right, bottom), kBlack);
    draw_line(img, to_px(lo, lo), to_px(hi, hi), kGray);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        const Point2 p = to_px(x[i], y[i]);
        const int pr = static_cast<int>(std::lround(p.y()));
        const int pc = static_cast<int>(std::lround(p.x()));
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) put(img, pr + dr, pc + dc, kBlue);
    }

    draw_text(img, 8, left, title, kBlack);
    draw_text(img, bottom + 6, left, fmt_tick(lo + pad), kBlack);
    const std::string hi_label = fmt_tick(hi - pad);
    draw_text(img, bottom + 6, right - 6 * static_cast<int>(hi_label.size()), hi_label, kBlack);
    draw_text(img, bottom + 16, left, "TRUE", kBlack);
    draw_text(img, top - 10, 2, "PRED", kBlack);
    return img;
}

}  // namespace autosame::render
