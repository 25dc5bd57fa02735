#pragma once

#include "autosame/geometry.hpp"
#include "autosame/png_io.hpp"

#include <string>
#include <vector>

namespace autosame::render {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kGreen{40, 200, 80};    // reference contours / landmarks
inline constexpr Rgb kOrange{255, 140, 0};   // predicted contours
inline constexpr Rgb kMagenta{230, 60, 200}; // predicted landmarks
inline constexpr Rgb kBlue{50, 90, 220};     // scatter points
inline constexpr Rgb kGray{160, 160, 160};
inline constexpr Rgb kBlack{0, 0, 0};

/// Expands a [0,1] gray image into an RGB canvas.
png::Image8 gray_to_rgb(const MatrixF& img);

/// Solid-color canvas.
png::Image8 blank_canvas(int height, int width, Rgb fill);

/// Paints every mask pixel that touches the background (4-neighborhood),
/// i.e. the one-pixel contour of the region.
void draw_mask_outline(png::Image8& img, const MaskGrid& mask, Rgb color);

/// Axis-aligned cross centered on a subpixel point.
void draw_cross(png::Image8& img, const Point2& center, int half_len, Rgb color);

void draw_line(png::Image8& img, const Point2& a, const Point2& b, Rgb color);

/// 5x7 bitmap text (digits, '.', '-', '=', ':', '%', and capital letters;
/// lowercase input is upcased, unknown glyphs render as blanks).
void draw_text(png::Image8& img, int row, int col, const std::string& text, Rgb color,
               int scale = 1);

/// One panel: the source image with reference and predicted contours and
/// landmark crosses burned in. `pred_mask`/`pred_lm` may be omitted to render
/// the reference alone.
png::Image8 item_overlay(const geometry::StudyItem& item, const MaskGrid* pred_mask,
                         const geometry::Landmarks* pred_lm, const std::string& label);

/// 2x2 montage of the four (view, phase) panels of a study.
png::Image8 study_montage(const geometry::StudyQuad& reference,
                          const geometry::StudyQuad* predicted);

/// Square scatter plot of y (predicted) against x (reference) with an identity
/// line and min/max axis labels. NaN pairs are skipped.
png::Image8 scatter_plot(const std::vector<double>& x, const std::vector<double>& y,
                         const std::string& title, int size = 420);

}  // namespace autosame::render
