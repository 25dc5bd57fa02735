#pragma once

#include "autosame/core.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

namespace autosame::freq {

enum class FeatureRole { ImageEncoder, CnnBranch, LowPass, HighPass, Tuned };

/// Dense c x h x w feature map stored as a (c, h*w) matrix, row-major spatial
/// flattening (column index = r*w + c).
template <typename T>
struct FeatureMap {
    Matrix<T> data;
    int h = 0;
    int w = 0;
    FeatureRole role = FeatureRole::ImageEncoder;

    int channels() const { return static_cast<int>(data.rows()); }

    void validate() const {
        ASAME_CHECK_SHAPE(data.cols() == static_cast<Eigen::Index>(h) * w,
                          "FeatureMap: data columns must equal h*w");
        ASAME_CHECK(h % 4 == 0 && w % 4 == 0, "FeatureMap: h and w must be divisible by 4");
        if (!data.allFinite()) throw NumericError("FeatureMap: non-finite entries");
    }
};

/// Centered per-channel spectra (DC at (h/2, w/2)).
template <typename T>
struct Spectrum {
    std::vector<Matrix<std::complex<T>>> channels;
    int h = 0;
    int w = 0;
};

/// Complementary binary masks over the centered spectrum. The low mask is 1
/// exactly on the central block [h/4, 3h/4) x [w/4, 3w/4).
struct FrequencyMasks {
    MaskGrid low;
    MaskGrid high;
};

inline FrequencyMasks build_masks(int h, int w) {
    ASAME_CHECK(h > 0 && w > 0 && h % 4 == 0 && w % 4 == 0,
                "build_masks: h and w must be positive and divisible by 4");
    FrequencyMasks m;
    m.low = MaskGrid::Zero(h, w);
    m.high = MaskGrid::Ones(h, w);
    for (int r = h / 4; r < 3 * h / 4; ++r)
        for (int c = w / 4; c < 3 * w / 4; ++c) {
            m.low(r, c) = 1;
            m.high(r, c) = 0;
        }
    return m;
}

namespace detail {

/// In-place 2D DFT over a complex matrix; inverse applies the 1/(h*w) scale.
template <typename T>
void fft2(Matrix<std::complex<T>>& m, bool inverse) {
    Eigen::FFT<T> fft;
    const Eigen::Index h = m.rows();
    const Eigen::Index w = m.cols();
    Vector<std::complex<T>> buf(std::max(h, w));
    Vector<std::complex<T>> out(std::max(h, w));
    for (Eigen::Index c = 0; c < w; ++c) {
        if (inverse)
            fft.inv(out.data(), m.col(c).data(), h);
        else
            fft.fwd(out.data(), m.col(c).data(), h);
        m.col(c) = out.head(h);
    }
    for (Eigen::Index r = 0; r < h; ++r) {
        buf.head(w) = m.row(r).transpose();
        if (inverse)
            fft.inv(out.data(), buf.data(), w);
        else
            fft.fwd(out.data(), buf.data(), w);
        m.row(r) = out.head(w).transpose();
    }
}

/// Quadrant swap moving DC to (h/2, w/2); self-inverse for even dimensions.
template <typename S>
Matrix<S> fftshift(const Matrix<S>& m) {
    const Eigen::Index h = m.rows();
    const Eigen::Index w = m.cols();
    Matrix<S> out(h, w);
    for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index c = 0; c < w; ++c) out((r + h / 2) % h, (c + w / 2) % w) = m(r, c);
    return out;
}

}  // namespace detail

/// Forward transform of every channel, spectrum centered.
template <typename T>
Spectrum<T> spectrum(const FeatureMap<T>& f) {
    f.validate();
    Spectrum<T> s;
    s.h = f.h;
    s.w = f.w;
    s.channels.reserve(static_cast<std::size_t>(f.channels()));
    for (int ch = 0; ch < f.channels(); ++ch) {
        Matrix<std::complex<T>> m(f.h, f.w);
        for (int r = 0; r < f.h; ++r)
            for (int c = 0; c < f.w; ++c) m(r, c) = std::complex<T>(f.data(ch, r * f.w + c), T(0));
        detail::fft2(m, false);
        s.channels.push_back(detail::fftshift(m));
    }
    return s;
}

/// Inverse of `spectrum`; returns the real part and the largest |imag| seen.
template <typename T>
FeatureMap<T> inverse(const Spectrum<T>& s, T* max_imag = nullptr) {
    FeatureMap<T> f;
    f.h = s.h;
    f.w = s.w;
    f.data.resize(static_cast<Eigen::Index>(s.channels.size()),
                  static_cast<Eigen::Index>(s.h) * s.w);
    T imag_peak = T(0);
    for (std::size_t ch = 0; ch < s.channels.size(); ++ch) {
        Matrix<std::complex<T>> m = detail::fftshift(s.channels[ch]);
        detail::fft2(m, true);
        for (int r = 0; r < s.h; ++r)
            for (int c = 0; c < s.w; ++c) {
                f.data(static_cast<Eigen::Index>(ch), r * s.w + c) = m(r, c).real();
                imag_peak = std::max(imag_peak, std::abs(m(r, c).imag()));
            }
    }
    if (max_imag) *max_imag = imag_peak;
    return f;
}

/// Core band filter behind the low/high decomposition. Filters every channel
/// of a (c, h*w) matrix through the given centered binary mask. This real
/// linear map is self-adjoint, which the attention backward pass relies on.
template <typename T>
Matrix<T> band_filter(const Matrix<T>& data, int h, int w, const MaskGrid& mask) {
    ASAME_CHECK_SHAPE(data.cols() == static_cast<Eigen::Index>(h) * w,
                      "band_filter: data columns must equal h*w");
    ASAME_CHECK_SHAPE(mask.rows() == h && mask.cols() == w, "band_filter: mask shape mismatch");
    if (!data.allFinite()) throw NumericError("band_filter: non-finite input");
    Matrix<T> out(data.rows(), data.cols());
    for (Eigen::Index ch = 0; ch < data.rows(); ++ch) {
        Matrix<std::complex<T>> m(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) m(r, c) = std::complex<T>(data(ch, r * w + c), T(0));
        detail::fft2(m, false);
        m = detail::fftshift(m);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if (!mask(r, c)) m(r, c) = std::complex<T>(T(0), T(0));
        m = detail::fftshift(m);
        detail::fft2(m, true);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) out(ch, r * w + c) = m(r, c).real();
    }
    return out;
}

/// Split encoder features into the low- and high-frequency components of
/// the masked spectrum; the two parts sum back to the input.
template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> decompose(const FeatureMap<T>& f_ie) {
    f_ie.validate();
    const FrequencyMasks masks = build_masks(f_ie.h, f_ie.w);
    FeatureMap<T> lp{band_filter(f_ie.data, f_ie.h, f_ie.w, masks.low), f_ie.h, f_ie.w,
                     FeatureRole::LowPass};
    FeatureMap<T> hp{band_filter(f_ie.data, f_ie.h, f_ie.w, masks.high), f_ie.h, f_ie.w,
                     FeatureRole::HighPass};
    return {std::move(lp), std::move(hp)};
}

}  // namespace autosame::freq
