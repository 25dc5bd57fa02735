#pragma once

#include "autosame/tape.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace autosame::ad {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    ASAME_CHECK_SHAPE(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    auto an = a.node(), bn = b.node();
    return Var<T>::op(a.value() + b.value(), {a, b}, [an, bn](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (bn->requires_grad) bn->accumulate(n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    ASAME_CHECK_SHAPE(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    auto an = a.node(), bn = b.node();
    return Var<T>::op(a.value() - b.value(), {a, b}, [an, bn](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (bn->requires_grad) bn->accumulate(-n.grad);
    });
}

template <typename T>
Var<T> cmul(const Var<T>& a, const Var<T>& b) {
    ASAME_CHECK_SHAPE(a.rows() == b.rows() && a.cols() == b.cols(), "cmul: shape mismatch");
    auto an = a.node(), bn = b.node();
    return Var<T>::op(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad.cwiseProduct(bn->value));
        if (bn->requires_grad) bn->accumulate(n.grad.cwiseProduct(an->value));
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    auto an = a.node();
    return Var<T>::op(Matrix<T>(a.value() * s), {a}, [an, s](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad * s);
    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    ASAME_CHECK_SHAPE(a.cols() == b.rows(), "matmul: inner dimensions differ");
    auto an = a.node(), bn = b.node();
    return Var<T>::op(a.value() * b.value(), {a, b}, [an, bn](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad * bn->value.transpose());
        if (bn->requires_grad) bn->accumulate(an->value.transpose() * n.grad);
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    auto an = a.node();
    return Var<T>::op(a.value().transpose(), {a}, [an](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad.transpose());
    });
}

/// x (n,d) + row vector b (1,d), broadcast over rows.
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    ASAME_CHECK_SHAPE(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec: bias must be (1,d)");
    Matrix<T> v = x.value();
    v.rowwise() += b.value().row(0);
    auto xn = x.node(), bn = b.node();
    return Var<T>::op(std::move(v), {x, b}, [xn, bn](Node<T>& n) {
        if (xn->requires_grad) xn->accumulate(n.grad);
        if (bn->requires_grad) bn->accumulate(n.grad.colwise().sum());
    });
}

/// x (c,m) + column vector b (c,1), broadcast over columns (per-channel bias).
template <typename T>
Var<T> add_colvec(const Var<T>& x, const Var<T>& b) {
    ASAME_CHECK_SHAPE(b.cols() == 1 && b.rows() == x.rows(), "add_colvec: bias must be (c,1)");
    Matrix<T> v = x.value();
    v.colwise() += b.value().col(0);
    auto xn = x.node(), bn = b.node();
    return Var<T>::op(std::move(v), {x, b}, [xn, bn](Node<T>& n) {
        if (xn->requires_grad) xn->accumulate(n.grad);
        if (bn->requires_grad) bn->accumulate(n.grad.rowwise().sum());
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    Matrix<T> y = x.value();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const T m = y.row(i).maxCoeff();
        y.row(i) = (y.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    auto xn = x.node();
    return Var<T>::op(std::move(y), {x}, [xn](Node<T>& n) {
        if (!xn->requires_grad) return;
        const Matrix<T>& y = n.value;
        Vector<T> dot = n.grad.cwiseProduct(y).rowwise().sum();
        xn->accumulate(y.cwiseProduct(n.grad.colwise() - dot));
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Matrix<T> y = x.value().unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
    auto xn = x.node();
    return Var<T>::op(std::move(y), {x}, [xn](Node<T>& n) {
        if (xn->requires_grad)
            xn->accumulate(n.grad.cwiseProduct(
                n.value.unaryExpr([](T y) { return y * (T(1) - y); })));
    });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    auto phi = [](T v) {
        return T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2))));
    };
    Matrix<T> y = x.value().unaryExpr([&](T v) { return v * phi(v); });
    auto xn = x.node();
    return Var<T>::op(std::move(y), {x}, [xn, phi](Node<T>& n) {
        if (!xn->requires_grad) return;
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        xn->accumulate(n.grad.cwiseProduct(xn->value.unaryExpr([&](T v) {
            return phi(v) + v * inv_sqrt2pi * std::exp(-v * v / T(2));
        })));
    });
}

/// Per-row layer normalization with learnable gain/offset (1,d).
template <typename T>
Var<T> layernorm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                      T eps = T(1e-5)) {
    const Eigen::Index d = x.cols();
    ASAME_CHECK_SHAPE(gamma.rows() == 1 && gamma.cols() == d, "layernorm: gamma must be (1,d)");
    ASAME_CHECK_SHAPE(beta.rows() == 1 && beta.cols() == d, "layernorm: beta must be (1,d)");
    Matrix<T> xhat(x.rows(), d);
    Vector<T> inv_sigma(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mu = x.value().row(i).mean();
        const T var = (x.value().row(i).array() - mu).square().mean();
        inv_sigma(i) = T(1) / std::sqrt(var + eps);
        xhat.row(i) = (x.value().row(i).array() - mu) * inv_sigma(i);
    }
    Matrix<T> y = xhat;
    y.array().rowwise() *= gamma.value().row(0).array();
    y.rowwise() += beta.value().row(0);
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return Var<T>::op(
        std::move(y), {x, gamma, beta},
        [xn, gn, bn, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node<T>& n) {
            if (gn->requires_grad) gn->accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
            if (bn->requires_grad) bn->accumulate(n.grad.colwise().sum());
            if (!xn->requires_grad) return;
            Matrix<T> dxhat = n.grad;
            dxhat.array().rowwise() *= gn->value.row(0).array();
            Vector<T> m1 = dxhat.rowwise().mean();
            Vector<T> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
            Matrix<T> dx = dxhat.colwise() - m1;
            dx.array() -= xhat.array().colwise() * m2.array();
            dx.array().colwise() *= inv_sigma.array();
            xn->accumulate(dx);
        });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    Matrix<T> v(1, 1);
    v(0, 0) = x.value().sum();
    auto xn = x.node();
    return Var<T>::op(std::move(v), {x}, [xn](Node<T>& n) {
        if (xn->requires_grad)
            xn->accumulate(Matrix<T>::Constant(xn->value.rows(), xn->value.cols(), n.grad(0, 0)));
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.value().size()));
}

/// Broadcast-multiply by a 1x1 scalar Var.
template <typename T>
Var<T> scale_by(const Var<T>& s, const Var<T>& x) {
    ASAME_CHECK_SHAPE(s.rows() == 1 && s.cols() == 1, "scale_by: s must be 1x1");
    auto sn = s.node(), xn = x.node();
    return Var<T>::op(Matrix<T>(x.value() * s.value()(0, 0)), {s, x}, [sn, xn](Node<T>& n) {
        if (sn->requires_grad) {
            Matrix<T> g(1, 1);
            g(0, 0) = n.grad.cwiseProduct(xn->value).sum();
            sn->accumulate(g);
        }
        if (xn->requires_grad) xn->accumulate(n.grad * sn->value(0, 0));
    });
}

template <typename T>
Var<T> one_minus(const Var<T>& s) {
    ASAME_CHECK_SHAPE(s.rows() == 1 && s.cols() == 1, "one_minus: s must be 1x1");
    Matrix<T> v(1, 1);
    v(0, 0) = T(1) - s.value()(0, 0);
    auto sn = s.node();
    return Var<T>::op(std::move(v), {s}, [sn](Node<T>& n) {
        if (sn->requires_grad) sn->accumulate(-n.grad);
    });
}

template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
    ASAME_CHECK_SHAPE(a.cols() == b.cols(), "concat_rows: column counts differ");
    Matrix<T> v(a.rows() + b.rows(), a.cols());
    v.topRows(a.rows()) = a.value();
    v.bottomRows(b.rows()) = b.value();
    auto an = a.node(), bn = b.node();
    const Eigen::Index na = a.rows(), nb = b.rows();
    return Var<T>::op(std::move(v), {a, b}, [an, bn, na, nb](Node<T>& n) {
        if (an->requires_grad) an->accumulate(n.grad.topRows(na));
        if (bn->requires_grad) bn->accumulate(n.grad.bottomRows(nb));
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index r0, Eigen::Index count) {
    ASAME_CHECK_SHAPE(r0 >= 0 && r0 + count <= a.rows(), "slice_rows: range out of bounds");
    auto an = a.node();
    return Var<T>::op(a.value().middleRows(r0, count), {a}, [an, r0, count](Node<T>& n) {
        if (an->requires_grad) an->ensure_grad().middleRows(r0, count) += n.grad;
    });
}

/// Row-major reinterpretation to (rows, cols); sizes must agree.
template <typename T>
Var<T> reshape_rowmajor(const Var<T>& a, Eigen::Index rows, Eigen::Index cols) {
    ASAME_CHECK_SHAPE(a.rows() * a.cols() == rows * cols, "reshape: element count differs");
    using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor rm = a.value();
    Matrix<T> v = Eigen::Map<const RowMajor>(rm.data(), rows, cols);
    const Eigen::Index ar = a.rows(), ac = a.cols();
    auto an = a.node();
    return Var<T>::op(std::move(v), {a}, [an, ar, ac](Node<T>& n) {
        if (!an->requires_grad) return;
        RowMajor gm = n.grad;
        an->accumulate(Matrix<T>(Eigen::Map<const RowMajor>(gm.data(), ar, ac)));
    });
}

template <typename T>
Var<T> stopgrad(const Var<T>& a) {
    return Var<T>::constant(a.value());
}

/// Mean squared error against a constant target of the same shape.
template <typename T>
Var<T> mse_vs(const Var<T>& pred, const Matrix<T>& target) {
    ASAME_CHECK_SHAPE(pred.rows() == target.rows() && pred.cols() == target.cols(),
                      "mse_vs: shape mismatch");
    const T inv_n = T(1) / static_cast<T>(target.size());
    Matrix<T> diff = pred.value() - target;
    Matrix<T> v(1, 1);
    v(0, 0) = diff.squaredNorm() * inv_n;
    auto pn = pred.node();
    return Var<T>::op(std::move(v), {pred}, [pn, diff = std::move(diff), inv_n](Node<T>& n) {
        if (pn->requires_grad) pn->accumulate(diff * (T(2) * inv_n * n.grad(0, 0)));
    });
}

/// Soft Dice loss 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
template <typename T>
Var<T> dice_loss_vs(const Var<T>& prob, const Matrix<T>& gt, T eps = T(1e-6)) {
    ASAME_CHECK_SHAPE(prob.rows() == gt.rows() && prob.cols() == gt.cols(),
                      "dice_loss_vs: shape mismatch");
    const T inter = prob.value().cwiseProduct(gt).sum();
    const T denom = prob.value().sum() + gt.sum() + eps;
    const T num = T(2) * inter + eps;
    Matrix<T> v(1, 1);
    v(0, 0) = T(1) - num / denom;
    auto pn = prob.node();
    return Var<T>::op(std::move(v), {prob}, [pn, gt, num, denom](Node<T>& n) {
        if (!pn->requires_grad) return;
        // d(1 - num/denom)/dp = (num - 2*g*denom) / denom^2
        Matrix<T> g = (Matrix<T>::Constant(gt.rows(), gt.cols(), num / (denom * denom)) -
                       gt * (T(2) / denom)) *
                      n.grad(0, 0);
        pn->accumulate(g);
    });
}

/// Tokenwise cosine alignment loss: mean over rows of (1 - cos(a_i, e_i)).
/// The reference embedding is frozen, so only `a` receives gradient.
template <typename T>
Var<T> cosine_align_vs(const Var<T>& a, const Matrix<T>& e) {
    ASAME_CHECK_SHAPE(a.rows() == e.rows() && a.cols() == e.cols(),
                      "cosine_align_vs: shape mismatch");
    const Eigen::Index n_tok = a.rows();
    T total = T(0);
    for (Eigen::Index i = 0; i < n_tok; ++i) {
        const T na = a.value().row(i).norm();
        const T ne = e.row(i).norm();
        if (!(na > T(0)) || !(ne > T(0)))
            throw NumericError("cosine_align_vs: zero-norm token, cosine undefined");
        total += T(1) - a.value().row(i).dot(e.row(i)) / (na * ne);
    }
    Matrix<T> v(1, 1);
    v(0, 0) = total / static_cast<T>(n_tok);
    auto an = a.node();
    return Var<T>::op(std::move(v), {a}, [an, e](Node<T>& n) {
        if (!an->requires_grad) return;
        const Eigen::Index n_tok = e.rows();
        Matrix<T> g(e.rows(), e.cols());
        for (Eigen::Index i = 0; i < n_tok; ++i) {
            const T na = an->value.row(i).norm();
            const T ne = e.row(i).norm();
            const T dot = an->value.row(i).dot(e.row(i));
            g.row(i) = -(e.row(i) / (na * ne) - an->value.row(i) * (dot / (na * na * na * ne)));
        }
        an->accumulate(g * (n.grad(0, 0) / static_cast<T>(n_tok)));
    });
}

// ---------------------------------------------------------------------------
// Spatial ops over (c, h*w) feature maps, row-major flattening.
// ---------------------------------------------------------------------------

namespace conv_detail {

struct Conv2dMeta {
    int h = 0, w = 0, k = 1, stride = 1, pad = 0;
    int out_h() const { return (h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (w + 2 * pad - k) / stride + 1; }
};

template <typename T>
Matrix<T> im2col(const Matrix<T>& x, const Conv2dMeta& m) {
    const int cin = static_cast<int>(x.rows());
    const int oh = m.out_h(), ow = m.out_w();
    Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(cin) * m.k * m.k,
                                     static_cast<Eigen::Index>(oh) * ow);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const Eigen::Index col = static_cast<Eigen::Index>(oy) * ow + ox;
            for (int ky = 0; ky < m.k; ++ky) {
                const int iy = oy * m.stride + ky - m.pad;
                if (iy < 0 || iy >= m.h) continue;
                for (int kx = 0; kx < m.k; ++kx) {
                    const int ix = ox * m.stride + kx - m.pad;
                    if (ix < 0 || ix >= m.w) continue;
                    const Eigen::Index src = static_cast<Eigen::Index>(iy) * m.w + ix;
                    for (int ci = 0; ci < cin; ++ci)
                        cols((static_cast<Eigen::Index>(ci) * m.k + ky) * m.k + kx, col) =
                            x(ci, src);
                }
            }
        }
    return cols;
}

template <typename T>
void col2im_add(Matrix<T>& x_grad, const Matrix<T>& cols, const Conv2dMeta& m) {
    const int cin = static_cast<int>(x_grad.rows());
    const int oh = m.out_h(), ow = m.out_w();
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const Eigen::Index col = static_cast<Eigen::Index>(oy) * ow + ox;
            for (int ky = 0; ky < m.k; ++ky) {
                const int iy = oy * m.stride + ky - m.pad;
                if (iy < 0 || iy >= m.h) continue;
                for (int kx = 0; kx < m.k; ++kx) {
                    const int ix = ox * m.stride + kx - m.pad;
                    if (ix < 0 || ix >= m.w) continue;
                    const Eigen::Index dst = static_cast<Eigen::Index>(iy) * m.w + ix;
                    for (int ci = 0; ci < cin; ++ci)
                        x_grad(ci, dst) +=
                            cols((static_cast<Eigen::Index>(ci) * m.k + ky) * m.k + kx, col);
                }
            }
        }
}

}  // namespace conv_detail

/// 2D convolution on x (c_in, h*w); weight (c_out, c_in*k*k), bias (c_out, 1).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int h, int w, int k,
              int stride, int pad) {
    conv_detail::Conv2dMeta meta{h, w, k, stride, pad};
    ASAME_CHECK_SHAPE(x.cols() == static_cast<Eigen::Index>(h) * w, "conv2d: x columns != h*w");
    ASAME_CHECK_SHAPE(weight.cols() == x.rows() * k * k, "conv2d: weight inner size mismatch");
    ASAME_CHECK_SHAPE(bias.rows() == weight.rows() && bias.cols() == 1,
                      "conv2d: bias must be (c_out,1)");
    Matrix<T> cols = conv_detail::im2col(x.value(), meta);
    Matrix<T> out = weight.value() * cols;
    out.colwise() += bias.value().col(0);
    auto xn = x.node(), wn = weight.node(), bn = bias.node();
    return Var<T>::op(std::move(out), {x, weight, bias},
                      [xn, wn, bn, meta, cols = std::move(cols)](Node<T>& n) {
                          if (bn->requires_grad) bn->accumulate(n.grad.rowwise().sum());
                          if (wn->requires_grad) wn->accumulate(n.grad * cols.transpose());
                          if (xn->requires_grad) {
                              Matrix<T> gcols = wn->value.transpose() * n.grad;
                              conv_detail::col2im_add(xn->ensure_grad(), gcols, meta);
                          }
                      });
}

/// Non-overlapping average pooling by integer factor.
template <typename T>
Var<T> avg_pool(const Var<T>& x, int h, int w, int factor) {
    ASAME_CHECK_SHAPE(h % factor == 0 && w % factor == 0, "avg_pool: factor must divide h and w");
    ASAME_CHECK_SHAPE(x.cols() == static_cast<Eigen::Index>(h) * w, "avg_pool: x columns != h*w");
    const int oh = h / factor, ow = w / factor;
    const T inv = T(1) / static_cast<T>(factor * factor);
    Matrix<T> out = Matrix<T>::Zero(x.rows(), static_cast<Eigen::Index>(oh) * ow);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const Eigen::Index o = static_cast<Eigen::Index>(oy) * ow + ox;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    out.col(o) +=
                        x.value().col(static_cast<Eigen::Index>(oy * factor + dy) * w +
                                      (ox * factor + dx));
            out.col(o) *= inv;
        }
    auto xn = x.node();
    return Var<T>::op(std::move(out), {x}, [xn, h, w, factor, oh, ow, inv](Node<T>& n) {
        if (!xn->requires_grad) return;
        Matrix<T>& gx = xn->ensure_grad();
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const Eigen::Index o = static_cast<Eigen::Index>(oy) * ow + ox;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        gx.col(static_cast<Eigen::Index>(oy * factor + dy) * w +
                               (ox * factor + dx)) += n.grad.col(o) * inv;
            }
    });
}

namespace resize_detail {

struct Tap {
    Eigen::Index src[4];
    float w[4];
};

/// Bilinear taps, half-pixel-center convention (align_corners = false).
inline std::vector<Tap> bilinear_taps(int h, int w, int out_h, int out_w) {
    std::vector<Tap> taps(static_cast<std::size_t>(out_h) * out_w);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
            const double fy = (oy + 0.5) * sy - 0.5;
            const double fx = (ox + 0.5) * sx - 0.5;
            const int y0 = static_cast<int>(std::floor(fy));
            const int x0 = static_cast<int>(std::floor(fx));
            const double ay = fy - y0, ax = fx - x0;
            auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
            const int yc0 = clampi(y0, h), yc1 = clampi(y0 + 1, h);
            const int xc0 = clampi(x0, w), xc1 = clampi(x0 + 1, w);
            Tap& t = taps[static_cast<std::size_t>(oy) * out_w + ox];
            t.src[0] = static_cast<Eigen::Index>(yc0) * w + xc0;
            t.src[1] = static_cast<Eigen::Index>(yc0) * w + xc1;
            t.src[2] = static_cast<Eigen::Index>(yc1) * w + xc0;
            t.src[3] = static_cast<Eigen::Index>(yc1) * w + xc1;
            t.w[0] = static_cast<float>((1 - ay) * (1 - ax));
            t.w[1] = static_cast<float>((1 - ay) * ax);
            t.w[2] = static_cast<float>(ay * (1 - ax));
            t.w[3] = static_cast<float>(ay * ax);
        }
    return taps;
}

}  // namespace resize_detail

/// Bilinear resize of a (c, h*w) map to (c, out_h*out_w).
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int h, int w, int out_h, int out_w) {
    ASAME_CHECK_SHAPE(x.cols() == static_cast<Eigen::Index>(h) * w,
                      "bilinear_resize: x columns != h*w");
    auto taps = resize_detail::bilinear_taps(h, w, out_h, out_w);
    Matrix<T> out(x.rows(), static_cast<Eigen::Index>(out_h) * out_w);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        const auto& t = taps[o];
        out.col(static_cast<Eigen::Index>(o)) =
            x.value().col(t.src[0]) * T(t.w[0]) + x.value().col(t.src[1]) * T(t.w[1]) +
            x.value().col(t.src[2]) * T(t.w[2]) + x.value().col(t.src[3]) * T(t.w[3]);
    }
    auto xn = x.node();
    return Var<T>::op(std::move(out), {x}, [xn, taps = std::move(taps)](Node<T>& n) {
        if (!xn->requires_grad) return;
        Matrix<T>& gx = xn->ensure_grad();
        for (std::size_t o = 0; o < taps.size(); ++o) {
            const auto& t = taps[o];
            const auto g = n.grad.col(static_cast<Eigen::Index>(o));
            for (int i = 0; i < 4; ++i) gx.col(t.src[i]) += g * T(t.w[i]);
        }
    });
}

/// Fully connected layer helper: x (n, in) -> (n, out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    return add_rowvec(matmul(x, weight), bias);
}

/// Single-head scaled dot-product attention over token matrices.
template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
    ASAME_CHECK_SHAPE(q.cols() == k.cols() && k.rows() == v.rows(),
                      "scaled_dot_attention: shape mismatch");
    const T scale_factor = T(1) / std::sqrt(static_cast<T>(q.cols()));
    Var<T> scores = scale(matmul(q, transpose(k)), scale_factor);
    return matmul(softmax_rows(scores), v);
}

}  // namespace autosame::ad
