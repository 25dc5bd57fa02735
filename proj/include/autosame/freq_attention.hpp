#pragma once

#include <string>
#include <utility>

#include "autosame/freq.hpp"
#include "autosame/ops.hpp"
#include "autosame/tape.hpp"

namespace autosame::attn {

using ad::Binding;
using ad::Parameter;
using ad::ParamStore;
using ad::Var;

/// Differentiable spectral band filter. The underlying map
/// x -> Re(IFFT(mask . FFT(x))) is linear and self-adjoint (the DFT matrix F
/// is symmetric and F^-1 = conj(F)/n, so H = F^-1 diag(m) F satisfies
/// H^T = conj(H); taking real parts gives a symmetric real operator), hence
/// the backward pass applies the identical filter to the gradient.
template <typename T>
Var<T> band_filter(const Var<T>& x, int h, int w, const MaskGrid& mask) {
    ASAME_CHECK_SHAPE(x.cols() == static_cast<Eigen::Index>(h) * w,
                      "band_filter: columns must equal h*w");
    Matrix<T> y = freq::band_filter(x.value(), h, w, mask);
    auto xn = x.node();
    return Var<T>::op(std::move(y), {x}, [xn, h, w, mask](ad::Node<T>& n) {
        xn->accumulate(freq::band_filter(n.grad, h, w, mask));
    });
}

/// Low/high-pass split of a feature map as graph nodes.
template <typename T>
struct BandPair {
    Var<T> low;
    Var<T> high;
};

template <typename T>
BandPair<T> band_decompose(const Var<T>& f_ie, int h, int w) {
    freq::FrequencyMasks masks = freq::build_masks(h, w);
    return {band_filter(f_ie, h, w, masks.low), band_filter(f_ie, h, w, masks.high)};
}

/// Projection weights of one cross-attention unit. K and V projections are
/// shared between the two band branches of a frequency block, so a single
/// triple serves both.
template <typename T>
struct CrossAttnWeights {
    Parameter<T>* wq = nullptr;
    Parameter<T>* wk = nullptr;
    Parameter<T>* wv = nullptr;
};

template <typename T>
struct CrossAttnVars {
    Var<T> wq, wk, wv;
};

template <typename T>
CrossAttnWeights<T> make_cross_attn(ParamStore<T>& store, const std::string& prefix, int c,
                                    Rng& rng) {
    const double std_dev = 0.02;
    CrossAttnWeights<T> w;
    w.wq = &store.add(prefix + ".wq", rng.normal_matrix<T>(c, c, std_dev));
    w.wk = &store.add(prefix + ".wk", rng.normal_matrix<T>(c, c, std_dev));
    w.wv = &store.add(prefix + ".wv", rng.normal_matrix<T>(c, c, std_dev));
    return w;
}

template <typename T>
CrossAttnVars<T> bind(Binding<T>& b, const CrossAttnWeights<T>& w) {
    return {b(*w.wq), b(*w.wk), b(*w.wv)};
}

/// Single-head cross-attention over spatial tokens. Inputs and output are
/// (c, h*w) feature maps; each spatial position is one token. Queries come
/// from `f_q`, keys and values from `f_kv`; there is no output projection.
template <typename T>
Var<T> cross_attention(const Var<T>& f_q, const Var<T>& f_kv, const CrossAttnVars<T>& w) {
    ASAME_CHECK_SHAPE(f_q.rows() == f_kv.rows(), "cross_attention: channel counts differ");
    ASAME_CHECK_SHAPE(f_q.rows() == w.wq.rows(), "cross_attention: weight size mismatch");
    Var<T> q = ad::matmul(ad::transpose(f_q), w.wq);
    Var<T> k = ad::matmul(ad::transpose(f_kv), w.wk);
    Var<T> v = ad::matmul(ad::transpose(f_kv), w.wv);
    return ad::transpose(ad::scaled_dot_attention(q, k, v));
}

/// Weights of one filtered cross-band attention block: shared Q/K/V
/// projections plus the scalar gate logit blending the two band branches.
template <typename T>
struct FcbaWeights {
    CrossAttnWeights<T> attn;
    Parameter<T>* alpha = nullptr;
};

template <typename T>
struct FcbaVars {
    CrossAttnVars<T> attn;
    Var<T> alpha;
};

template <typename T>
FcbaWeights<T> make_fcba(ParamStore<T>& store, const std::string& prefix, int c, Rng& rng) {
    FcbaWeights<T> w;
    w.attn = make_cross_attn(store, prefix, c, rng);
    // Zero logit starts the gate at 1/2: both bands contribute equally until
    // training says otherwise.
    w.alpha = &store.add(prefix + ".alpha", Matrix<T>::Zero(1, 1));
    return w;
}

template <typename T>
FcbaVars<T> bind(Binding<T>& b, const FcbaWeights<T>& w) {
    return {bind(b, w.attn), b(*w.alpha)};
}

/// Filtered cross-band attention. The encoder map `f_ie` is split into
/// complementary low/high bands; the CNN-branch map `f_hc` queries each band
/// through the shared projections, and a sigmoid gate on `alpha` mixes the
/// two attended maps into a residual update:
///   F = f_hc + g * A_low + (1 - g) * A_high,  g = sigmoid(alpha).
template <typename T>
Var<T> fcba_forward(const Var<T>& f_ie, const Var<T>& f_hc, int h, int w,
                    const FcbaVars<T>& vars) {
    ASAME_CHECK_SHAPE(f_hc.cols() == f_ie.cols() && f_hc.rows() == f_ie.rows(),
                      "fcba_forward: branch maps must share shape");
    BandPair<T> bands = band_decompose(f_ie, h, w);
    Var<T> a_low = cross_attention(f_hc, bands.low, vars.attn);
    Var<T> a_high = cross_attention(f_hc, bands.high, vars.attn);
    Var<T> g = ad::sigmoid(vars.alpha);
    return ad::add(f_hc, ad::add(ad::scale_by(g, a_low), ad::scale_by(ad::one_minus(g), a_high)));
}

/// Cross-branch attention: the all-pass sibling of fcba_forward. With an
/// identity filter both bands coincide, so the gate drops out and a single
/// attention over the unfiltered encoder map remains.
template <typename T>
Var<T> cba_forward(const Var<T>& f_ie, const Var<T>& f_sc, const CrossAttnVars<T>& vars) {
    ASAME_CHECK_SHAPE(f_sc.cols() == f_ie.cols() && f_sc.rows() == f_ie.rows(),
                      "cba_forward: branch maps must share shape");
    return ad::add(f_sc, cross_attention(f_sc, f_ie, vars));
}

}  // namespace autosame::attn
