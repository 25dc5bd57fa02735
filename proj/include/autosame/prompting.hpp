#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "autosame/freq_attention.hpp"
#include "autosame/geometry.hpp"
#include "autosame/ops.hpp"
#include "autosame/tape.hpp"

namespace autosame::prompt {

using ad::Binding;
using ad::Parameter;
using ad::ParamStore;
using ad::Var;

enum class Task { SEG, HR };
enum class Source { APG, PromptEncoder };

inline const char* to_string(Task t) { return t == Task::SEG ? "SEG" : "HR"; }

/// Prompt token count per task: three anatomical points for HR, two bounding
/// box corners for SEG.
constexpr int prompt_tokens(Task t) { return t == Task::HR ? 3 : 2; }

/// A bundle of prompt tokens, either produced by the frozen prompt encoder
/// (plain values) or generated by an APG (graph nodes carrying gradient).
template <typename T>
struct PromptEmbedding {
    Var<T> tokens;  // (n_tokens, d)
    Source source = Source::PromptEncoder;
    Task task = Task::HR;
};

/// Frozen prompt encoder: random-Fourier positional features plus per-type
/// embeddings, all drawn once from a seeded generator and never trained.
/// Mirrors the SAM prompt-encoder design at small width.
template <typename T>
class PromptEncoder {
public:
    enum TypeIndex {
        kApex = 0,
        kMitralLeft = 1,
        kMitralRight = 2,
        kBoxTopLeft = 3,
        kBoxBottomRight = 4,
        kNumTypes = 5,
    };

    PromptEncoder(int d, std::uint64_t seed) : d_(d) {
        ASAME_CHECK(d > 0 && d % 2 == 0, "PromptEncoder: embedding width must be even");
        Rng rng = Rng::derive(seed, 0x70726f6d7074ULL);  // stream tag: "prompt"
        fourier_b_ = rng.normal_matrix<T>(2, d / 2, 1.0);
        type_embed_ = rng.normal_matrix<T>(kNumTypes, d, 1.0);
    }

    int width() const { return d_; }

    /// Positional features of one point: coordinates normalized to [0,1],
    /// affinely mapped to [-1,1], projected through the frozen Gaussian
    /// matrix, then expanded as [sin(2*pi*f), cos(2*pi*f)].
    Matrix<T> encode_position(const Point2& p, int h, int w) const {
        ASAME_CHECK(h > 0 && w > 0, "encode_position: grid must be positive");
        Eigen::Matrix<T, 1, 2> q;
        q(0, 0) = static_cast<T>(2.0 * (p.x() / static_cast<double>(w)) - 1.0);
        q(0, 1) = static_cast<T>(2.0 * (p.y() / static_cast<double>(h)) - 1.0);
        Matrix<T> f = q * fourier_b_;
        f *= static_cast<T>(2.0 * std::numbers::pi);
        Matrix<T> tok(1, d_);
        tok.leftCols(d_ / 2) = f.array().sin().matrix();
        tok.rightCols(d_ / 2) = f.array().cos().matrix();
        return tok;
    }

    /// Three HR prompt tokens in heatmap channel order (apex, mitral left,
    /// mitral right), positional features plus the landmark type embedding.
    PromptEmbedding<T> encode_points(const geometry::Landmarks& lm, int h, int w) const {
        lm.validate(h, w);
        Matrix<T> tok(3, d_);
        tok.row(0) = encode_position(lm.apex, h, w) + type_embed_.row(kApex);
        tok.row(1) = encode_position(lm.mitral_left, h, w) + type_embed_.row(kMitralLeft);
        tok.row(2) = encode_position(lm.mitral_right, h, w) + type_embed_.row(kMitralRight);
        return {Var<T>::constant(std::move(tok)), Source::PromptEncoder, Task::HR};
    }

    /// Two SEG prompt tokens: the corners of the tight axis-aligned bounding
    /// box of the mask, with box-corner type embeddings.
    PromptEmbedding<T> encode_box(const geometry::ViewMask& mask) const {
        const int h = mask.height();
        const int w = mask.width();
        int r0 = h, r1 = -1, c0 = w, c1 = -1;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if (mask.grid(r, c)) {
                    r0 = std::min(r0, r);
                    r1 = std::max(r1, r);
                    c0 = std::min(c0, c);
                    c1 = std::max(c1, c);
                }
        if (r1 < 0) throw DataError("encode_box: mask is empty");
        Matrix<T> tok(2, d_);
        tok.row(0) = encode_position(Point2(c0, r0), h, w) + type_embed_.row(kBoxTopLeft);
        tok.row(1) = encode_position(Point2(c1, r1), h, w) + type_embed_.row(kBoxBottomRight);
        return {Var<T>::constant(std::move(tok)), Source::PromptEncoder, Task::SEG};
    }

private:
    int d_;
    Matrix<T> fourier_b_;   // (2, d/2)
    Matrix<T> type_embed_;  // (kNumTypes, d)
};

/// Learnable weights of one auto prompt generator. `mask_token_ref` aliases
/// the decoder's mask token parameter; the APG reads its value but the
/// reference is detached, so no gradient ever reaches it from this path.
template <typename T>
struct ApgWeights {
    Task task = Task::HR;
    int n_tokens = 3;
    Parameter<T>* task_token = nullptr;     // (1, d), trainable
    Parameter<T>* mask_token_ref = nullptr;  // owned by the decoder
    attn::CrossAttnWeights<T> block0, block1;
    Parameter<T>* head_w1 = nullptr;
    Parameter<T>* head_b1 = nullptr;
    Parameter<T>* head_w2 = nullptr;
    Parameter<T>* head_b2 = nullptr;
};

template <typename T>
ApgWeights<T> make_apg(ParamStore<T>& store, const std::string& prefix, int d, Task task,
                       Parameter<T>& decoder_mask_token, Rng& rng) {
    ASAME_CHECK_SHAPE(decoder_mask_token.value.rows() == 1 && decoder_mask_token.value.cols() == d,
                      "make_apg: mask token must be (1,d)");
    ApgWeights<T> w;
    w.task = task;
    w.n_tokens = prompt_tokens(task);
    w.task_token = &store.add(prefix + ".task_token", rng.normal_matrix<T>(1, d, 0.02));
    w.mask_token_ref = &decoder_mask_token;
    w.block0 = attn::make_cross_attn(store, prefix + ".attn0", d, rng);
    w.block1 = attn::make_cross_attn(store, prefix + ".attn1", d, rng);
    const int hidden = 2 * d;
    w.head_w1 = &store.add(prefix + ".head.w1",
                           rng.normal_matrix<T>(2 * d, hidden, std::sqrt(2.0 / (2.0 * d))));
    w.head_b1 = &store.add(prefix + ".head.b1", Matrix<T>::Zero(1, hidden));
    w.head_w2 = &store.add(prefix + ".head.w2",
                           rng.normal_matrix<T>(hidden, w.n_tokens * d, std::sqrt(2.0 / hidden)));
    w.head_b2 = &store.add(prefix + ".head.b2", Matrix<T>::Zero(1, w.n_tokens * d));
    return w;
}

namespace detail {

/// Cross-attention over token matrices: q (n,d) attends into kv (m,d).
template <typename T>
Var<T> token_attention(const Var<T>& q, const Var<T>& kv, const attn::CrossAttnVars<T>& w) {
    return ad::scaled_dot_attention(ad::matmul(q, w.wq), ad::matmul(kv, w.wk),
                                    ad::matmul(kv, w.wv));
}

}  // namespace detail

/// Generate prompt tokens from the image embedding ((d, h*w) feature map).
/// The task token and the detached mask token attend twice over the image
/// tokens; an MLP head expands the pair into the task's n_tokens embeddings.
/// Alignment supervises the generator alone, so the embedding enters
/// detached and the encoder keeps learning through the decoder path only.
template <typename T>
PromptEmbedding<T> apg_forward(const Var<T>& image_embedding, const ApgWeights<T>& w,
                               Binding<T>& bind) {
    const Eigen::Index d = w.task_token->value.cols();
    ASAME_CHECK_SHAPE(image_embedding.rows() == d,
                      "apg_forward: embedding width differs from generator width");
    Var<T> kv = ad::transpose(ad::stopgrad(image_embedding));  // (hw, d)
    Var<T> q = ad::concat_rows(bind(*w.task_token), ad::stopgrad(bind(*w.mask_token_ref)));
    q = ad::add(q, detail::token_attention(q, kv, attn::bind(bind, w.block0)));
    q = ad::add(q, detail::token_attention(q, kv, attn::bind(bind, w.block1)));
    Var<T> flat = ad::reshape_rowmajor(q, 1, 2 * d);
    Var<T> hid = ad::gelu(ad::linear(flat, bind(*w.head_w1), bind(*w.head_b1)));
    Var<T> out = ad::linear(hid, bind(*w.head_w2), bind(*w.head_b2));
    return {ad::reshape_rowmajor(out, w.n_tokens, d), Source::APG, w.task};
}

/// Alignment loss: mean over tokens of (1 - cosine similarity) between the
/// generated and the encoded prompt embeddings. Range [0,2]; zero-norm
/// tokens are rejected because the cosine is undefined there.
template <typename T>
Var<T> alignment_loss(const PromptEmbedding<T>& e_apg, const PromptEmbedding<T>& e_pe) {
    ASAME_CHECK(e_apg.task == e_pe.task, "alignment_loss: task mismatch");
    ASAME_CHECK_SHAPE(e_apg.tokens.rows() == e_pe.tokens.rows() &&
                          e_apg.tokens.cols() == e_pe.tokens.cols(),
                      "alignment_loss: embedding shapes differ");
    return ad::cosine_align_vs(e_apg.tokens, e_pe.tokens.value());
}

}  // namespace autosame::prompt
