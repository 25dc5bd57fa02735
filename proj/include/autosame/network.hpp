#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "autosame/freq_attention.hpp"
#include "autosame/heatmap.hpp"
#include "autosame/ops.hpp"
#include "autosame/prompting.hpp"
#include "autosame/tape.hpp"

namespace autosame::net {

using ad::Binding;
using ad::Parameter;
using ad::ParamStore;
using ad::Var;

inline constexpr double kDiceWeight = 1.0;
inline constexpr double kMseWeight = 20.0;

struct EncoderConfig {
    int input_size = 256;
    int patch_size = 16;
    int embed_dim = 128;
    int depth = 4;
    int adapter_dim = 32;
    std::vector<int> cnn_channels = {16, 32, 64};
    int decoder_dim = 128;
    int fcba_levels = 3;
    int mlp_ratio = 2;
    int pos_grid = 16;  // native grid of the stored positional table
    bool use_adapters = true;

    int grid() const { return input_size / patch_size; }
    int tokens() const { return grid() * grid(); }
    int mask_grid() const { return 4 * grid(); }
    int hyper_dim() const { return embed_dim / 4; }

    void validate() const {
        ASAME_CHECK(input_size > 0 && patch_size > 0 && embed_dim > 0 && depth > 0 &&
                        adapter_dim > 0 && decoder_dim > 0 && fcba_levels > 0 && mlp_ratio > 0 &&
                        pos_grid > 0,
                    "EncoderConfig: all dimensions must be positive");
        ASAME_CHECK(input_size % patch_size == 0,
                    "EncoderConfig: input_size must be divisible by patch_size");
        ASAME_CHECK(grid() % 4 == 0, "EncoderConfig: encoder grid must be divisible by 4");
        ASAME_CHECK(embed_dim % 4 == 0, "EncoderConfig: embed_dim must be divisible by 4");
        ASAME_CHECK(decoder_dim == embed_dim,
                    "EncoderConfig: decoder_dim must equal embed_dim (single-width build)");
        ASAME_CHECK(fcba_levels <= depth, "EncoderConfig: fcba_levels cannot exceed depth");
        ASAME_CHECK(static_cast<int>(cnn_channels.size()) == fcba_levels,
                    "EncoderConfig: need one CNN stage per attention level");
        int s = input_size;
        for (int i = 0; i < fcba_levels; ++i) {
            ASAME_CHECK(s % 2 == 0, "EncoderConfig: CNN stage size must stay even");
            s /= 2;
            ASAME_CHECK(s >= grid() && s % grid() == 0,
                        "EncoderConfig: CNN stage grids must pool evenly onto the encoder grid");
        }
    }

    /// Full-scale defaults (256 px input).
    static EncoderConfig paper_scale() { return EncoderConfig{}; }

    /// Miniature configuration for double-precision gradient checks.
    static EncoderConfig tiny() {
        EncoderConfig c;
        c.input_size = 32;
        c.patch_size = 8;
        c.embed_dim = 16;
        c.depth = 2;
        c.adapter_dim = 8;
        c.cnn_channels = {4, 8};
        c.decoder_dim = 16;
        c.fcba_levels = 2;
        c.mlp_ratio = 2;
        c.pos_grid = 4;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Weight bundles. Pointers alias Parameters owned by the network's ParamStore;
// the store's insertion order fixes optimizer and checkpoint order.
// ---------------------------------------------------------------------------

template <typename T>
struct LinearW {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
};

template <typename T>
struct NormW {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
};

template <typename T>
struct TokenAttnW {
    attn::CrossAttnWeights<T> qkv;
    LinearW<T> proj;
};

template <typename T>
struct MlpW {
    LinearW<T> fc1, fc2;
};

template <typename T>
struct EncoderBlockW {
    NormW<T> ln1, ln2;
    TokenAttnW<T> attn;
    MlpW<T> mlp;
    LinearW<T> ad_down, ad_up;  // bottleneck feature adapter (up zero-initialized)
};

template <typename T>
struct TwoWayBlockW {
    TokenAttnW<T> self_attn;   // prompt/mask tokens attend to themselves
    TokenAttnW<T> cross_t2i;   // tokens query the image
    TokenAttnW<T> cross_i2t;   // image queries the tokens
    MlpW<T> mlp;
    NormW<T> ln1, ln2, ln3, ln4;
};

template <typename T>
struct CnnStageW {
    LinearW<T> conv;  // 3x3 stride-2: w (c_out, c_in*9), b (c_out, 1)
    LinearW<T> proj;  // 1x1 to embed width: w (embed, c_out), b (embed, 1)
};

template <typename T>
struct DecoderW {
    Parameter<T>* mask_token = nullptr;  // (1, d)
    std::vector<TwoWayBlockW<T>> blocks;
    LinearW<T> neck1, neck2;  // 3x3 convs d -> d/2 -> d/4 across two upsamplings
    MlpW<T> hyper_seg;        // mask-token output -> 1   x hyper_dim weights
    MlpW<T> hyper_hr;         // mask-token output -> 3   x hyper_dim weights
};

namespace detail {

template <typename T>
LinearW<T> make_linear(ParamStore<T>& s, const std::string& name, int in, int out, Rng& rng) {
    return {&s.add(name + ".w", rng.normal_matrix<T>(in, out, std::sqrt(2.0 / in))),
            &s.add(name + ".b", Matrix<T>::Zero(1, out))};
}

template <typename T>
LinearW<T> make_linear_zero(ParamStore<T>& s, const std::string& name, int in, int out) {
    return {&s.add(name + ".w", Matrix<T>::Zero(in, out)),
            &s.add(name + ".b", Matrix<T>::Zero(1, out))};
}

template <typename T>
LinearW<T> make_conv(ParamStore<T>& s, const std::string& name, int c_in, int c_out, int k,
                     Rng& rng) {
    return {&s.add(name + ".w", rng.normal_matrix<T>(c_out, c_in * k * k,
                                                     std::sqrt(2.0 / (c_in * k * k)))),
            &s.add(name + ".b", Matrix<T>::Zero(c_out, 1))};
}

template <typename T>
NormW<T> make_norm(ParamStore<T>& s, const std::string& name, int d) {
    return {&s.add(name + ".gamma", Matrix<T>::Ones(1, d)),
            &s.add(name + ".beta", Matrix<T>::Zero(1, d))};
}

template <typename T>
TokenAttnW<T> make_token_attn(ParamStore<T>& s, const std::string& name, int d, Rng& rng) {
    TokenAttnW<T> w;
    w.qkv = attn::make_cross_attn(s, name, d, rng);
    w.proj = make_linear(s, name + ".proj", d, d, rng);
    return w;
}

template <typename T>
MlpW<T> make_mlp(ParamStore<T>& s, const std::string& name, int d, int hidden, int out, Rng& rng) {
    return {make_linear(s, name + ".fc1", d, hidden, rng),
            make_linear(s, name + ".fc2", hidden, out, rng)};
}

template <typename T>
Var<T> linear_fw(Binding<T>& b, const LinearW<T>& l, const Var<T>& x) {
    return ad::linear(x, b(*l.w), b(*l.b));
}

template <typename T>
Var<T> norm_fw(Binding<T>& b, const NormW<T>& nw, const Var<T>& x) {
    return ad::layernorm_rows(x, b(*nw.gamma), b(*nw.beta));
}

/// Single-head attention over token rows with output projection.
template <typename T>
Var<T> attn_fw(Binding<T>& b, const TokenAttnW<T>& w, const Var<T>& q, const Var<T>& kv) {
    Var<T> o = ad::scaled_dot_attention(ad::matmul(q, b(*w.qkv.wq)), ad::matmul(kv, b(*w.qkv.wk)),
                                        ad::matmul(kv, b(*w.qkv.wv)));
    return linear_fw(b, w.proj, o);
}

template <typename T>
Var<T> mlp_fw(Binding<T>& b, const MlpW<T>& m, const Var<T>& x) {
    return linear_fw(b, m.fc2, ad::gelu(linear_fw(b, m.fc1, x)));
}

}  // namespace detail

/// The toy dual-task model: every learnable tensor lives in `store()`; the
/// frozen prompt encoder is regenerated from the construction seed.
template <typename T>
class Network {
public:
    Network(EncoderConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)), seed_(seed), prompt_enc_(cfg_.decoder_dim, seed) {
        cfg_.validate();
        Rng rng = Rng::derive(seed, 0x6e6574ULL);  // stream tag: "net"
        build(rng);
    }

    const EncoderConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    const prompt::PromptEncoder<T>& prompt_encoder() const { return prompt_enc_; }

    // Weight groups, public for the forward functions and tests.
    LinearW<T> patch_embed;
    Parameter<T>* pos_table = nullptr;
    MlpW<T> pos_adapter;  // zero-initialized correction on the resized table
    std::vector<EncoderBlockW<T>> blocks;
    NormW<T> final_ln;
    std::vector<CnnStageW<T>> seg_branch, hr_branch;
    std::vector<attn::CrossAttnWeights<T>> cba;
    std::vector<attn::FcbaWeights<T>> fcba;
    DecoderW<T> decoder;
    prompt::ApgWeights<T> apg_seg, apg_hr;

private:
    void build(Rng& rng) {
        namespace d = detail;
        const int e = cfg_.embed_dim;
        const int p = cfg_.patch_size;
        patch_embed = d::make_conv(store_, "encoder.patch", 1, e, p, rng);
        pos_table = &store_.add("encoder.pos_table",
                                rng.normal_matrix<T>(e, cfg_.pos_grid * cfg_.pos_grid, 0.02));
        pos_adapter = d::make_mlp(store_, "encoder.pos_adapter", e, cfg_.adapter_dim, e, rng);
        pos_adapter.fc2.w->value.setZero();
        for (int i = 0; i < cfg_.depth; ++i) {
            const std::string pre = "encoder.block" + std::to_string(i);
            EncoderBlockW<T> blk;
            blk.ln1 = d::make_norm(store_, pre + ".ln1", e);
            blk.attn = d::make_token_attn(store_, pre + ".attn", e, rng);
            blk.ln2 = d::make_norm(store_, pre + ".ln2", e);
            blk.mlp = d::make_mlp(store_, pre + ".mlp", e, cfg_.mlp_ratio * e, e, rng);
            blk.ad_down = d::make_linear(store_, pre + ".adapter.down", e, cfg_.adapter_dim, rng);
            blk.ad_up = d::make_linear_zero(store_, pre + ".adapter.up", cfg_.adapter_dim, e);
            blocks.push_back(blk);
        }
        final_ln = d::make_norm(store_, "encoder.final_ln", e);

        auto make_branch = [&](const std::string& name) {
            std::vector<CnnStageW<T>> stages;
            int c_in = 1;
            for (int i = 0; i < cfg_.fcba_levels; ++i) {
                const std::string pre = name + ".stage" + std::to_string(i);
                CnnStageW<T> st;
                st.conv = d::make_conv(store_, pre + ".conv", c_in, cfg_.cnn_channels[i], 3, rng);
                st.proj = {&store_.add(pre + ".proj.w",
                                       rng.normal_matrix<T>(e, cfg_.cnn_channels[i],
                                                            std::sqrt(2.0 / cfg_.cnn_channels[i]))),
                           &store_.add(pre + ".proj.b", Matrix<T>::Zero(e, 1))};
                c_in = cfg_.cnn_channels[i];
                stages.push_back(st);
            }
            return stages;
        };
        seg_branch = make_branch("seg_branch");
        hr_branch = make_branch("hr_branch");
        for (int i = 0; i < cfg_.fcba_levels; ++i) {
            cba.push_back(attn::make_cross_attn(store_, "cba" + std::to_string(i), e, rng));
            fcba.push_back(attn::make_fcba(store_, "fcba" + std::to_string(i), e, rng));
        }

        decoder.mask_token = &store_.add("decoder.mask_token", rng.normal_matrix<T>(1, e, 0.02));
        for (int i = 0; i < 2; ++i) {
            const std::string pre = "decoder.block" + std::to_string(i);
            TwoWayBlockW<T> blk;
            blk.self_attn = d::make_token_attn(store_, pre + ".self", e, rng);
            blk.ln1 = d::make_norm(store_, pre + ".ln1", e);
            blk.cross_t2i = d::make_token_attn(store_, pre + ".t2i", e, rng);
            blk.ln2 = d::make_norm(store_, pre + ".ln2", e);
            blk.mlp = d::make_mlp(store_, pre + ".mlp", e, cfg_.mlp_ratio * e, e, rng);
            blk.ln3 = d::make_norm(store_, pre + ".ln3", e);
            blk.cross_i2t = d::make_token_attn(store_, pre + ".i2t", e, rng);
            blk.ln4 = d::make_norm(store_, pre + ".ln4", e);
            decoder.blocks.push_back(blk);
        }
        decoder.neck1 = d::make_conv(store_, "decoder.neck1", e, e / 2, 3, rng);
        decoder.neck2 = d::make_conv(store_, "decoder.neck2", e / 2, e / 4, 3, rng);
        decoder.hyper_seg = d::make_mlp(store_, "decoder.hyper_seg", e, e, cfg_.hyper_dim(), rng);
        decoder.hyper_hr = d::make_mlp(store_, "decoder.hyper_hr", e, e,
                                       heatmap::kNumLandmarks * cfg_.hyper_dim(), rng);

        apg_seg = prompt::make_apg(store_, "apg_seg", e, prompt::Task::SEG, *decoder.mask_token,
                                   rng);
        apg_hr = prompt::make_apg(store_, "apg_hr", e, prompt::Task::HR, *decoder.mask_token, rng);
    }

    EncoderConfig cfg_;
    std::uint64_t seed_;
    ParamStore<T> store_;
    prompt::PromptEncoder<T> prompt_enc_;
};

template <typename T>
struct EncoderOut {
    std::vector<Var<T>> level_maps;  // (embed, g^2), one per attention level
    Var<T> embedding;                // (embed, g^2), after the final norm
};

/// Patch embedding + positional table (rescaled by the position adapter) +
/// pre-norm transformer blocks, each followed by its bottleneck feature
/// adapter. Taps the last `fcba_levels` block outputs for the branches.
template <typename T>
EncoderOut<T> image_encoder_forward(const Network<T>& net, Binding<T>& bind,
                                    const Matrix<T>& image) {
    namespace d = detail;
    const EncoderConfig& cfg = net.config();
    const int s = cfg.input_size, g = cfg.grid();
    ASAME_CHECK_SHAPE(image.rows() == 1 && image.cols() == static_cast<Eigen::Index>(s) * s,
                      "image_encoder_forward: image must be (1, input_size^2)");
    Var<T> x = Var<T>::constant(image);
    Var<T> feat = ad::conv2d(x, bind(*net.patch_embed.w), bind(*net.patch_embed.b), s, s,
                             cfg.patch_size, cfg.patch_size, 0);  // (embed, g^2)
    Var<T> pos = bind(*net.pos_table);
    if (cfg.pos_grid != g) pos = ad::bilinear_resize(pos, cfg.pos_grid, cfg.pos_grid, g, g);
    if (cfg.use_adapters) {
        Var<T> pt = ad::transpose(pos);
        pos = ad::transpose(ad::add(pt, d::mlp_fw(bind, net.pos_adapter, pt)));
    }
    Var<T> tok = ad::transpose(ad::add(feat, pos));  // (g^2, embed)

    EncoderOut<T> out;
    const int first_tap = cfg.depth - cfg.fcba_levels;
    for (int i = 0; i < cfg.depth; ++i) {
        const EncoderBlockW<T>& blk = net.blocks[i];
        Var<T> h1 = d::norm_fw(bind, blk.ln1, tok);
        tok = ad::add(tok, d::attn_fw(bind, blk.attn, h1, h1));
        tok = ad::add(tok, d::mlp_fw(bind, blk.mlp, d::norm_fw(bind, blk.ln2, tok)));
        if (cfg.use_adapters) {
            Var<T> a = d::linear_fw(bind, blk.ad_up,
                                    ad::gelu(d::linear_fw(bind, blk.ad_down, tok)));
            tok = ad::add(tok, a);
        }
        if (i >= first_tap) out.level_maps.push_back(ad::transpose(tok));
    }
    out.embedding = ad::transpose(d::norm_fw(bind, net.final_ln, tok));
    return out;
}

/// Strided conv stages; each stage output is average-pooled onto the encoder
/// grid and 1x1-projected to the embedding width for cross-branch attention.
template <typename T>
std::vector<Var<T>> cnn_branch_forward(const Network<T>& net, Binding<T>& bind,
                                       const std::vector<CnnStageW<T>>& stages,
                                       const Matrix<T>& image) {
    const EncoderConfig& cfg = net.config();
    const int g = cfg.grid();
    int h = cfg.input_size;
    Var<T> x = Var<T>::constant(image);
    std::vector<Var<T>> maps;
    for (const CnnStageW<T>& st : stages) {
        x = ad::gelu(ad::conv2d(x, bind(*st.conv.w), bind(*st.conv.b), h, h, 3, 2, 1));
        h /= 2;
        Var<T> pooled = (h == g) ? x : ad::avg_pool(x, h, h, h / g);
        maps.push_back(ad::add_colvec(ad::matmul(bind(*st.proj.w), pooled), bind(*st.proj.b)));
    }
    return maps;
}

/// Two-way decoding: [mask token; prompt tokens] and the image embedding
/// attend into each other, the image tokens are upsampled through the neck,
/// and the task's hypernetwork head turns the mask-token output into the
/// per-channel weights that produce the final maps at input resolution.
template <typename T>
Var<T> decoder_forward(const Network<T>& net, Binding<T>& bind, const Var<T>& task_embedding,
                       const Var<T>& prompt_tokens, prompt::Task task) {
    namespace d = detail;
    const EncoderConfig& cfg = net.config();
    const int g = cfg.grid();
    ASAME_CHECK_SHAPE(prompt_tokens.cols() == cfg.decoder_dim,
                      "decoder_forward: prompt token width mismatch");
    Var<T> img = ad::transpose(task_embedding);                                  // (g^2, d)
    Var<T> q = ad::concat_rows(bind(*net.decoder.mask_token), prompt_tokens);    // (1+n, d)
    for (const TwoWayBlockW<T>& blk : net.decoder.blocks) {
        q = d::norm_fw(bind, blk.ln1, ad::add(q, d::attn_fw(bind, blk.self_attn, q, q)));
        q = d::norm_fw(bind, blk.ln2, ad::add(q, d::attn_fw(bind, blk.cross_t2i, q, img)));
        q = d::norm_fw(bind, blk.ln3, ad::add(q, d::mlp_fw(bind, blk.mlp, q)));
        img = d::norm_fw(bind, blk.ln4, ad::add(img, d::attn_fw(bind, blk.cross_i2t, img, q)));
    }
    Var<T> m = ad::transpose(img);  // (d, g^2)
    m = ad::bilinear_resize(m, g, g, 2 * g, 2 * g);
    m = ad::gelu(ad::conv2d(m, bind(*net.decoder.neck1.w), bind(*net.decoder.neck1.b), 2 * g,
                            2 * g, 3, 1, 1));
    m = ad::bilinear_resize(m, 2 * g, 2 * g, 4 * g, 4 * g);
    m = ad::gelu(ad::conv2d(m, bind(*net.decoder.neck2.w), bind(*net.decoder.neck2.b), 4 * g,
                            4 * g, 3, 1, 1));  // (d/4, (4g)^2)

    const bool seg = task == prompt::Task::SEG;
    const int n_ch = seg ? 1 : heatmap::kNumLandmarks;
    Var<T> tok0 = ad::slice_rows(q, 0, 1);
    Var<T> wgt = d::mlp_fw(bind, seg ? net.decoder.hyper_seg : net.decoder.hyper_hr, tok0);
    wgt = ad::reshape_rowmajor(wgt, n_ch, cfg.hyper_dim());
    Var<T> out = ad::matmul(wgt, m);  // (n_ch, (4g)^2)
    return ad::bilinear_resize(out, 4 * g, 4 * g, cfg.input_size, cfg.input_size);
}

template <typename T>
struct TaskOutput {
    Var<T> output;  // SEG: (1, S^2) mask logits; HR: (3, S^2) heatmaps
    prompt::PromptEmbedding<T> prompts;  // the embedding the decoder consumed
};

template <typename T>
struct ModelOutput {
    TaskOutput<T> seg, hr;
    Var<T> image_embedding;                // encoder output (d, g^2)
    Var<T> seg_embedding, hr_embedding;    // per-task fused embeddings
};

/// End-to-end forward. By default each task's APG generates the prompt
/// embedding (the inference path); explicit prompt embeddings may be passed
/// to exercise the encoder-prompt path during training experiments.
template <typename T>
ModelOutput<T> model_forward(const Network<T>& net, Binding<T>& bind, const Matrix<T>& image,
                             const prompt::PromptEmbedding<T>* seg_prompts = nullptr,
                             const prompt::PromptEmbedding<T>* hr_prompts = nullptr) {
    const EncoderConfig& cfg = net.config();
    const int g = cfg.grid();
    EncoderOut<T> enc = image_encoder_forward(net, bind, image);
    std::vector<Var<T>> seg_maps = cnn_branch_forward(net, bind, net.seg_branch, image);
    std::vector<Var<T>> hr_maps = cnn_branch_forward(net, bind, net.hr_branch, image);

    // Fuse every attended level into the task embedding as a mean residual.
    const T level_scale = T(1) / static_cast<T>(cfg.fcba_levels);
    Var<T> seg_emb = enc.embedding;
    Var<T> hr_emb = enc.embedding;
    for (int i = 0; i < cfg.fcba_levels; ++i) {
        Var<T> f_seg = attn::cba_forward(enc.level_maps[i], seg_maps[i],
                                         attn::bind(bind, net.cba[i]));
        seg_emb = ad::add(seg_emb, ad::scale(f_seg, level_scale));
        Var<T> f_hr = attn::fcba_forward(enc.level_maps[i], hr_maps[i], g, g,
                                         attn::bind(bind, net.fcba[i]));
        hr_emb = ad::add(hr_emb, ad::scale(f_hr, level_scale));
    }

    ModelOutput<T> out;
    out.image_embedding = enc.embedding;
    out.seg_embedding = seg_emb;
    out.hr_embedding = hr_emb;
    prompt::PromptEmbedding<T> pe_seg =
        seg_prompts ? *seg_prompts : prompt::apg_forward(seg_emb, net.apg_seg, bind);
    prompt::PromptEmbedding<T> pe_hr =
        hr_prompts ? *hr_prompts : prompt::apg_forward(hr_emb, net.apg_hr, bind);
    out.seg = {decoder_forward(net, bind, seg_emb, pe_seg.tokens, prompt::Task::SEG), pe_seg};
    out.hr = {decoder_forward(net, bind, hr_emb, pe_hr.tokens, prompt::Task::HR), pe_hr};
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
Matrix<T> mask_to_matrix(const MaskGrid& m) {
    Matrix<T> out(1, m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out(0, r * m.cols() + c) = static_cast<T>(m(r, c));
    return out;
}

template <typename T>
Matrix<T> flatten_heatmaps(const heatmap::HeatmapSet<T>& hs) {
    const Eigen::Index h = hs.maps[0].rows(), w = hs.maps[0].cols();
    Matrix<T> out(heatmap::kNumLandmarks, h * w);
    for (int k = 0; k < heatmap::kNumLandmarks; ++k) {
        ASAME_CHECK_SHAPE(hs.maps[k].rows() == h && hs.maps[k].cols() == w,
                          "flatten_heatmaps: inconsistent map sizes");
        for (Eigen::Index r = 0; r < h; ++r)
            for (Eigen::Index c = 0; c < w; ++c) out(k, r * w + c) = hs.maps[k](r, c);
    }
    return out;
}

/// Soft Dice loss: 1 - (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps).
template <typename T>
Var<T> dice_loss(const Var<T>& pred_prob, const MaskGrid& gt) {
    return ad::dice_loss_vs(pred_prob, mask_to_matrix<T>(gt));
}

/// Per-epoch loss weights: Dice and MSE fixed at 1:20, alignment active
/// during warm-up only (exactly zero afterwards).
struct LossWeights {
    double dice = kDiceWeight;
    double mse = kMseWeight;
    double align = 1.0;

    static LossWeights at_epoch(int epoch, int warmup_epochs) {
        LossWeights w;
        w.align = epoch < warmup_epochs ? 1.0 : 0.0;
        return w;
    }
};

template <typename T>
struct Targets {
    MaskGrid gt_mask;
    heatmap::HeatmapSet<T> heatmaps;          // rendered at the epoch's sigma
    prompt::PromptEmbedding<T> pe_seg, pe_hr;  // E_PE for the alignment loss
};

template <typename T>
struct LossParts {
    T dice = T(0), mse = T(0), align_seg = T(0), align_hr = T(0), total = T(0);
};

template <typename T>
Var<T> total_loss(const ModelOutput<T>& out, const Targets<T>& tgt, int epoch, int warmup_epochs,
                  LossParts<T>* parts = nullptr) {
    const LossWeights w = LossWeights::at_epoch(epoch, warmup_epochs);
    Var<T> d = dice_loss(ad::sigmoid(out.seg.output), tgt.gt_mask);
    Var<T> m = ad::mse_vs(out.hr.output, flatten_heatmaps(tgt.heatmaps));
    Var<T> loss = ad::add(ad::scale(d, T(w.dice)), ad::scale(m, T(w.mse)));
    T a_seg = T(0), a_hr = T(0);
    if (w.align != 0.0) {
        Var<T> va_seg = prompt::alignment_loss(out.seg.prompts, tgt.pe_seg);
        Var<T> va_hr = prompt::alignment_loss(out.hr.prompts, tgt.pe_hr);
        a_seg = va_seg.scalar();
        a_hr = va_hr.scalar();
        loss = ad::add(loss, ad::scale(ad::add(va_seg, va_hr), T(w.align)));
    }
    if (parts) *parts = {d.scalar(), m.scalar(), a_seg, a_hr, loss.scalar()};
    return loss;
}

}  // namespace autosame::net
