#include <doctest.h>

#include <cmath>
#include <vector>

#include "autosame/network.hpp"

using namespace autosame;
namespace ad = autosame::ad;
namespace net = autosame::net;
namespace prompt = autosame::prompt;
using VarD = ad::Var<double>;

namespace {

MatrixD random_image(int size, Rng& rng) {
    return rng.uniform_matrix<double>(1, size * size, 0.0, 1.0);
}

/// Targets for a tiny-config loss: an off-center rectangle mask and the three
/// landmark heatmaps, plus prompt-encoder embeddings for the alignment term.
net::Targets<double> tiny_targets(const net::Network<double>& model, double sigma) {
    const int s = model.config().input_size;
    net::Targets<double> tgt;
    tgt.gt_mask = MaskGrid::Zero(s, s);
    for (int r = 6; r < 24; ++r)
        for (int c = 10; c < 22; ++c) tgt.gt_mask(r, c) = 1;

    geometry::Landmarks lm;
    lm.apex = Point2(16.0, 7.0);
    lm.mitral_left = Point2(11.0, 22.5);
    lm.mitral_right = Point2(21.0, 22.0);
    tgt.heatmaps = heatmap::make_heatmap_set<double>(lm, sigma, s, s);

    geometry::ViewMask vm;
    vm.grid = tgt.gt_mask;
    vm.view = geometry::View::A4C;
    vm.phase = geometry::Phase::ED;
    vm.spacing_mm = 1.0;
    tgt.pe_seg = model.prompt_encoder().encode_box(vm);
    tgt.pe_hr = model.prompt_encoder().encode_points(lm, s, s);
    return tgt;
}

double loss_value(net::Network<double>& model, const MatrixD& image,
                  const net::Targets<double>& tgt, int epoch, int warmup, bool use_apg) {
    ad::NoGradGuard no_grad;
    ad::Binding<double> bind(false);
    net::ModelOutput<double> out =
        use_apg ? net::model_forward(model, bind, image)
                : net::model_forward(model, bind, image, &tgt.pe_seg, &tgt.pe_hr);
    return net::total_loss(out, tgt, epoch, warmup).scalar();
}

}  // namespace

TEST_CASE("EncoderConfig validation catches inconsistent dimensions") {
    net::EncoderConfig c = net::EncoderConfig::tiny();
    CHECK_NOTHROW(c.validate());
    c.decoder_dim = 32;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = net::EncoderConfig::tiny();
    c.fcba_levels = 3;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = net::EncoderConfig::tiny();
    c.cnn_channels = {4};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = net::EncoderConfig::tiny();
    c.patch_size = 16;  // grid 2, not divisible by 4
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK_NOTHROW(net::EncoderConfig::paper_scale().validate());
}

TEST_CASE("image encoder: token grid shape and input validation") {
    net::Network<double> model(net::EncoderConfig::tiny(), 123);
    Rng rng(1);
    const MatrixD image = random_image(32, rng);
    ad::Binding<double> bind;
    net::EncoderOut<double> out = net::image_encoder_forward(model, bind, image);
    const int g = model.config().grid();
    CHECK(out.embedding.rows() == model.config().embed_dim);
    CHECK(out.embedding.cols() == g * g);
    CHECK(static_cast<int>(out.level_maps.size()) == model.config().fcba_levels);
    for (const VarD& m : out.level_maps) {
        CHECK(m.rows() == model.config().embed_dim);
        CHECK(m.cols() == g * g);
    }
    CHECK_THROWS_AS(net::image_encoder_forward(model, bind, MatrixD(MatrixD::Zero(1, 100))),
                    ShapeMismatch);
}

TEST_CASE("zero-initialized adapters make the encoder bitwise equal to the plain one") {
    net::EncoderConfig with = net::EncoderConfig::tiny();
    net::EncoderConfig without = net::EncoderConfig::tiny();
    without.use_adapters = false;
    net::Network<double> a(with, 7), b(without, 7);
    Rng rng(2);
    const MatrixD image = random_image(32, rng);
    ad::Binding<double> ba, bb;
    const MatrixD ea = net::image_encoder_forward(a, ba, image).embedding.value();
    const MatrixD eb = net::image_encoder_forward(b, bb, image).embedding.value();
    CHECK((ea.array() == eb.array()).all());  // bitwise: adapters contribute exact zeros
}

TEST_CASE("encoder forward is deterministic") {
    net::Network<double> a(net::EncoderConfig::tiny(), 11);
    net::Network<double> b(net::EncoderConfig::tiny(), 11);
    Rng rng(3);
    const MatrixD image = random_image(32, rng);
    ad::Binding<double> ba, bb, ba2;
    const MatrixD ea = net::image_encoder_forward(a, ba, image).embedding.value();
    const MatrixD eb = net::image_encoder_forward(b, bb, image).embedding.value();
    const MatrixD ea2 = net::image_encoder_forward(a, ba2, image).embedding.value();
    CHECK((ea.array() == eb.array()).all());
    CHECK((ea.array() == ea2.array()).all());
}

TEST_CASE("decoder parameters are shared between the two task passes") {
    net::Network<double> model(net::EncoderConfig::tiny(), 5);
    // Identity, not value: both APGs alias the decoder's own mask token, and
    // there is exactly one decoder parameter set in the store.
    CHECK(model.apg_seg.mask_token_ref == model.decoder.mask_token);
    CHECK(model.apg_hr.mask_token_ref == model.decoder.mask_token);
    CHECK(model.store().find("decoder.mask_token") == model.decoder.mask_token);
    CHECK(model.store().find("decoder.block0.self.wq") != nullptr);
    CHECK(model.store().find("decoder.block1.i2t.wv") != nullptr);
}

TEST_CASE("model_forward: task output shapes at tiny and full scale") {
    {
        net::Network<double> model(net::EncoderConfig::tiny(), 21);
        Rng rng(4);
        ad::Binding<double> bind;
        net::ModelOutput<double> out = net::model_forward(model, bind, random_image(32, rng));
        CHECK(out.seg.output.rows() == 1);
        CHECK(out.seg.output.cols() == 32 * 32);
        CHECK(out.hr.output.rows() == 3);
        CHECK(out.hr.output.cols() == 32 * 32);
        CHECK(out.seg.prompts.source == prompt::Source::APG);
        CHECK(out.hr.prompts.tokens.rows() == 3);
    }
    {
        net::Network<float> model(net::EncoderConfig::paper_scale(), 21);
        Rng rng(4);
        ad::NoGradGuard no_grad;
        ad::Binding<float> bind(false);
        const MatrixF image = rng.uniform_matrix<float>(1, 256 * 256, 0.0, 1.0);
        net::ModelOutput<float> out = net::model_forward(model, bind, image);
        CHECK(out.seg.output.rows() == 1);
        CHECK(out.seg.output.cols() == 256 * 256);
        CHECK(out.hr.output.rows() == 3);
        CHECK(out.hr.output.cols() == 256 * 256);
        CHECK(out.image_embedding.cols() == 16 * 16);
    }
}

TEST_CASE("model_forward accepts externally supplied prompt embeddings") {
    net::Network<double> model(net::EncoderConfig::tiny(), 33);
    Rng rng(6);
    const MatrixD image = random_image(32, rng);
    net::Targets<double> tgt = tiny_targets(model, 4.0);
    ad::Binding<double> bind;
    net::ModelOutput<double> apg_out = net::model_forward(model, bind, image);
    ad::Binding<double> bind2;
    net::ModelOutput<double> pe_out =
        net::model_forward(model, bind2, image, &tgt.pe_seg, &tgt.pe_hr);
    CHECK(pe_out.seg.prompts.source == prompt::Source::PromptEncoder);
    CHECK(apg_out.seg.prompts.source == prompt::Source::APG);
    // Different prompt content must steer the decoder to different outputs.
    CHECK((pe_out.seg.output.value() - apg_out.seg.output.value()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("dice_loss closed-form cases") {
    MaskGrid gt = MaskGrid::Zero(4, 4);
    gt(1, 1) = gt(1, 2) = gt(2, 1) = gt(2, 2) = 1;
    const MatrixD exact = net::mask_to_matrix<double>(gt);
    CHECK(net::dice_loss(VarD::constant(exact), gt).scalar() == doctest::Approx(0.0).epsilon(1e-5));
    MatrixD disjoint = MatrixD::Zero(1, 16);
    disjoint(0, 0) = disjoint(0, 15) = 1.0;
    CHECK(net::dice_loss(VarD::constant(disjoint), gt).scalar() ==
          doctest::Approx(1.0).epsilon(1e-5));
    const MaskGrid empty = MaskGrid::Zero(4, 4);
    CHECK(net::dice_loss(VarD::constant(MatrixD(MatrixD::Zero(1, 16))), empty).scalar() == 0.0);
}

TEST_CASE("total_loss: weighted sum matches the hand-computed example") {
    // Construct outputs whose component losses are exactly dice=0.1, mse=0.01,
    // and alignment 0.25 + 0.25: total must be 0.8 during warm-up (1*0.1 +
    // 20*0.01 + 0.5) and 0.3 afterwards.
    const int hw = 2;
    net::ModelOutput<double> out;
    net::Targets<double> tgt;

    tgt.gt_mask = MaskGrid::Zero(hw, hw);
    tgt.gt_mask(0, 0) = tgt.gt_mask(0, 1) = 1;
    // sigmoid(z) = 9/11 on the mask, ~0 off it: dice = (1-q)/(1+q) = 0.1.
    const double z_on = std::log((9.0 / 11.0) / (1.0 - 9.0 / 11.0));
    MatrixD logits = MatrixD::Constant(1, hw * hw, -40.0);
    logits(0, 0) = logits(0, 1) = z_on;
    out.seg.output = VarD::constant(logits);

    tgt.heatmaps.sigma_px = 1.0;
    for (int k = 0; k < 3; ++k) tgt.heatmaps.maps[k] = MatrixD::Constant(hw, hw, 0.5);
    // Uniform +0.1 error over every heatmap pixel: mse = 0.01.
    out.hr.output = VarD::constant(MatrixD(net::flatten_heatmaps(tgt.heatmaps).array() + 0.1));

    // Tokens at cosine 0.75 from their targets: alignment = 0.25 per task.
    MatrixD pe_tok(2, 2), apg_tok(2, 2);
    pe_tok << 1, 0, 0, 1;
    const double s = std::sqrt(1.0 - 0.75 * 0.75);
    apg_tok << 0.75, s, s, 0.75;
    tgt.pe_seg = {VarD::constant(pe_tok), prompt::Source::PromptEncoder, prompt::Task::SEG};
    out.seg.prompts = {VarD::constant(apg_tok), prompt::Source::APG, prompt::Task::SEG};
    MatrixD pe_hr(3, 2), apg_hr(3, 2);
    pe_hr << 1, 0, 0, 2, 3, 0;
    apg_hr << 0.75, s, 2 * s, 2 * 0.75, 3 * 0.75, 3 * s;
    tgt.pe_hr = {VarD::constant(pe_hr), prompt::Source::PromptEncoder, prompt::Task::HR};
    out.hr.prompts = {VarD::constant(apg_hr), prompt::Source::APG, prompt::Task::HR};

    net::LossParts<double> parts;
    const double warm = net::total_loss(out, tgt, 0, 10, &parts).scalar();
    CHECK(parts.dice == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(parts.mse == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(parts.align_seg == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(parts.align_hr == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(warm == doctest::Approx(0.8).epsilon(1e-5));

    net::LossParts<double> parts_after;
    const double after = net::total_loss(out, tgt, 10, 10, &parts_after).scalar();
    CHECK(after == doctest::Approx(0.3).epsilon(1e-5));
    CHECK(parts_after.align_seg == 0.0);  // exactly zero, not merely small
    CHECK(parts_after.align_hr == 0.0);
    CHECK(net::LossWeights::at_epoch(9, 10).align == 1.0);
    CHECK(net::LossWeights::at_epoch(10, 10).align == 0.0);
}

TEST_CASE("end-to-end gradients match finite differences for every parameter group") {
    // The APGs consume stop-gradient copies of the image embedding and the
    // decoder mask token, so raw finite differences of the full graph include
    // derivative paths the analytic gradient cuts on purpose. Each group is
    // therefore validated on a pass where no active stop-gradient edge
    // depends on it: non-APG groups with external prompts and the alignment
    // term off, APG-owned groups on the APG path (their stop-gradient inputs
    // do not depend on them).
    net::Network<double> model(net::EncoderConfig::tiny(), 77);
    Rng rng(8);
    const MatrixD image = random_image(32, rng);
    const net::Targets<double> tgt = tiny_targets(model, 4.0);
    const double step = 1e-5, tol = 1e-3;

    auto probe = [&](const ad::Parameter<double>& p, int epoch, int warmup, bool use_apg,
                     int& checked) {
        std::vector<Eigen::Index> idx = {0};  // first and one mid-tensor entry
        if (p.value.size() > 2) idx.push_back(p.value.size() / 2);
        auto& value = const_cast<MatrixD&>(p.value);
        for (Eigen::Index i : idx) {
            const double saved = value.data()[i];
            value.data()[i] = saved + step;
            const double fp = loss_value(model, image, tgt, epoch, warmup, use_apg);
            value.data()[i] = saved - step;
            const double fm = loss_value(model, image, tgt, epoch, warmup, use_apg);
            value.data()[i] = saved;
            const double fd = (fp - fm) / (2.0 * step);
            const double analytic = p.grad.data()[i];
            const double err =
                std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
            INFO(p.name << "[" << i << "]: analytic " << analytic << " vs fd " << fd);
            CHECK(err <= tol);
            ++checked;
        }
    };
    auto is_apg_param = [](const std::string& name) {
        return name.rfind("apg_", 0) == 0;
    };

    int checked = 0;
    {
        // Pass 1: external prompts, alignment weight 0 -> the APGs never run.
        const int epoch = 5, warmup = 5;
        model.store().zero_grad();
        ad::Binding<double> bind;
        net::ModelOutput<double> out =
            net::model_forward(model, bind, image, &tgt.pe_seg, &tgt.pe_hr);
        ad::backward(net::total_loss(out, tgt, epoch, warmup));
        bind.harvest();
        for (const auto& p : model.store().items()) {
            if (is_apg_param(p->name)) {
                CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);  // not in the graph
                continue;
            }
            probe(*p, epoch, warmup, false, checked);
        }
    }
    {
        // Pass 2: APG prompts with the alignment term active.
        const int epoch = 0, warmup = 5;
        model.store().zero_grad();
        ad::Binding<double> bind;
        net::ModelOutput<double> out = net::model_forward(model, bind, image);
        ad::backward(net::total_loss(out, tgt, epoch, warmup));
        bind.harvest();
        for (const auto& p : model.store().items())
            if (is_apg_param(p->name)) probe(*p, epoch, warmup, true, checked);
    }
    CHECK(checked > 200);  // the probes covered the whole parameter registry
}
