// Tests for the evaluation metrics and the training harness: exact affine
// Pearson correlations, learning-rate schedule endpoints, a hand-computed
// Adam oracle, bitwise checkpoint round trips, and a tiny end-to-end run
// that must be deterministic and resumable without drift.
#include <doctest.h>

#include "autosame/dataset.hpp"
#include "autosame/metrics.hpp"
#include "autosame/phantom.hpp"
#include "autosame/train.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace autosame;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("autosame_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::vector<std::string> csv_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

// A phantom that fits comfortably in a 64 px frame at 2 mm/px.
phantom::PhantomParams small_phantom(std::uint64_t seed) {
    phantom::PhantomParams p;
    p.image_size = 64;
    p.spacing_mm = 2.0;
    p.seed = seed;
    p.tilt_deg = (seed % 2 == 0) ? 6.0 : -4.0;
    return p;
}

train::TrainConfig tiny_run_config(const std::string& data_root, const std::string& out_dir) {
    train::TrainConfig cfg;
    cfg.arch = "tiny";
    cfg.input_size = 32;
    cfg.batch_size = 2;
    cfg.epochs = 3;
    cfg.warmup_epochs = 1;
    cfg.peak_lr = 1e-3;
    cfg.seed = 7;
    cfg.data_root = data_root;
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("dice coefficient handles agreement, disjointness, and empty masks") {
    MaskGrid a = MaskGrid::Zero(8, 8), b = MaskGrid::Zero(8, 8);
    a.block(0, 0, 4, 8).setOnes();
    b.block(0, 0, 4, 8).setOnes();
    CHECK(metrics::dice_coefficient(a, b) == doctest::Approx(1.0));

    b.setZero();
    b.block(4, 0, 4, 8).setOnes();
    CHECK(metrics::dice_coefficient(a, b) == doctest::Approx(0.0));

    // |A|=32, |B|=16, |A∩B|=16 -> 2*16/48.
    b.setZero();
    b.block(0, 0, 2, 8).setOnes();
    CHECK(metrics::dice_coefficient(a, b) == doctest::Approx(2.0 * 16 / 48));

    CHECK(metrics::dice_coefficient(MaskGrid::Zero(4, 4), MaskGrid::Zero(4, 4)) == 1.0);
    CHECK_THROWS_AS(metrics::dice_coefficient(a, MaskGrid::Zero(4, 4)), ShapeMismatch);
}

TEST_CASE("pearson correlation is exactly +/-1 on affine relations") {
    std::vector<double> x = {1.0, 2.5, 4.0, 7.0, 11.0};
    std::vector<double> up, down;
    for (double v : x) {
        up.push_back(2.0 * v + 1.0);
        down.push_back(-3.0 * v + 5.0);
    }
    CHECK(metrics::pearson(x, up) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(metrics::pearson(x, down) == doctest::Approx(-1.0).epsilon(1e-12));

    // Degenerate inputs yield NaN rather than a misleading number.
    std::vector<double> flat(x.size(), 3.0);
    CHECK(std::isnan(metrics::pearson(x, flat)));
    CHECK(std::isnan(metrics::pearson({1.0}, {2.0})));
    CHECK_THROWS_AS(metrics::pearson(x, {1.0, 2.0}), ShapeMismatch);
}

TEST_CASE("indicator correlations cover all five measurements") {
    std::vector<geometry::LVIndicators> pred, truth;
    for (int i = 0; i < 6; ++i) {
        const double v = i;
        truth.push_back({80.0 + v, 60.0 + 2 * v, 120.0 + 3 * v, 50.0 + v, 55.0 + v});
        // Predictions are affine in the truth: every correlation is exactly 1,
        // except EF which we flip to -1.
        pred.push_back({2 * (80.0 + v) + 1, 60.0 + 2 * v, 0.5 * (120.0 + 3 * v), 50.0 + v,
                        -(55.0 + v)});
    }
    const metrics::IndicatorCorr c = metrics::indicator_correlations(pred, truth);
    CHECK(c.edl == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.esl == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.edv == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.esv == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.ef == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(c.mean_defined() == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule hits its endpoints exactly") {
    train::TrainConfig cfg;
    cfg.epochs = 60;
    cfg.warmup_epochs = 10;
    cfg.peak_lr = 2e-4;
    const long spe = 7;
    const long warm = cfg.warmup_epochs * spe, total = cfg.epochs * spe;

    // First step is a small fraction of the peak; the last warm-up step is the
    // peak itself (the ramp reaches 0.0002 at the end of the tenth epoch).
    CHECK(train::lr_schedule(0, spe, cfg) == doctest::Approx(cfg.peak_lr / warm));
    CHECK(train::lr_schedule(warm - 1, spe, cfg) == cfg.peak_lr);
    // Cosine tail decays to exactly zero on the final step.
    CHECK(train::lr_schedule(total - 1, spe, cfg) == 0.0);
    // No jump at the warm-up/cosine boundary.
    const double before = train::lr_schedule(warm - 1, spe, cfg);
    const double after = train::lr_schedule(warm, spe, cfg);
    CHECK(std::abs(before - after) < 0.01 * cfg.peak_lr);
    // Nonnegative and bounded by the peak everywhere; nonincreasing after warm-up.
    double prev = cfg.peak_lr;
    for (long s = 0; s < total; ++s) {
        const double lr = train::lr_schedule(s, spe, cfg);
        CHECK(lr >= 0.0);
        CHECK(lr <= cfg.peak_lr);
        if (s >= warm) {
            CHECK(lr <= prev);
            prev = lr;
        }
    }
    CHECK_THROWS_AS(train::lr_schedule(-1, spe, cfg), InvalidArgument);
    CHECK_THROWS_AS(train::lr_schedule(total, spe, cfg), InvalidArgument);
}

TEST_CASE("adam reproduces a hand-computed update and skips frozen tensors") {
    ad::ParamStore<double> store;
    MatrixD w0(1, 2);
    w0 << 1.0, 2.0;
    auto& w = store.add("w", w0);
    auto& frozen = store.add("frozen", MatrixD::Constant(1, 1, 5.0), false);

    train::Adam opt(store);
    const double lr = 0.1;
    MatrixD g(1, 2);
    g << 0.5, -1.0;

    // Reference: two scalar Adam steps per coefficient.
    double ref[2] = {1.0, 2.0};
    double m[2] = {0, 0}, v[2] = {0, 0};
    for (int t = 1; t <= 2; ++t) {
        const double bc1 = 1.0 - std::pow(opt.beta1, t), bc2 = 1.0 - std::pow(opt.beta2, t);
        for (int j = 0; j < 2; ++j) {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g(0, j);
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g(0, j) * g(0, j);
            ref[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt.eps);
        }
    }
    for (int t = 0; t < 2; ++t) {
        w.grad = g;
        frozen.grad.setConstant(9.0);
        opt.step(store, lr);
    }
    CHECK(std::abs(w.value(0, 0) - ref[0]) < 1e-15);
    CHECK(std::abs(w.value(0, 1) - ref[1]) < 1e-15);
    CHECK(frozen.value(0, 0) == 5.0);
    CHECK(opt.t == 2);
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
    TempDir tmp;
    train::Checkpoint ckpt;
    ckpt.cfg = train::TrainConfig::desk_preset();
    ckpt.cfg.seed = 42;
    ckpt.epochs_completed = 12;
    ckpt.global_step = 345;
    Rng rng(3);
    for (int i = 0; i < 3; ++i) {
        MatrixD mat(2 + i, 3);
        for (Eigen::Index k = 0; k < mat.size(); ++k) mat(k) = rng.normal();
        ckpt.params.emplace_back("p" + std::to_string(i), mat);
        ckpt.adam_m.push_back(MatrixD::Constant(2 + i, 3, 0.25 * i));
        ckpt.adam_v.push_back(MatrixD::Constant(2 + i, 3, 0.5 + i));
    }
    ckpt.adam_t = 345;

    const std::string path = tmp.str() + "/ck.bin";
    train::save_checkpoint(ckpt, path);
    const train::Checkpoint back = train::load_checkpoint(path);
    CHECK(back.cfg.arch == ckpt.cfg.arch);
    CHECK(back.cfg.input_size == ckpt.cfg.input_size);
    CHECK(back.cfg.peak_lr == ckpt.cfg.peak_lr);
    CHECK(back.cfg.seed == 42);
    CHECK(back.epochs_completed == 12);
    CHECK(back.global_step == 345);
    CHECK(back.adam_t == 345);
    REQUIRE(back.params.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back.params[i].first == ckpt.params[i].first);
        CHECK((back.params[i].second - ckpt.params[i].second).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.adam_m[i] - ckpt.adam_m[i]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.adam_v[i] - ckpt.adam_v[i]).cwiseAbs().maxCoeff() == 0.0);
    }

    // Truncation and bad magic are detected, not silently accepted.
    const std::string whole = slurp(path);
    std::ofstream(tmp.str() + "/trunc.bin", std::ios::binary)
        .write(whole.data(), static_cast<std::streamsize>(whole.size() / 2));
    CHECK_THROWS_AS(train::load_checkpoint(tmp.str() + "/trunc.bin"), DataError);
    std::ofstream(tmp.str() + "/junk.bin", std::ios::binary).write("NOTACKPT", 8);
    CHECK_THROWS_AS(train::load_checkpoint(tmp.str() + "/junk.bin"), DataError);
    CHECK_THROWS_AS(train::load_checkpoint(tmp.str() + "/missing.bin"), DataError);
}

TEST_CASE("restore_params validates tensor names and shapes") {
    train::TrainConfig cfg;
    cfg.arch = "tiny";
    cfg.input_size = 32;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    net::Network<double> model = train::build_network(cfg);

    train::Checkpoint ckpt;
    ckpt.cfg = cfg;
    for (const auto& p : model.store().items()) ckpt.params.emplace_back(p->name, p->value);
    ckpt.adam_t = 0;

    SUBCASE("wrong count") {
        ckpt.params.pop_back();
        CHECK_THROWS_AS(train::restore_params(model, ckpt), DataError);
    }
    SUBCASE("unknown name") {
        ckpt.params.back().first = "nonsense";
        CHECK_THROWS_AS(train::restore_params(model, ckpt), DataError);
    }
    SUBCASE("wrong shape") {
        ckpt.params.back().second = MatrixD::Zero(1, 1);
        CHECK_THROWS_AS(train::restore_params(model, ckpt), DataError);
    }
    SUBCASE("intact checkpoint restores cleanly") {
        model.store().items().front()->value.array() += 1.0;
        train::restore_params(model, ckpt);
        CHECK((model.store().items().front()->value - ckpt.params.front().second)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("train config validation and architecture presets") {
    train::TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());  // paper-scale defaults are valid
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.input_size == 256);
    CHECK(cfg.peak_lr == 2e-4);
    CHECK(cfg.epochs == 60);
    CHECK(cfg.warmup_epochs == 10);

    SUBCASE("invariants") {
        train::TrainConfig bad = cfg;
        bad.batch_size = 0;
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
        bad = cfg;
        bad.warmup_epochs = bad.epochs;
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
        bad = cfg;
        bad.peak_lr = 0.0;
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
        bad = cfg;
        bad.arch = "huge";
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
        bad = cfg;
        bad.arch = "small";
        bad.input_size = 60;  // not divisible by the 8 px patch
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    }
    SUBCASE("desk preset is a valid small run") {
        const train::TrainConfig desk = train::TrainConfig::desk_preset();
        CHECK_NOTHROW(desk.validate());
        CHECK(desk.arch == "small");
        CHECK(desk.input_size == 96);
        CHECK(desk.batch_size == 2);
        CHECK(desk.warmup_epochs == 3);
        const net::EncoderConfig enc = desk.encoder_config();
        CHECK(enc.patch_size == 8);
        CHECK(enc.embed_dim == 32);
        CHECK(enc.grid() == 12);
        CHECK(enc.pos_grid == 12);
    }
    SUBCASE("paper preset keeps the published geometry") {
        const net::EncoderConfig enc = cfg.encoder_config();
        CHECK(enc.input_size == 256);
        CHECK(enc.patch_size == 16);
        CHECK(enc.grid() == 16);
    }
}

TEST_CASE("three-epoch run is deterministic, logs align-free epochs, and resumes bitwise") {
    TempDir data, out_a, out_b, out_resume;
    for (std::uint64_t seed : {11ull, 12ull})
        dataset::save_study(phantom::generate_phantom_study(small_phantom(seed)).quad,
                            data.str());

    train::TrainConfig cfg = tiny_run_config(data.str(), out_a.str());
    const train::TrainResult res_a = train::train(cfg);
    CHECK(res_a.epochs_run == 3);
    CHECK(fs::exists(res_a.final_checkpoint));
    CHECK(fs::exists(out_a.path / "ckpt_epoch_000.bin"));
    CHECK(fs::exists(out_a.path / "ckpt_epoch_002.bin"));
    const std::string csv_a = slurp(res_a.loss_csv);

    SUBCASE("same seed reproduces the loss curve byte for byte") {
        cfg.out_dir = out_b.str();
        const train::TrainResult res_b = train::train(cfg);
        CHECK(slurp(res_b.loss_csv) == csv_a);
        CHECK(slurp(res_b.final_checkpoint) == slurp(res_a.final_checkpoint));
    }

    SUBCASE("align terms are logged as exactly zero after warm-up") {
        const auto lines = csv_lines(csv_a);
        REQUIRE(lines.size() == 4);  // header + 3 epochs
        CHECK(lines[0] ==
              "epoch,lr,sigma_px,dice,mse,align_seg,align_hr,total");
        // warm-up epoch 0 carries a live alignment term...
        {
            std::istringstream row(lines[1]);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(row, field, ',')) fields.push_back(field);
            REQUIRE(fields.size() == 8);
            CHECK(std::stod(fields[5]) != 0.0);
        }
        // ...and every later epoch logs the align columns as exactly "0".
        for (std::size_t i = 2; i < lines.size(); ++i) {
            std::istringstream row(lines[i]);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(row, field, ',')) fields.push_back(field);
            REQUIRE(fields.size() == 8);
            CHECK(fields[5] == "0");
            CHECK(fields[6] == "0");
        }
    }

    SUBCASE("resuming after the first epoch replays the exact trajectory") {
        cfg.out_dir = out_resume.str();
        const train::TrainResult res_r =
            train::train(cfg, (out_a.path / "ckpt_epoch_000.bin").string());
        CHECK(res_r.epochs_run == 2);
        const auto lines_a = csv_lines(csv_a);
        const auto lines_r = csv_lines(slurp(res_r.loss_csv));
        REQUIRE(lines_a.size() == 4);
        REQUIRE(lines_r.size() == 3);
        CHECK(lines_r[1] == lines_a[2]);
        CHECK(lines_r[2] == lines_a[3]);
        CHECK(slurp(res_r.final_checkpoint) == slurp(res_a.final_checkpoint));
    }

    SUBCASE("resume rejects a mismatched configuration") {
        cfg.out_dir = out_resume.str();
        cfg.peak_lr = 5e-4;
        CHECK_THROWS_AS(train::train(cfg, (out_a.path / "ckpt_epoch_000.bin").string()),
                        DataError);
    }
}

TEST_CASE("fifty adam steps drive the joint loss down on one memorized item") {
    const phantom::PhantomStudy study = phantom::generate_phantom_study(small_phantom(21));
    const geometry::StudyItem& item = study.quad.at(geometry::View::A4C, geometry::Phase::ED);

    const int in = 32;
    const int src = static_cast<int>(item.image.rows());
    const Eigen::Matrix3d to_input = phantom::scale_matrix(src, src, in, in);
    const MatrixF img = phantom::warp_bilinear(item.image, to_input, in, in);
    MatrixD image(1, in * in);
    for (int r = 0; r < in; ++r)
        for (int c = 0; c < in; ++c) image(0, r * in + c) = img(r, c);

    geometry::Landmarks lm;
    lm.apex = phantom::apply_homography(to_input, item.landmarks.apex);
    lm.mitral_left = phantom::apply_homography(to_input, item.landmarks.mitral_left);
    lm.mitral_right = phantom::apply_homography(to_input, item.landmarks.mitral_right);

    train::TrainConfig cfg;
    cfg.arch = "tiny";
    cfg.input_size = in;
    cfg.seed = 5;
    net::Network<double> model = train::build_network(cfg);

    net::Targets<double> tgt;
    tgt.gt_mask = phantom::warp_nearest(item.mask.grid, to_input, in, in);
    tgt.heatmaps = heatmap::make_heatmap_set<double>(lm, 2.5, in, in);
    geometry::ViewMask vm{tgt.gt_mask, item.mask.view, item.mask.phase, item.mask.spacing_mm};
    tgt.pe_seg = model.prompt_encoder().encode_box(vm);
    tgt.pe_hr = model.prompt_encoder().encode_points(lm, in, in);

    train::Adam opt(model.store());
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
        model.store().zero_grad();
        ad::Binding<double> bind;
        const auto out = net::model_forward(model, bind, image);
        net::LossParts<double> parts;
        ad::Var<double> loss = net::total_loss(out, tgt, 0, 1, &parts);
        ad::backward(loss);
        bind.harvest();
        opt.step(model.store(), 3e-3);
        if (step == 0) first = parts.total;
        last = parts.total;
        REQUIRE(std::isfinite(parts.total));
    }
    CHECK(last < 0.5 * first);
}

TEST_CASE("evaluation is pure and its report is well formed") {
    const phantom::PhantomStudy ph = phantom::generate_phantom_study(small_phantom(31));
    std::vector<geometry::StudyQuad> studies = {ph.quad};

    train::TrainConfig cfg;
    cfg.arch = "tiny";
    cfg.input_size = 32;
    cfg.seed = 9;
    net::Network<double> model = train::build_network(cfg);

    const train::EvalReport r1 = train::evaluate(model, studies, cfg.input_size);
    const train::EvalReport r2 = train::evaluate(model, studies, cfg.input_size);
    CHECK(r1.to_csv() == r2.to_csv());
    CHECK(r1.dice == r2.dice);
    CHECK(r1.pck == r2.pck);

    CHECK(r1.dice >= 0.0);
    CHECK(r1.dice <= 1.0);
    CHECK(r1.pck >= 0.0);
    CHECK(r1.pck <= 1.0);
    REQUIRE(r1.rows.size() == 1);
    CHECK(r1.rows[0].id == ph.quad.id);
    // Truth side comes from the measurement engine on the reference masks.
    CHECK(r1.rows[0].truth.edv_ml > r1.rows[0].truth.esv_ml);
    // One study can never support a correlation: every Pearson column is NaN
    // and each is flagged in the warnings.
    CHECK(std::isnan(r1.corr.ef));
    CHECK(r1.warnings.size() >= 5);
    // An untrained network may or may not produce a measurable mask; either
    // way the bookkeeping must be consistent.
    CHECK((r1.rows[0].measured ? 0 : 1) == r1.measurement_failures);
    const auto lines = csv_lines(r1.to_csv());
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].substr(0, 9) == "study_id,");
}

TEST_CASE("measurement CSV has one labelled row per study") {
    std::vector<geometry::StudyQuad> studies;
    for (std::uint64_t seed : {41ull, 42ull})
        studies.push_back(phantom::generate_phantom_study(small_phantom(seed)).quad);
    const std::string csv = train::measure_csv(studies);
    const auto lines = csv_lines(csv);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "study_id,EDL,ESL,EDV,ESV,EF");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::istringstream row(lines[i]);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        REQUIRE(fields.size() == 6);
        CHECK(fields[0] == studies[i - 1].id);
        const double edv = std::stod(fields[3]), esv = std::stod(fields[4]);
        const double ef = std::stod(fields[5]);
        CHECK(edv > esv);
        CHECK(ef == doctest::Approx(100.0 * (edv - esv) / edv));
    }
}
