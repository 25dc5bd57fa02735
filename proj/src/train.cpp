#include "autosame/train.hpp"

#include "autosame/heatmap.hpp"
#include "autosame/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace autosame::train {

namespace fs = std::filesystem;
using geometry::Phase;
using geometry::View;

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566666cULL;  // "shuffl"
constexpr std::uint64_t kAugmentTag = 0x617567ULL;        // "aug"

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    ASAME_CHECK(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    ASAME_CHECK(epochs >= 1, "TrainConfig: epochs must be >= 1");
    ASAME_CHECK(warmup_epochs >= 0 && warmup_epochs < epochs,
                "TrainConfig: need 0 <= warmup_epochs < epochs");
    ASAME_CHECK(peak_lr > 0.0, "TrainConfig: peak_lr must be positive");
    ASAME_CHECK(checkpoint_every >= 1, "TrainConfig: checkpoint_every must be >= 1");
    encoder_config();  // throws on an invalid arch/input_size combination
}

net::EncoderConfig TrainConfig::encoder_config() const {
    net::EncoderConfig c;
    if (arch == "paper") {
        c = net::EncoderConfig::paper_scale();
    } else if (arch == "tiny") {
        c = net::EncoderConfig::tiny();
    } else if (arch == "small") {
        c.patch_size = 8;
        c.embed_dim = 32;
        c.depth = 2;
        c.adapter_dim = 8;
        c.cnn_channels = {8, 16};
        c.decoder_dim = 32;
        c.fcba_levels = 2;
        c.mlp_ratio = 2;
    } else {
        throw InvalidArgument("TrainConfig: unknown arch '" + arch +
                              "' (expected paper, small, or tiny)");
    }
    c.input_size = input_size;
    ASAME_CHECK(input_size % c.patch_size == 0,
                "TrainConfig: input_size must be divisible by the patch size");
    c.pos_grid = c.grid();
    c.validate();
    return c;
}

TrainConfig TrainConfig::desk_preset() {
    TrainConfig cfg;
    cfg.arch = "small";
    cfg.input_size = 96;
    cfg.batch_size = 2;
    cfg.epochs = 30;
    cfg.warmup_epochs = 3;
    cfg.peak_lr = 2e-3;
    return cfg;
}

double lr_schedule(long step, long steps_per_epoch, const TrainConfig& cfg) {
    ASAME_CHECK(steps_per_epoch >= 1, "lr_schedule: steps_per_epoch must be >= 1");
    const long total = static_cast<long>(cfg.epochs) * steps_per_epoch;
    const long warm = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
    ASAME_CHECK(step >= 0 && step < total, "lr_schedule: step outside the run");
    if (step < warm)
        return cfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double tau = static_cast<double>(step - warm + 1) / static_cast<double>(total - warm);
    return 0.5 * cfg.peak_lr * (1.0 + std::cos(std::numbers::pi_v<double> * tau));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Adam::Adam(const ad::ParamStore<double>& store) {
    m.reserve(store.items().size());
    v.reserve(store.items().size());
    for (const auto& p : store.items()) {
        m.push_back(MatrixD::Zero(p->value.rows(), p->value.cols()));
        v.push_back(MatrixD::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(ad::ParamStore<double>& store, double lr) {
    ASAME_CHECK(m.size() == store.items().size(), "Adam: parameter registry changed size");
    ASAME_CHECK(lr >= 0.0, "Adam: negative learning rate");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < m.size(); ++i) {
        ad::Parameter<double>& p = *store.items()[i];
        if (!p.trainable) continue;
        m[i] = beta1 * m[i] + (1.0 - beta1) * p.grad;
        v[i] = beta2 * v[i] + (1.0 - beta2) * p.grad.cwiseAbs2();
        p.value.array() -=
            lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (native-endian binary blob)
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'S', 'A', 'M', 'E', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file " + path);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const std::string& path) {
    const auto n = read_pod<std::uint32_t>(is, path);
    if (n > (1u << 20)) throw DataError("checkpoint: corrupt string length in " + path);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated file " + path);
    return s;
}

void write_matrix(std::ostream& os, const MatrixD& mat) {
    write_pod<std::int64_t>(os, mat.rows());
    write_pod<std::int64_t>(os, mat.cols());
    os.write(reinterpret_cast<const char*>(mat.data()),
             static_cast<std::streamsize>(sizeof(double) * mat.size()));
}

MatrixD read_matrix(std::istream& is, const std::string& path) {
    const auto rows = read_pod<std::int64_t>(is, path);
    const auto cols = read_pod<std::int64_t>(is, path);
    if (rows < 0 || cols < 0 || rows * cols > (1ll << 28))
        throw DataError("checkpoint: corrupt tensor shape in " + path);
    MatrixD mat(rows, cols);
    is.read(reinterpret_cast<char*>(mat.data()),
            static_cast<std::streamsize>(sizeof(double) * mat.size()));
    if (!is) throw DataError("checkpoint: truncated file " + path);
    return mat;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    ASAME_CHECK(ckpt.adam_m.size() == ckpt.params.size() &&
                    ckpt.adam_v.size() == ckpt.params.size(),
                "save_checkpoint: optimizer state does not match the parameter list");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot write " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kVersion);
    write_pod<std::int32_t>(os, ckpt.cfg.batch_size);
    write_pod<std::int32_t>(os, ckpt.cfg.input_size);
    write_pod(os, ckpt.cfg.peak_lr);
    write_pod<std::int32_t>(os, ckpt.cfg.epochs);
    write_pod<std::int32_t>(os, ckpt.cfg.warmup_epochs);
    write_pod(os, ckpt.cfg.loss_weights.dice);
    write_pod(os, ckpt.cfg.loss_weights.mse);
    write_pod(os, ckpt.cfg.seed);
    write_string(os, ckpt.cfg.arch);
    write_pod<std::uint8_t>(os, ckpt.cfg.augment ? 1 : 0);
    write_pod<std::int32_t>(os, ckpt.cfg.checkpoint_every);
    write_pod<std::int32_t>(os, ckpt.epochs_completed);
    write_pod<std::int64_t>(os, ckpt.global_step);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, value] : ckpt.params) {
        write_string(os, name);
        write_matrix(os, value);
    }
    write_pod<std::int64_t>(os, ckpt.adam_t);
    for (const auto& mat : ckpt.adam_m) write_matrix(os, mat);
    for (const auto& mat : ckpt.adam_v) write_matrix(os, mat);
    os.write("END!", 4);
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot read " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: " + path + " is not a checkpoint file");
    if (read_pod<std::uint32_t>(is, path) != kVersion)
        throw DataError("checkpoint: unsupported version in " + path);
    Checkpoint ckpt;
    ckpt.cfg.batch_size = read_pod<std::int32_t>(is, path);
    ckpt.cfg.input_size = read_pod<std::int32_t>(is, path);
    ckpt.cfg.peak_lr = read_pod<double>(is, path);
    ckpt.cfg.epochs = read_pod<std::int32_t>(is, path);
    ckpt.cfg.warmup_epochs = read_pod<std::int32_t>(is, path);
    ckpt.cfg.loss_weights.dice = read_pod<double>(is, path);
    ckpt.cfg.loss_weights.mse = read_pod<double>(is, path);
    ckpt.cfg.seed = read_pod<std::uint64_t>(is, path);
    ckpt.cfg.arch = read_string(is, path);
    ckpt.cfg.augment = read_pod<std::uint8_t>(is, path) != 0;
    ckpt.cfg.checkpoint_every = read_pod<std::int32_t>(is, path);
    ckpt.epochs_completed = read_pod<std::int32_t>(is, path);
    ckpt.global_step = read_pod<std::int64_t>(is, path);
    const auto n = read_pod<std::uint32_t>(is, path);
    if (n > (1u << 20)) throw DataError("checkpoint: corrupt parameter count in " + path);
    ckpt.params.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(is, path);
        ckpt.params.emplace_back(std::move(name), read_matrix(is, path));
    }
    ckpt.adam_t = read_pod<std::int64_t>(is, path);
    ckpt.adam_m.reserve(n);
    ckpt.adam_v.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) ckpt.adam_m.push_back(read_matrix(is, path));
    for (std::uint32_t i = 0; i < n; ++i) ckpt.adam_v.push_back(read_matrix(is, path));
    char tail[4];
    is.read(tail, 4);
    if (!is || std::memcmp(tail, "END!", 4) != 0)
        throw DataError("checkpoint: missing end marker in " + path);
    return ckpt;
}

net::Network<double> build_network(const TrainConfig& cfg) {
    return net::Network<double>(cfg.encoder_config(), cfg.seed);
}

void restore_params(net::Network<double>& model, const Checkpoint& ckpt) {
    auto& store = model.store();
    if (ckpt.params.size() != store.items().size())
        throw DataError("restore_params: checkpoint has " + std::to_string(ckpt.params.size()) +
                        " tensors, model expects " + std::to_string(store.items().size()));
    for (const auto& [name, value] : ckpt.params) {
        ad::Parameter<double>* p = store.find(name);
        if (!p) throw DataError("restore_params: model has no parameter named " + name);
        if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
            throw DataError("restore_params: shape mismatch for " + name);
        p->value = value;
    }
}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

std::vector<TrainItem> flatten_items(const std::vector<geometry::StudyQuad>& studies) {
    std::vector<TrainItem> items;
    items.reserve(studies.size() * 4);
    for (const auto& study : studies)
        for (View v : {View::A4C, View::A2C})
            for (Phase p : {Phase::ED, Phase::ES}) {
                const geometry::StudyItem& item = study.at(v, p);
                if (item.image.size() == 0)
                    throw DataError("train: study " + study.id + " lacks an image for (" +
                                    geometry::to_string(v) + ", " + geometry::to_string(p) + ")");
                items.push_back({study.id, item});
            }
    return items;
}

namespace {

/// One network-ready example at the input resolution.
struct NetInput {
    MatrixD image;  // (1, input_size^2), row-major spatial flattening
    MaskGrid mask;
    geometry::Landmarks landmarks;
};

MatrixD flatten_image(const MatrixF& img) {
    const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
    MatrixD out(1, static_cast<Eigen::Index>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out(0, static_cast<Eigen::Index>(r) * w + c) = img(r, c);
    return out;
}

/// Warps one item straight to the input resolution: optional augmentation
/// composed with the align-corner resize so the image is interpolated once.
/// Returns false when no draw keeps the landmarks in frame (sample skipped)
/// or the warped mask comes out empty.
bool prepare_item(const TrainItem& ti, int input_size, bool do_augment, Rng& rng, NetInput& out) {
    const int src = static_cast<int>(ti.item.image.rows());
    const Eigen::Matrix3d resize = phantom::scale_matrix(src, src, input_size, input_size);
    const phantom::AugmentConfig aug_cfg;
    const int attempts = do_augment ? aug_cfg.max_retries : 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        Eigen::Matrix3d total = resize;
        if (do_augment) {
            const phantom::TransformDraw draw = phantom::sample_transform(rng, aug_cfg, src);
            total = resize * phantom::transform_matrix(draw, src, src);
        }
        geometry::Landmarks lm;
        lm.apex = phantom::apply_homography(total, ti.item.landmarks.apex);
        lm.mitral_left = phantom::apply_homography(total, ti.item.landmarks.mitral_left);
        lm.mitral_right = phantom::apply_homography(total, ti.item.landmarks.mitral_right);
        if (!phantom::landmarks_in_frame(lm, input_size, input_size)) continue;
        MaskGrid mask = phantom::warp_nearest(ti.item.mask.grid, total, input_size, input_size);
        if (mask.cast<int>().sum() == 0) continue;
        out.image = flatten_image(phantom::warp_bilinear(ti.item.image, total, input_size,
                                                         input_size));
        out.mask = std::move(mask);
        out.landmarks = lm;
        return true;
    }
    return false;
}

net::Targets<double> make_targets(const net::Network<double>& model, const NetInput& in,
                                  View v, Phase p, double sigma_px, int input_size) {
    net::Targets<double> tgt;
    tgt.gt_mask = in.mask;
    tgt.heatmaps = heatmap::make_heatmap_set<double>(in.landmarks, sigma_px, input_size,
                                                     input_size);
    geometry::ViewMask vm;
    vm.grid = in.mask;
    vm.view = v;
    vm.phase = p;
    tgt.pe_seg = model.prompt_encoder().encode_box(vm);
    tgt.pe_hr = model.prompt_encoder().encode_points(in.landmarks, input_size, input_size);
    return tgt;
}

std::string checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.bin", epoch);
    return buf;
}

Checkpoint snapshot(const TrainConfig& cfg, const net::Network<double>& model, const Adam& opt,
                    int epochs_completed, long global_step) {
    Checkpoint ckpt;
    ckpt.cfg = cfg;
    ckpt.cfg.data_root.clear();  // paths are runtime locations, not state
    ckpt.cfg.out_dir.clear();
    ckpt.cfg.split_file.clear();
    ckpt.epochs_completed = epochs_completed;
    ckpt.global_step = global_step;
    for (const auto& p : model.store().items()) ckpt.params.emplace_back(p->name, p->value);
    ckpt.adam_t = opt.t;
    ckpt.adam_m = opt.m;
    ckpt.adam_v = opt.v;
    return ckpt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const std::string& resume_path) {
    cfg.validate();
    ASAME_CHECK(!cfg.data_root.empty(), "train: data_root is required");
    ASAME_CHECK(!cfg.out_dir.empty(), "train: out_dir is required");
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw DataError("train: cannot create " + cfg.out_dir + ": " + ec.message());

    const std::vector<std::string> ids = cfg.split_file.empty()
                                             ? dataset::list_study_ids(cfg.data_root)
                                             : dataset::read_id_list(cfg.split_file);
    ASAME_CHECK(!ids.empty(), "train: no studies selected");
    const auto studies = dataset::load_studies(cfg.data_root, ids);
    const auto items = flatten_items(studies);
    const long spe = (static_cast<long>(items.size()) + cfg.batch_size - 1) / cfg.batch_size;

    net::Network<double> model = build_network(cfg);
    Adam opt(model.store());
    int start_epoch = 0;
    long global_step = 0;
    if (!resume_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(resume_path);
        if (ckpt.cfg.arch != cfg.arch || ckpt.cfg.input_size != cfg.input_size ||
            ckpt.cfg.seed != cfg.seed || ckpt.cfg.epochs != cfg.epochs ||
            ckpt.cfg.warmup_epochs != cfg.warmup_epochs ||
            ckpt.cfg.batch_size != cfg.batch_size || ckpt.cfg.peak_lr != cfg.peak_lr ||
            ckpt.cfg.augment != cfg.augment)
            throw DataError("train: resume checkpoint was produced by a different configuration");
        restore_params(model, ckpt);
        ASAME_CHECK(ckpt.adam_m.size() == opt.m.size(),
                    "train: resume optimizer state does not match the model");
        opt.t = ckpt.adam_t;
        opt.m = ckpt.adam_m;
        opt.v = ckpt.adam_v;
        start_epoch = ckpt.epochs_completed;
        global_step = ckpt.global_step;
        ASAME_CHECK(start_epoch < cfg.epochs, "train: checkpoint already completed this run");
    }

    const std::string csv_path = cfg.out_dir + "/loss.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("train: cannot write " + csv_path);
    csv << "epoch,lr,sigma_px,dice,mse,align_seg,align_hr,total\n";

    double last_mean_total = 0.0;
    std::string last_ckpt_path;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double sigma_px = heatmap::sigma_schedule(epoch, cfg.warmup_epochs, cfg.epochs) *
                                cfg.input_size / 256.0;
        std::vector<std::size_t> order(items.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng::derive(cfg.seed, kShuffleTag, static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        net::LossParts<double> sums;
        long processed = 0;
        double lr = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            model.store().zero_grad();
            int batch_n = 0;
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t pos = start; pos < stop; ++pos) {
                const TrainItem& ti = items[order[pos]];
                Rng aug_rng = Rng::derive(cfg.seed, kAugmentTag,
                                          static_cast<std::uint64_t>(epoch) * 1000003ULL + pos);
                NetInput in;
                if (!prepare_item(ti, cfg.input_size, cfg.augment, aug_rng, in)) continue;
                const net::Targets<double> tgt =
                    make_targets(model, in, ti.item.mask.view, ti.item.mask.phase, sigma_px,
                                 cfg.input_size);
                ad::Binding<double> bind;
                const auto out = net::model_forward(model, bind, in.image);
                net::LossParts<double> parts;
                ad::Var<double> loss = net::total_loss(out, tgt, epoch, cfg.warmup_epochs, &parts);
                if (!std::isfinite(parts.total)) {
                    const std::string diag_path = cfg.out_dir + "/diagnostic_nonfinite.txt";
                    std::ofstream diag(diag_path);
                    diag << "epoch " << epoch << "\nglobal_step " << global_step << "\nstudy "
                         << ti.study_id << " (" << geometry::to_string(ti.item.mask.view) << ", "
                         << geometry::to_string(ti.item.mask.phase) << ")\ndice " << parts.dice
                         << "\nmse " << parts.mse << "\nalign_seg " << parts.align_seg
                         << "\nalign_hr " << parts.align_hr << "\ntotal " << parts.total << "\n";
                    throw NumericError("train: non-finite loss at epoch " +
                                       std::to_string(epoch) + "; diagnostics in " + diag_path);
                }
                ad::backward(loss);
                bind.harvest();
                sums.dice += parts.dice;
                sums.mse += parts.mse;
                sums.align_seg += parts.align_seg;
                sums.align_hr += parts.align_hr;
                sums.total += parts.total;
                ++batch_n;
                ++processed;
            }
            if (batch_n == 0) continue;
            if (batch_n > 1) {
                const double inv = 1.0 / batch_n;
                for (const auto& p : model.store().items())
                    if (p->trainable) p->grad *= inv;
            }
            lr = lr_schedule(global_step, spe, cfg);
            opt.step(model.store(), lr);
            ++global_step;
        }
        ASAME_CHECK(processed > 0, "train: every sample of epoch " + std::to_string(epoch) +
                                       " was skipped");
        const double inv_n = 1.0 / static_cast<double>(processed);
        last_mean_total = sums.total * inv_n;
        csv << epoch << ',' << fmt(lr) << ',' << fmt(sigma_px) << ',' << fmt(sums.dice * inv_n)
            << ',' << fmt(sums.mse * inv_n) << ',' << fmt(sums.align_seg * inv_n) << ','
            << fmt(sums.align_hr * inv_n) << ',' << fmt(last_mean_total) << '\n';
        csv.flush();

        if ((epoch + 1 - start_epoch) % cfg.checkpoint_every == 0 || epoch == cfg.epochs - 1) {
            last_ckpt_path = cfg.out_dir + "/" + checkpoint_name(epoch);
            save_checkpoint(snapshot(cfg, model, opt, epoch + 1, global_step), last_ckpt_path);
        }
    }

    const std::string final_path = cfg.out_dir + "/checkpoint_final.bin";
    save_checkpoint(snapshot(cfg, model, opt, cfg.epochs, global_step), final_path);
    return {final_path, csv_path, last_mean_total, cfg.epochs - start_epoch};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

MatrixD resize_plane(const MatrixD& data, int h, int w, int oh, int ow) {
    ad::NoGradGuard guard;
    return ad::bilinear_resize(ad::Var<double>::constant(data), h, w, oh, ow).value();
}

MatrixD plane_to_grid(const MatrixD& row, int h, int w) {
    MatrixD out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out(r, c) = row(0, static_cast<Eigen::Index>(r) * w + c);
    return out;
}

}  // namespace

ItemPrediction predict_item(const net::Network<double>& model, const geometry::StudyItem& item,
                            int input_size) {
    if (item.image.size() == 0)
        throw DataError("predict_item: study item has no image");
    ad::NoGradGuard guard;
    const int src = static_cast<int>(item.image.rows());
    const Eigen::Matrix3d to_input = phantom::scale_matrix(src, src, input_size, input_size);
    const MatrixF warped = phantom::warp_bilinear(item.image, to_input, input_size, input_size);
    MatrixD image(1, static_cast<Eigen::Index>(input_size) * input_size);
    for (int r = 0; r < input_size; ++r)
        for (int c = 0; c < input_size; ++c)
            image(0, static_cast<Eigen::Index>(r) * input_size + c) = warped(r, c);

    ad::Binding<double> bind(false);
    const auto out = net::model_forward(model, bind, image);

    ItemPrediction pred;
    // Mask: logits resized to the source frame, thresholded at 0.5 of the
    // logistic (logit > 0).
    const MatrixD logits_src = plane_to_grid(
        resize_plane(out.seg.output.value(), input_size, input_size, src, src), src, src);
    pred.mask.resize(src, src);
    for (int r = 0; r < src; ++r)
        for (int c = 0; c < src; ++c) pred.mask(r, c) = logits_src(r, c) > 0.0 ? 1 : 0;

    // Landmarks: subpixel peaks at the input resolution, exact coordinate
    // scaling back to the source frame.
    const MatrixD maps = out.hr.output.value();
    pred.lm_input.apex =
        heatmap::extract_peak(MatrixD(plane_to_grid(maps.row(0), input_size, input_size)));
    pred.lm_input.mitral_left =
        heatmap::extract_peak(MatrixD(plane_to_grid(maps.row(1), input_size, input_size)));
    pred.lm_input.mitral_right =
        heatmap::extract_peak(MatrixD(plane_to_grid(maps.row(2), input_size, input_size)));
    const Eigen::Matrix3d to_src = phantom::scale_matrix(input_size, input_size, src, src);
    pred.lm_src.apex = phantom::apply_homography(to_src, pred.lm_input.apex);
    pred.lm_src.mitral_left = phantom::apply_homography(to_src, pred.lm_input.mitral_left);
    pred.lm_src.mitral_right = phantom::apply_homography(to_src, pred.lm_input.mitral_right);
    return pred;
}

EvalReport evaluate(const net::Network<double>& model,
                    const std::vector<geometry::StudyQuad>& studies, int input_size) {
    ASAME_CHECK(!studies.empty(), "evaluate: no studies given");
    ad::NoGradGuard guard;
    EvalReport report;
    std::vector<geometry::Landmarks> pred_lms, gt_lms;
    std::vector<geometry::LVIndicators> pred_ind, true_ind;
    double dice_sum = 0.0;
    long dice_count = 0;

    for (const auto& study : studies) {
        StudyEval row;
        row.id = study.id;
        row.truth = geometry::measure_study(study);
        geometry::StudyQuad pred_quad;
        pred_quad.id = study.id;
        double study_dice = 0.0;
        for (View v : {View::A4C, View::A2C})
            for (Phase p : {Phase::ED, Phase::ES}) {
                const geometry::StudyItem& item = study.at(v, p);
                const ItemPrediction ip = predict_item(model, item, input_size);
                study_dice += metrics::dice_coefficient(ip.mask, item.mask.grid);

                const int src = static_cast<int>(item.image.rows());
                const Eigen::Matrix3d to_input =
                    phantom::scale_matrix(src, src, input_size, input_size);
                geometry::Landmarks gt_in;
                gt_in.apex = phantom::apply_homography(to_input, item.landmarks.apex);
                gt_in.mitral_left =
                    phantom::apply_homography(to_input, item.landmarks.mitral_left);
                gt_in.mitral_right =
                    phantom::apply_homography(to_input, item.landmarks.mitral_right);
                pred_lms.push_back(ip.lm_input);
                gt_lms.push_back(gt_in);

                geometry::StudyItem pred_item;
                pred_item.mask = {ip.mask, v, p, item.mask.spacing_mm};
                pred_item.landmarks = ip.lm_src;
                pred_quad.items.emplace(std::make_pair(v, p), std::move(pred_item));
            }
        row.dice = study_dice / 4.0;
        dice_sum += study_dice;
        dice_count += 4;
        try {
            row.pred = geometry::measure_study(pred_quad);
            row.measured = true;
            pred_ind.push_back(row.pred);
            true_ind.push_back(row.truth);
        } catch (const Error& e) {
            ++report.measurement_failures;
            report.warnings.push_back(study.id + ": measurement failed: " + e.what());
        }
        report.rows.push_back(std::move(row));
    }

    report.dice = dice_sum / static_cast<double>(dice_count);
    report.pck = heatmap::pck(pred_lms, gt_lms, input_size);
    if (!pred_ind.empty()) report.corr = metrics::indicator_correlations(pred_ind, true_ind);
    const std::pair<const char*, double> named[] = {{"EDL", report.corr.edl},
                                                    {"ESL", report.corr.esl},
                                                    {"EDV", report.corr.edv},
                                                    {"ESV", report.corr.esv},
                                                    {"EF", report.corr.ef}};
    for (const auto& [name, r] : named)
        if (std::isnan(r))
            report.warnings.push_back(std::string("Pearson undefined for ") + name +
                                      " (zero variance or too few studies); excluded from "
                                      "aggregates");
    return report;
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "study_id,edl_pred,esl_pred,edv_pred,esv_pred,ef_pred,"
          "edl_true,esl_true,edv_true,esv_true,ef_true,dice,measured\n";
    for (const auto& row : rows) {
        os << row.id << ',';
        if (row.measured)
            os << fmt(row.pred.edl_mm) << ',' << fmt(row.pred.esl_mm) << ','
               << fmt(row.pred.edv_ml) << ',' << fmt(row.pred.esv_ml) << ','
               << fmt(row.pred.ef_percent) << ',';
        else
            os << ",,,,,";
        os << fmt(row.truth.edl_mm) << ',' << fmt(row.truth.esl_mm) << ','
           << fmt(row.truth.edv_ml) << ',' << fmt(row.truth.esv_ml) << ','
           << fmt(row.truth.ef_percent) << ',' << fmt(row.dice) << ','
           << (row.measured ? 1 : 0) << '\n';
    }
    return os.str();
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::vector<geometry::StudyQuad>& studies) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    net::Network<double> model = build_network(ckpt.cfg);
    restore_params(model, ckpt);
    return evaluate(model, studies, ckpt.cfg.input_size);
}

std::string measure_csv(const std::vector<geometry::StudyQuad>& studies, int n_disks) {
    std::ostringstream os;
    os << "study_id,EDL,ESL,EDV,ESV,EF\n";
    for (const auto& study : studies) {
        const auto ind = geometry::measure_study(study, n_disks);
        os << study.id << ',' << fmt(ind.edl_mm) << ',' << fmt(ind.esl_mm) << ','
           << fmt(ind.edv_ml) << ',' << fmt(ind.esv_ml) << ',' << fmt(ind.ef_percent) << '\n';
    }
    return os.str();
}

}  // namespace autosame::train
