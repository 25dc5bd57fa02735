// Command-line front end: phantom dataset generation, training, evaluation,
// guideline measurements, and static report rendering.
//
//   autosame phantom --out data --count 80 --seed 1
//   autosame train   --data-root data --out run --desk
//   autosame eval    --checkpoint run/checkpoint_final.bin --data-root data --out eval
//   autosame measure --data-root data
//   autosame report  --checkpoint run/checkpoint_final.bin --data-root data --out report
#include <CLI11.hpp>

#include "autosame/dataset.hpp"
#include "autosame/phantom.hpp"
#include "autosame/render.hpp"
#include "autosame/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace autosame;
namespace fs = std::filesystem;

namespace {

std::vector<geometry::StudyQuad> load_selected(const std::string& root,
                                               const std::string& split) {
    const std::vector<std::string> ids =
        split.empty() ? dataset::list_study_ids(root) : dataset::read_id_list(split);
    ASAME_CHECK(!ids.empty(), "no studies selected under " + root);
    return dataset::load_studies(root, ids);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << content;
    if (!os) throw DataError("write failed for " + path);
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string summary_text(const train::EvalReport& report) {
    std::ostringstream os;
    int measured = 0;
    for (const auto& row : report.rows) measured += row.measured ? 1 : 0;
    os << "studies:   " << report.rows.size() << " (measured " << measured << ", failures "
       << report.measurement_failures << ")\n"
       << "dice:      " << fmt3(report.dice) << "\n"
       << "pck:       " << fmt3(report.pck) << "\n"
       << "pearson:   EDL " << fmt3(report.corr.edl) << "  ESL " << fmt3(report.corr.esl)
       << "  EDV " << fmt3(report.corr.edv) << "  ESV " << fmt3(report.corr.esv) << "  EF "
       << fmt3(report.corr.ef) << "\n";
    for (const auto& w : report.warnings) os << "warning:   " << w << "\n";
    return os.str();
}

struct PhantomArgs {
    std::string out;
    int count = 80;
    std::uint64_t seed = 1;
    int image_size = 256;
    int notched_every = 5;  // every n-th study gets a non-convex notch; 0 = never
    int folds = 10;
};

void run_phantom(const PhantomArgs& a) {
    ASAME_CHECK(a.count >= 1, "phantom: count must be >= 1");
    fs::create_directories(a.out);
    std::ostringstream truth;
    truth << "study_id,EDL,ESL,EDV,ESV,EF\n";
    std::vector<std::string> ids;
    for (int i = 0; i < a.count; ++i) {
        const bool notched = a.notched_every > 0 && (i % a.notched_every) == a.notched_every - 1;
        phantom::PhantomParams p = phantom::random_params(a.seed + static_cast<std::uint64_t>(i),
                                                          notched);
        p.image_size = a.image_size;
        p.spacing_mm = 0.6 * 256.0 / a.image_size;  // keep the field of view
        const phantom::PhantomStudy study = phantom::generate_phantom_study(p);
        dataset::save_study(study.quad, a.out);
        ids.push_back(study.quad.id);
        const auto& t = study.analytic;
        truth << study.quad.id << ',' << t.edl_mm << ',' << t.esl_mm << ',' << t.edv_ml << ','
              << t.esv_ml << ',' << t.ef_percent << '\n';
    }
    write_file(a.out + "/truth.csv", truth.str());
    std::cout << "wrote " << a.count << " studies under " << a.out << "\n"
              << "analytic reference: " << a.out << "/truth.csv\n";
    if (a.folds >= 3 && a.count >= a.folds) {
        const auto folds = dataset::make_folds(ids, a.folds, a.seed);
        const std::string dir = dataset::write_split_manifests(folds, a.out);
        std::cout << "split manifests: " << dir << "\n";
    } else {
        std::cout << "skipped split manifests (need folds >= 3 and count >= folds)\n";
    }
}

struct TrainArgs {
    train::TrainConfig cfg;
    std::string config_path;
    std::string resume;
    bool desk = false;
    bool no_augment = false;
};

/// `key=value` lines, '#' comments; keys use the flag spellings minus dashes.
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("config: cannot read " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config: line " + std::to_string(lineno) + " of " + path +
                            " is not key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

/// Precedence: explicit flags > config file > --desk preset > built-in defaults.
void apply_train_config(CLI::App* cmd, TrainArgs& a) {
    std::map<std::string, std::string> kv;
    if (!a.config_path.empty()) kv = read_config_file(a.config_path);
    // `seen(flag)` = the user pinned this value on the command line.
    const auto seen = [&](const char* flag) { return cmd->count(flag) > 0; };
    const auto take = [&](const char* key, const char* flag, auto assign) {
        const auto it = kv.find(key);
        if (it == kv.end()) return false;
        if (!seen(flag)) assign(it->second);
        kv.erase(it);
        return true;
    };
    const auto to_int = [](const std::string& v) { return std::stoi(v); };
    bool cfg_has[6] = {false, false, false, false, false, false};
    cfg_has[0] = take("arch", "--arch", [&](const std::string& v) { a.cfg.arch = v; });
    cfg_has[1] = take("input-size", "--input-size",
                      [&](const std::string& v) { a.cfg.input_size = to_int(v); });
    cfg_has[2] =
        take("epochs", "--epochs", [&](const std::string& v) { a.cfg.epochs = to_int(v); });
    cfg_has[3] = take("warmup-epochs", "--warmup-epochs",
                      [&](const std::string& v) { a.cfg.warmup_epochs = to_int(v); });
    cfg_has[4] =
        take("peak-lr", "--peak-lr", [&](const std::string& v) { a.cfg.peak_lr = std::stod(v); });
    cfg_has[5] = take("batch-size", "--batch-size",
                      [&](const std::string& v) { a.cfg.batch_size = to_int(v); });
    take("seed", "--seed", [&](const std::string& v) { a.cfg.seed = std::stoull(v); });
    take("checkpoint-every", "--checkpoint-every",
         [&](const std::string& v) { a.cfg.checkpoint_every = to_int(v); });
    take("data-root", "--data-root", [&](const std::string& v) { a.cfg.data_root = v; });
    take("out", "--out", [&](const std::string& v) { a.cfg.out_dir = v; });
    take("split", "--split", [&](const std::string& v) { a.cfg.split_file = v; });
    take("augment", "--no-augment", [&](const std::string& v) {
        if (v == "true" || v == "1")
            a.cfg.augment = true;
        else if (v == "false" || v == "0")
            a.cfg.augment = false;
        else
            throw DataError("config: augment must be true/false/1/0, got " + v);
    });
    if (!kv.empty()) throw DataError("config: unknown key '" + kv.begin()->first + "'");

    if (a.desk) {
        // The preset fills whatever neither a flag nor the config pinned down.
        const train::TrainConfig d = train::TrainConfig::desk_preset();
        if (!seen("--arch") && !cfg_has[0]) a.cfg.arch = d.arch;
        if (!seen("--input-size") && !cfg_has[1]) a.cfg.input_size = d.input_size;
        if (!seen("--epochs") && !cfg_has[2]) a.cfg.epochs = d.epochs;
        if (!seen("--warmup-epochs") && !cfg_has[3]) a.cfg.warmup_epochs = d.warmup_epochs;
        if (!seen("--peak-lr") && !cfg_has[4]) a.cfg.peak_lr = d.peak_lr;
        if (!seen("--batch-size") && !cfg_has[5]) a.cfg.batch_size = d.batch_size;
    }
    if (a.no_augment) a.cfg.augment = false;
}

void run_train(CLI::App* cmd, TrainArgs& a) {
    apply_train_config(cmd, a);
    const train::TrainResult res = train::train(a.cfg, a.resume);
    std::cout << "trained " << res.epochs_run << " epochs, final mean loss "
              << res.final_total_loss << "\n"
              << "checkpoint: " << res.final_checkpoint << "\n"
              << "loss curve: " << res.loss_csv << "\n";
}

struct EvalArgs {
    std::string checkpoint, data_root, split, out;
};

void run_eval(const EvalArgs& a) {
    const auto studies = load_selected(a.data_root, a.split);
    const train::EvalReport report = train::evaluate_checkpoint(a.checkpoint, studies);
    fs::create_directories(a.out);
    write_file(a.out + "/eval.csv", report.to_csv());
    const std::string summary = summary_text(report);
    write_file(a.out + "/summary.txt", summary);
    std::cout << summary << "per-study table: " << a.out << "/eval.csv\n";
}

struct MeasureArgs {
    std::string data_root, split, out;
    int disks = 20;
};

void run_measure(const MeasureArgs& a) {
    const auto studies = load_selected(a.data_root, a.split);
    const std::string csv = train::measure_csv(studies, a.disks);
    if (a.out.empty()) {
        std::cout << csv;
    } else {
        write_file(a.out, csv);
        std::cout << "wrote " << studies.size() << " measurement rows to " << a.out << "\n";
    }
}

struct ReportArgs {
    std::string checkpoint, data_root, split, out;
    int max_overlays = 8;
};

void run_report(const ReportArgs& a) {
    const auto studies = load_selected(a.data_root, a.split);
    const train::Checkpoint ckpt = train::load_checkpoint(a.checkpoint);
    net::Network<double> model = train::build_network(ckpt.cfg);
    train::restore_params(model, ckpt);
    const int input_size = ckpt.cfg.input_size;
    const train::EvalReport report = train::evaluate(model, studies, input_size);

    fs::create_directories(a.out);
    write_file(a.out + "/eval.csv", report.to_csv());
    write_file(a.out + "/summary.txt", summary_text(report));

    struct Axis {
        const char* name;
        double geometry::LVIndicators::* field;
        double r;
    };
    const Axis axes[] = {{"EDL (MM)", &geometry::LVIndicators::edl_mm, report.corr.edl},
                         {"ESL (MM)", &geometry::LVIndicators::esl_mm, report.corr.esl},
                         {"EDV (ML)", &geometry::LVIndicators::edv_ml, report.corr.edv},
                         {"ESV (ML)", &geometry::LVIndicators::esv_ml, report.corr.esv},
                         {"EF (%)", &geometry::LVIndicators::ef_percent, report.corr.ef}};
    const char* files[] = {"scatter_edl.png", "scatter_esl.png", "scatter_edv.png",
                           "scatter_esv.png", "scatter_ef.png"};
    for (int i = 0; i < 5; ++i) {
        std::vector<double> xs, ys;
        for (const auto& row : report.rows) {
            if (!row.measured) continue;
            xs.push_back(row.truth.*axes[i].field);
            ys.push_back(row.pred.*axes[i].field);
        }
        const std::string title = std::string(axes[i].name) + "  R=" +
                                  (std::isnan(axes[i].r) ? "NAN" : fmt3(axes[i].r));
        png::write(a.out + "/" + files[i], render::scatter_plot(xs, ys, title));
    }

    int rendered = 0;
    for (const auto& study : studies) {
        if (rendered >= a.max_overlays) break;
        geometry::StudyQuad pred;
        pred.id = study.id;
        for (geometry::View v : {geometry::View::A4C, geometry::View::A2C})
            for (geometry::Phase p : {geometry::Phase::ED, geometry::Phase::ES}) {
                const geometry::StudyItem& item = study.at(v, p);
                const train::ItemPrediction ip = train::predict_item(model, item, input_size);
                geometry::StudyItem pi;
                pi.mask = {ip.mask, v, p, item.mask.spacing_mm};
                pi.landmarks = ip.lm_src;
                pred.items.emplace(std::make_pair(v, p), std::move(pi));
            }
        png::write(a.out + "/overlay_" + study.id + ".png",
                   render::study_montage(study, &pred));
        ++rendered;
    }
    std::cout << summary_text(report) << "report written to " << a.out << " (" << rendered
              << " overlays, 5 scatter plots)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AutoSAME: dual-task segmentation + landmark network with a biplane "
                 "Simpson measurement engine"};
    app.require_subcommand(1);

    PhantomArgs pa;
    CLI::App* phantom_cmd = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    phantom_cmd->add_option("--out", pa.out, "dataset directory")->required();
    phantom_cmd->add_option("--count", pa.count, "number of studies");
    phantom_cmd->add_option("--seed", pa.seed, "base seed");
    phantom_cmd->add_option("--image-size", pa.image_size, "rasterization size in px");
    phantom_cmd->add_option("--notched-every", pa.notched_every,
                            "give every n-th study a non-convex notch (0 = never)");
    phantom_cmd->add_option("--folds", pa.folds, "number of cross-validation folds");
    phantom_cmd->callback([&] { run_phantom(pa); });

    TrainArgs ta;
    CLI::App* train_cmd = app.add_subcommand("train", "train the dual-task network");
    train_cmd->add_option("--config", ta.config_path, "key=value config file; flags override it");
    train_cmd->add_option("--data-root", ta.cfg.data_root, "dataset directory");
    train_cmd->add_option("--out", ta.cfg.out_dir, "run directory");
    train_cmd->add_option("--split", ta.cfg.split_file, "train id list (default: all studies)");
    train_cmd->add_option("--batch-size", ta.cfg.batch_size, "items per optimizer step");
    train_cmd->add_option("--peak-lr", ta.cfg.peak_lr, "peak learning rate");
    train_cmd->add_option("--epochs", ta.cfg.epochs, "total epochs");
    train_cmd->add_option("--warmup-epochs", ta.cfg.warmup_epochs, "linear warm-up epochs");
    train_cmd->add_option("--seed", ta.cfg.seed, "run seed");
    train_cmd->add_option("--input-size", ta.cfg.input_size, "network input resolution");
    train_cmd->add_option("--arch", ta.cfg.arch, "encoder preset: paper, small, or tiny");
    train_cmd->add_option("--checkpoint-every", ta.cfg.checkpoint_every,
                          "epochs between checkpoints");
    train_cmd->add_option("--resume", ta.resume, "checkpoint to resume from");
    train_cmd->add_flag("--desk", ta.desk, "desk-scale preset (small arch, 96 px, 30 epochs)");
    train_cmd->add_flag("--no-augment", ta.no_augment, "disable training augmentation");
    train_cmd->callback([&] { run_train(train_cmd, ta); });

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a study set");
    eval_cmd->add_option("--checkpoint", ea.checkpoint, "trained checkpoint")->required();
    eval_cmd->add_option("--data-root", ea.data_root, "dataset directory")->required();
    eval_cmd->add_option("--split", ea.split, "id list (default: all studies)");
    eval_cmd->add_option("--out", ea.out, "output directory")->required();
    eval_cmd->callback([&] { run_eval(ea); });

    MeasureArgs ma;
    CLI::App* measure_cmd =
        app.add_subcommand("measure", "biplane Simpson measurements from reference masks");
    measure_cmd->add_option("--data-root", ma.data_root, "dataset directory")->required();
    measure_cmd->add_option("--split", ma.split, "id list (default: all studies)");
    measure_cmd->add_option("--disks", ma.disks, "number of Simpson disks");
    measure_cmd->add_option("--out", ma.out, "CSV path (default: stdout)");
    measure_cmd->callback([&] { run_measure(ma); });

    ReportArgs ra;
    CLI::App* report_cmd =
        app.add_subcommand("report", "render scatter plots and prediction overlays");
    report_cmd->add_option("--checkpoint", ra.checkpoint, "trained checkpoint")->required();
    report_cmd->add_option("--data-root", ra.data_root, "dataset directory")->required();
    report_cmd->add_option("--split", ra.split, "id list (default: all studies)");
    report_cmd->add_option("--out", ra.out, "output directory")->required();
    report_cmd->add_option("--max-overlays", ra.max_overlays, "study overlays to render");
    report_cmd->callback([&] { run_report(ra); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
