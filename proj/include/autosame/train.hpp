#pragma once

#include "autosame/core.hpp"
#include "autosame/dataset.hpp"
#include "autosame/metrics.hpp"
#include "autosame/network.hpp"

#include <string>
#include <vector>

namespace autosame::train {

/// Full training-run description. The defaults are the documented full-scale
/// recipe (60 epochs, 10 warm-up, peak 2e-4, batch 4, 256 px); desk_preset()
/// swaps in the small architecture and budget used for CPU-scale smoke runs.
struct TrainConfig {
    int batch_size = 4;
    int input_size = 256;
    double peak_lr = 2e-4;
    int epochs = 60;
    int warmup_epochs = 10;
    net::LossWeights loss_weights{};
    std::uint64_t seed = 0;
    std::string data_root;
    std::string out_dir;
    std::string arch = "paper";    ///< encoder preset: "paper", "small", or "tiny"
    std::string split_file;        ///< optional id-list path; empty trains on every study
    bool augment = true;
    int checkpoint_every = 1;      ///< epochs between checkpoint files (>= 1)

    void validate() const;

    /// Encoder preset selected by `arch`, adjusted to `input_size`.
    net::EncoderConfig encoder_config() const;

    /// CPU-scale recipe: small architecture at 96 px, batch 2, 30 epochs,
    /// 3 warm-up, peak 2e-3.
    static TrainConfig desk_preset();
};

/// Linear ramp 0 -> peak over the warm-up epochs (reaching the peak exactly on
/// the last warm-up step), then cosine decay to 0 across the remaining steps.
double lr_schedule(long step, long steps_per_epoch, const TrainConfig& cfg);

/// Bias-corrected Adam over the store's registration order; frozen parameters
/// are skipped. State tensors align one-to-one with store.items().
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<MatrixD> m;
    std::vector<MatrixD> v;

    explicit Adam(const ad::ParamStore<double>& store);
    void step(ad::ParamStore<double>& store, double lr);
};

/// Everything needed to rebuild a model and continue its trajectory bitwise:
/// the as-trained config, progress counters, parameters, and Adam state.
struct Checkpoint {
    TrainConfig cfg;
    int epochs_completed = 0;
    long global_step = 0;
    std::vector<std::pair<std::string, MatrixD>> params;
    long adam_t = 0;
    std::vector<MatrixD> adam_m;
    std::vector<MatrixD> adam_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

net::Network<double> build_network(const TrainConfig& cfg);

/// Copies checkpoint parameters (and nothing else) into a freshly built
/// network; throws DataError if names or shapes disagree.
void restore_params(net::Network<double>& model, const Checkpoint& ckpt);

/// One flattened training example: a (view, phase) image of one study.
struct TrainItem {
    std::string study_id;
    geometry::StudyItem item;
};

std::vector<TrainItem> flatten_items(const std::vector<geometry::StudyQuad>& studies);

struct TrainResult {
    std::string final_checkpoint;
    std::string loss_csv;
    double final_total_loss = 0.0;
    int epochs_run = 0;
};

/// Deterministic training loop: per-epoch sigma schedule, per-step Adam with
/// lr_schedule, alignment loss during warm-up only, a checkpoint per epoch,
/// and a loss-curve CSV. A non-finite loss aborts with a diagnostic dump.
/// `resume_path` continues a run bitwise from a saved checkpoint.
TrainResult train(const TrainConfig& cfg, const std::string& resume_path = "");

/// One item pushed through the self-prompted path: mask thresholded at 0.5 of
/// the logistic after resizing the logits to the source frame, plus heatmap
/// peak landmarks at both the input and the source resolution.
struct ItemPrediction {
    MaskGrid mask;
    geometry::Landmarks lm_src;
    geometry::Landmarks lm_input;
};

ItemPrediction predict_item(const net::Network<double>& model, const geometry::StudyItem& item,
                            int input_size);

/// Per-study evaluation row; measurement may fail on degenerate predictions,
/// in which case the study is excluded from the indicator correlations.
struct StudyEval {
    std::string id;
    geometry::LVIndicators pred;
    geometry::LVIndicators truth;
    double dice = 0.0;
    bool measured = false;
};

struct EvalReport {
    double dice = 0.0;  ///< mean over all (view, phase) items
    double pck = 0.0;   ///< threshold input_size / 20, inclusive
    metrics::IndicatorCorr corr;
    std::vector<StudyEval> rows;
    int measurement_failures = 0;
    std::vector<std::string> warnings;

    std::string to_csv() const;
};

/// Runs the prompt-free model path on every study: masks thresholded at 0.5
/// of the logistic at the source resolution, landmarks from heatmap peaks,
/// indicators via the measurement engine, Dice/PCK/Pearson against ground
/// truth. Pure: repeated calls agree bitwise.
EvalReport evaluate(const net::Network<double>& model,
                    const std::vector<geometry::StudyQuad>& studies, int input_size);

/// Convenience wrapper: rebuild the network from a checkpoint and evaluate.
EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::vector<geometry::StudyQuad>& studies);

/// Ground-truth-only measurement CSV (`study_id,EDL,ESL,EDV,ESV,EF` rows).
std::string measure_csv(const std::vector<geometry::StudyQuad>& studies, int n_disks = 20);

}  // namespace autosame::train
