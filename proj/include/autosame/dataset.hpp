#pragma once

#include "autosame/core.hpp"
#include "autosame/geometry.hpp"

#include <string>
#include <vector>

namespace autosame::dataset {

/// On-disk study layout: one directory per study holding, per (view, phase),
/// a strictly binary mask PNG (`a4c_ed_mask.png`), an optional gray image PNG
/// (`a4c_ed_image.png`), and a JSON sidecar (`a4c_ed.json`) with
/// {view, phase, P_A, P_L, P_R, spacing_mm}. Split manifests live under
/// `<root>/splits/fold<k>/{train,val,test}.txt` as plain-text id lists.

/// Writes one study under root/<study.id>/; returns the study directory.
std::string save_study(const geometry::StudyQuad& study, const std::string& root);

/// Reads one study directory; throws DataError naming the offending file on
/// missing masks or sidecars, malformed JSON, or inconsistent spacing.
geometry::StudyQuad load_study(const std::string& dir);

/// Sorted ids of all study directories under root (the splits dir is skipped).
std::vector<std::string> list_study_ids(const std::string& root);

geometry::StudyQuad load_study_by_id(const std::string& root, const std::string& id);

std::vector<geometry::StudyQuad> load_studies(const std::string& root,
                                              const std::vector<std::string>& ids);

/// Loads every study under root, in id order.
std::vector<geometry::StudyQuad> load_dataset(const std::string& root);

struct SplitManifest {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// Seed-deterministic k-fold partition: ids are shuffled once, bucket k is the
/// test set of fold k, bucket k+1 (cyclically) the validation set, the rest
/// train — an 8:1:1 split when ids divide evenly into 10 folds.
std::vector<SplitManifest> make_folds(std::vector<std::string> ids, int n_folds,
                                      std::uint64_t seed);

/// Writes all folds under root/splits/. Returns the splits directory.
std::string write_split_manifests(const std::vector<SplitManifest>& folds,
                                  const std::string& root);

SplitManifest read_split_manifest(const std::string& root, int fold);

/// One id per line; '#' lines and blanks ignored.
std::vector<std::string> read_id_list(const std::string& path);

}  // namespace autosame::dataset
