#include "autosame/dataset.hpp"

#include "autosame/png_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace autosame::dataset {

namespace fs = std::filesystem;
using nlohmann::json;
using geometry::Phase;
using geometry::View;

namespace {

std::string item_stem(View v, Phase p) {
    return geometry::to_string(v) + "_" + geometry::to_string(p);
}

json landmarks_to_json(const geometry::StudyItem& item) {
    const auto& lm = item.landmarks;
    json j;
    j["view"] = geometry::to_string(item.mask.view);
    j["phase"] = geometry::to_string(item.mask.phase);
    j["P_A"] = {lm.apex.x(), lm.apex.y()};
    j["P_L"] = {lm.mitral_left.x(), lm.mitral_left.y()};
    j["P_R"] = {lm.mitral_right.x(), lm.mitral_right.y()};
    j["spacing_mm"] = item.mask.spacing_mm;
    return j;
}

Point2 point_from_json(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 2)
        throw DataError("dataset: " + path + ": field '" + key + "' must be an [x, y] array");
    return {j[key][0].get<double>(), j[key][1].get<double>()};
}

}  // namespace

std::string save_study(const geometry::StudyQuad& study, const std::string& root) {
    study.validate();
    ASAME_CHECK(!study.id.empty(), "save_study: study id must not be empty");
    const fs::path dir = fs::path(root) / study.id;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("dataset: cannot create " + dir.string() + ": " + ec.message());
    for (View v : {View::A4C, View::A2C})
        for (Phase p : {Phase::ED, Phase::ES}) {
            const geometry::StudyItem& item = study.at(v, p);
            const std::string stem = (dir / item_stem(v, p)).string();
            png::write_mask(stem + "_mask.png", item.mask.grid);
            if (item.image.size() > 0) png::write_gray(stem + "_image.png", item.image);
            std::ofstream out(stem + ".json");
            if (!out) throw DataError("dataset: cannot write " + stem + ".json");
            out << landmarks_to_json(item).dump(2) << '\n';
        }
    return dir.string();
}

geometry::StudyQuad load_study(const std::string& dir) {
    const fs::path base(dir);
    if (!fs::is_directory(base)) throw DataError("dataset: no such study directory: " + dir);
    geometry::StudyQuad study;
    study.id = base.filename().string();
    for (View v : {View::A4C, View::A2C})
        for (Phase p : {Phase::ED, Phase::ES}) {
            const std::string stem = (base / item_stem(v, p)).string();
            const std::string mask_path = stem + "_mask.png";
            const std::string json_path = stem + ".json";
            if (!fs::exists(mask_path))
                throw DataError("dataset: missing mask file " + mask_path);
            if (!fs::exists(json_path))
                throw DataError("dataset: missing sidecar file " + json_path);

            geometry::StudyItem item;
            item.mask.grid = png::read_mask(mask_path);
            item.mask.view = v;
            item.mask.phase = p;

            std::ifstream in(json_path);
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                throw DataError("dataset: malformed JSON in " + json_path + ": " + e.what());
            }
            if (!j.contains("spacing_mm") || !j["spacing_mm"].is_number())
                throw DataError("dataset: " + json_path + ": missing numeric 'spacing_mm'");
            if (j.value("view", "") != geometry::to_string(v) ||
                j.value("phase", "") != geometry::to_string(p))
                throw DataError("dataset: " + json_path +
                                ": view/phase fields disagree with the file name");
            item.mask.spacing_mm = j["spacing_mm"].get<double>();
            item.landmarks.apex = point_from_json(j, "P_A", json_path);
            item.landmarks.mitral_left = point_from_json(j, "P_L", json_path);
            item.landmarks.mitral_right = point_from_json(j, "P_R", json_path);

            const std::string image_path = stem + "_image.png";
            if (fs::exists(image_path)) item.image = png::read_gray(image_path);
            study.items.emplace(std::make_pair(v, p), std::move(item));
        }
    try {
        study.validate();
    } catch (const Error& e) {
        throw DataError("dataset: " + dir + ": " + e.what());
    }
    return study;
}

std::vector<std::string> list_study_ids(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("dataset: no such dataset root: " + root);
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name == "splits") continue;
        ids.push_back(name);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

geometry::StudyQuad load_study_by_id(const std::string& root, const std::string& id) {
    return load_study((fs::path(root) / id).string());
}

std::vector<geometry::StudyQuad> load_studies(const std::string& root,
                                              const std::vector<std::string>& ids) {
    std::vector<geometry::StudyQuad> studies;
    studies.reserve(ids.size());
    for (const auto& id : ids) studies.push_back(load_study_by_id(root, id));
    return studies;
}

std::vector<geometry::StudyQuad> load_dataset(const std::string& root) {
    return load_studies(root, list_study_ids(root));
}

std::vector<SplitManifest> make_folds(std::vector<std::string> ids, int n_folds,
                                      std::uint64_t seed) {
    ASAME_CHECK(n_folds >= 3, "make_folds: need at least 3 folds for train/val/test");
    ASAME_CHECK(static_cast<int>(ids.size()) >= n_folds,
                "make_folds: fewer studies than folds");
    std::sort(ids.begin(), ids.end());
    Rng rng = Rng::derive(seed, 0x666f6c6473ULL);  // "folds"
    rng.shuffle(ids);
    std::vector<std::vector<std::string>> buckets(n_folds);
    for (std::size_t i = 0; i < ids.size(); ++i)
        buckets[i % n_folds].push_back(ids[i]);
    std::vector<SplitManifest> folds(n_folds);
    for (int k = 0; k < n_folds; ++k) {
        folds[k].test = buckets[k];
        folds[k].val = buckets[(k + 1) % n_folds];
        for (int b = 0; b < n_folds; ++b)
            if (b != k && b != (k + 1) % n_folds)
                folds[k].train.insert(folds[k].train.end(), buckets[b].begin(),
                                      buckets[b].end());
    }
    return folds;
}

namespace {

void write_id_list(const fs::path& path, const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw DataError("dataset: cannot write " + path.string());
    for (const auto& id : ids) out << id << '\n';
}

}  // namespace

std::string write_split_manifests(const std::vector<SplitManifest>& folds,
                                  const std::string& root) {
    const fs::path splits = fs::path(root) / "splits";
    for (std::size_t k = 0; k < folds.size(); ++k) {
        char name[16];
        std::snprintf(name, sizeof(name), "fold%02zu", k);
        const fs::path dir = splits / name;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw DataError("dataset: cannot create " + dir.string() + ": " + ec.message());
        write_id_list(dir / "train.txt", folds[k].train);
        write_id_list(dir / "val.txt", folds[k].val);
        write_id_list(dir / "test.txt", folds[k].test);
    }
    return splits.string();
}

SplitManifest read_split_manifest(const std::string& root, int fold) {
    char name[16];
    std::snprintf(name, sizeof(name), "fold%02d", fold);
    const fs::path dir = fs::path(root) / "splits" / name;
    SplitManifest m;
    m.train = read_id_list((dir / "train.txt").string());
    m.val = read_id_list((dir / "val.txt").string());
    m.test = read_id_list((dir / "test.txt").string());
    return m;
}

std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("dataset: cannot read id list " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        ids.push_back(line);
    }
    return ids;
}

}  // namespace autosame::dataset
