#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/blackbox/networks.hpp"
#include "aim/core/model.hpp"
#include "aim/data/image.hpp"
#include "aim/expcli/evaluate.hpp"
#include "aim/expcli/store.hpp"

namespace aim::expcli {

/// A trained explainer with the black box and feature space it was trained against.
struct LoadedCheckpoint {
  data::FeatureSpace space;
  std::unique_ptr<blackbox::BlackBox> bb;
  std::unique_ptr<AimModel> model;
};

/// `path` is a seed directory or its explainer.json.
inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  const fs::path ckpt = fs::is_directory(path) ? dir / "explainer.json" : path;
  if (!fs::exists(ckpt)) throw UsageError("no explainer checkpoint at " + ckpt.string());
  const auto links = read_json(dir / "links.json");
  const fs::path bb_dir = dir / links.at("blackbox_dir").get<std::string>();
  LoadedCheckpoint lc;
  lc.space = data::FeatureSpace::from_json(read_json(bb_dir / "space.json").at("space"));
  lc.bb = blackbox::blackbox_from_json(read_json(bb_dir / "blackbox.json"), lc.space);
  lc.model = std::make_unique<AimModel>(AimModel::from_json(read_json(ckpt), lc.space));
  if (lc.model->blackbox_fingerprint() != lc.bb->fingerprint()) {
    throw std::runtime_error("explainer was trained against a different black box");
  }
  return lc;
}

/// Input file, one instance per line: raw text (text), comma-separated values (tabular),
/// or whitespace-separated pixel values in row-major order (image).
inline std::vector<FeatureVector> read_inputs(const fs::path& path, const data::FeatureSpace& space) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read input file " + path.string());
  std::vector<FeatureVector> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    switch (space.modality) {
      case data::Modality::kText: out.push_back(data::encode_text(data::tokenize(line), space)); break;
      case data::Modality::kTabular: {
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::stod(cell));
        if (row.size() != space.d) throw UsageError(where + ": expected " + std::to_string(space.d) + " columns");
        out.push_back(data::encode_tabular(row));
        break;
      }
      case data::Modality::kImage: {
        data::GrayImage img;
        img.height = space.image_height;
        img.width = space.image_width;
        std::istringstream ss(line);
        for (double v; ss >> v;) img.pixels.push_back(v);
        if (img.pixels.size() != img.height * img.width) {
          throw UsageError(where + ": expected " + std::to_string(img.height * img.width) + " pixels");
        }
        out.push_back(data::patch_image(img, space.grid));
        break;
      }
    }
  }
  if (out.empty()) throw UsageError("input file " + path.string() + " has no instances");
  return out;
}

/// Text: tokens with the selected ones in [brackets]. Tabular: column=value, selected bracketed.
inline std::string render(const FeatureVector& x, const ExplanationRecord& r, const data::FeatureSpace& space) {
  std::vector<char> sel(x.size(), 0);
  for (std::size_t i : r.e.indices) sel[i] = 1;
  std::ostringstream out;
  bool first = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x.valid[i]) continue;
    std::string t = space.display(x, i);
    if (space.modality == data::Modality::kTabular) t += "=" + format_number(x.values(static_cast<Eigen::Index>(i), 0));
    if (space.modality == data::Modality::kImage && !sel[i]) continue;
    out << (first ? "" : " ") << (sel[i] ? "[" + t + "]" : t);
    first = false;
  }
  return out.str();
}

/// Binary PGM: selected patches keep their pixels, the rest are black.
inline std::string patch_mask_pgm(const FeatureVector& x, const ExplanationRecord& r, const data::FeatureSpace& space) {
  const auto kept = data::mask_features(x, {data::MaskStrategy::kZero, r.e.indices});
  const auto img = data::reassemble_patches(kept, space.image_height, space.image_width, space.grid);
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (double v : img.pixels) out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)));
  return out;
}

struct ExplainResult {
  std::vector<ExplanationRecord> records;
  fs::path jsonl, rendering;
};

/// Writes <out>.jsonl and <out>.txt (plus <out>-<id>.pgm per instance for images).
inline ExplainResult cmd_explain(const fs::path& checkpoint, const fs::path& input, std::optional<int> cls, std::size_t k,
                                 const fs::path& out) {
  const auto lc = load_checkpoint(checkpoint);
  const int C = lc.model->num_classes();
  if (cls && (*cls < 0 || *cls >= C)) {
    throw UsageError("--class " + std::to_string(*cls) + " is outside 0.." + std::to_string(C - 1));
  }
  if (k < 1 || k > lc.space.d) throw UsageError("--k must be in [1, d=" + std::to_string(lc.space.d) + "]");
  const auto xs = read_inputs(input, lc.space);
  const auto y = blackbox::predict_labels(*lc.bb, xs);
  const auto targets = cls ? std::vector<int>(xs.size(), *cls) : y;
  ExplainResult res;
  res.records = explain_records(*lc.model, xs, y, targets, k);
  res.jsonl = out.string() + ".jsonl";
  res.rendering = out.string() + ".txt";
  std::string jl, txt;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    jl += nlohmann::json(res.records[i]).dump() + "\n";
    txt += "#" + std::to_string(i) + " y_m=" + std::to_string(y[i]) + " class=" + std::to_string(targets[i]) + " k=" +
           std::to_string(res.records[i].e.k) + "\n" + render(xs[i], res.records[i], lc.space) + "\n";
    if (lc.space.modality == data::Modality::kImage) {
      atomic_write(out.string() + "-" + std::to_string(i) + ".pgm", patch_mask_pgm(xs[i], res.records[i], lc.space));
    }
  }
  atomic_write(res.jsonl, jl);
  atomic_write(res.rendering, txt);
  return res;
}

}  // namespace aim::expcli
