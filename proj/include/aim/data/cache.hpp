#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/data/dataset.hpp"

// On-disk dataset cache. A cache directory holds space.json (FeatureSpace plus
// dataset metadata) and one file per split:
//   text     <split>.tsv  first line "#aim-text-v1 d=<d>", then "label<TAB>id id ..." (valid slots only)
//   tabular  <split>.csv  first line "#aim-tabular-v1", then a header row "<col>,...,label" and rows
//   image    <split>.bin  float64 little-endian, n*d*slot_width values, plus <split>.json
//            {"format":"aim-image-v1","n":..,"d":..,"slot_width":..,"labels":[..]}

namespace aim::data {

inline constexpr const char* kTextFormat = "#aim-text-v1";
inline constexpr const char* kTabularFormat = "#aim-tabular-v1";
inline constexpr const char* kImageFormat = "aim-image-v1";

namespace detail {

inline void write_text_split(const std::filesystem::path& p, const std::vector<Example>& split, std::size_t d) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << kTextFormat << " d=" << d << "\n";
  for (const auto& e : split) {
    out << e.label << '\t';
    bool first = true;
    for (std::size_t i = 0; i < e.x.size(); ++i) {
      if (!e.x.valid[i]) continue;
      if (!first) out << ' ';
      out << e.x.tokens[i];
      first = false;
    }
    out << '\n';
  }
}

inline std::vector<Example> read_text_split(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  const std::string prefix = std::string(kTextFormat) + " d=";
  if (line.rfind(prefix, 0) != 0) throw std::runtime_error("not an aim text cache: " + p.string());
  const std::size_t d = std::stoul(line.substr(prefix.size()));
  std::vector<Example> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("malformed text cache row");
    Example e;
    e.label = std::stoi(line.substr(0, tab));
    e.x.tokens.assign(d, kSentinel);
    e.x.valid.assign(d, 0);
    std::istringstream ids(line.substr(tab + 1));
    std::size_t i = 0;
    for (int id; ids >> id; ++i) {
      if (i >= d) throw std::runtime_error("text cache row longer than d");
      e.x.tokens[i] = id;
      e.x.valid[i] = 1;
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_tabular_split(const std::filesystem::path& p, const std::vector<Example>& split,
                                const FeatureSpace& space) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << kTabularFormat << "\n";
  for (const auto& c : space.descriptors) out << c << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (const auto& e : split) {
    for (Eigen::Index i = 0; i < e.x.values.rows(); ++i) out << e.x.values(i, 0) << ',';
    out << e.label << '\n';
  }
}

inline std::vector<Example> read_tabular_split(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  if (line != kTabularFormat) throw std::runtime_error("not an aim tabular cache: " + p.string());
  std::getline(in, line);  // header
  std::vector<Example> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
    if (cells.empty()) throw std::runtime_error("malformed tabular cache row");
    const int label = static_cast<int>(cells.back());
    cells.pop_back();
    out.push_back({encode_tabular(cells), label});
  }
  return out;
}

inline void write_image_split(const std::filesystem::path& stem, const std::vector<Example>& split,
                              const FeatureSpace& space) {
  static_assert(std::endian::native == std::endian::little, "image cache assumes a little-endian host");
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + stem.string() + ".bin");
  nlohmann::json meta = {{"format", kImageFormat}, {"n", split.size()}, {"d", space.d}, {"slot_width", space.slot_width}};
  std::vector<int> labels;
  for (const auto& e : split) {
    bin.write(reinterpret_cast<const char*>(e.x.values.data()),
              static_cast<std::streamsize>(e.x.values.size() * static_cast<Eigen::Index>(sizeof(double))));
    labels.push_back(e.label);
  }
  meta["labels"] = labels;
  std::ofstream(stem.string() + ".json") << meta.dump() << "\n";
}

inline std::vector<Example> read_image_split(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot open " + stem.string() + ".json");
  const auto meta = nlohmann::json::parse(js);
  if (meta.at("format") != kImageFormat) throw std::runtime_error("not an aim image cache: " + stem.string());
  const auto n = meta.at("n").get<std::size_t>();
  const auto d = meta.at("d").get<Eigen::Index>();
  const auto w = meta.at("slot_width").get<Eigen::Index>();
  const auto labels = meta.at("labels").get<std::vector<int>>();
  if (labels.size() != n) throw std::runtime_error("image cache label count mismatch");
  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.x.values = Matrix(d, w);
    bin.read(reinterpret_cast<char*>(e.x.values.data()), static_cast<std::streamsize>(d * w * static_cast<Eigen::Index>(sizeof(double))));
    if (!bin) throw std::runtime_error("truncated image cache " + stem.string());
    e.x.valid.assign(static_cast<std::size_t>(d), 1);
    e.label = labels[i];
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

inline void save_dataset_cache(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"name", ds.name},
                         {"num_classes", ds.num_classes},
                         {"class_names", ds.class_names},
                         {"space", ds.space.to_json()}};
  if (ds.planted) meta["planted"] = ds.planted->per_class;
  std::ofstream(dir / "space.json") << meta.dump() << "\n";
  const std::pair<const char*, const std::vector<Example>*> splits[] = {
      {"train", &ds.train}, {"dev", &ds.dev}, {"test", &ds.test}};
  for (const auto& [name, split] : splits) {
    switch (ds.space.modality) {
      case Modality::kText: detail::write_text_split(dir / (std::string(name) + ".tsv"), *split, ds.space.d); break;
      case Modality::kTabular: detail::write_tabular_split(dir / (std::string(name) + ".csv"), *split, ds.space); break;
      case Modality::kImage: detail::write_image_split(dir / name, *split, ds.space); break;
    }
  }
}

inline Dataset load_dataset_cache(const std::filesystem::path& dir) {
  std::ifstream in(dir / "space.json");
  if (!in) throw std::runtime_error("no dataset cache at " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  Dataset ds;
  ds.name = meta.at("name").get<std::string>();
  ds.num_classes = meta.at("num_classes").get<int>();
  ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
  ds.space = FeatureSpace::from_json(meta.at("space"));
  if (meta.contains("planted")) ds.planted = PlantedKeys{meta.at("planted").get<std::vector<std::vector<int>>>()};
  for (auto [name, split] : {std::pair<const char*, std::vector<Example>*>{"train", &ds.train},
                             {"dev", &ds.dev},
                             {"test", &ds.test}}) {
    switch (ds.space.modality) {
      case Modality::kText: *split = detail::read_text_split(dir / (std::string(name) + ".tsv")); break;
      case Modality::kTabular: *split = detail::read_tabular_split(dir / (std::string(name) + ".csv")); break;
      case Modality::kImage: *split = detail::read_image_split(dir / name); break;
    }
  }
  return ds;
}

/// Stable key for a dataset config; used to name cache directories.
inline std::string dataset_cache_key(const DatasetConfig& cfg) {
  nlohmann::json j = cfg;
  return cfg.name + "-" + to_hex(fnv1a(j.dump()));
}

/// Loads from $AIM_DATA_ROOT/cache/<key> when present, else builds and writes the cache.
inline Dataset load_dataset_cached(const DatasetConfig& cfg, bool use_cache = true) {
  if (!use_cache) return load_dataset(cfg);
  const auto dir = data_root() / "cache" / dataset_cache_key(cfg);
  if (std::filesystem::exists(dir / "space.json")) return load_dataset_cache(dir);
  Dataset ds = load_dataset(cfg);
  const auto tmp = dir.string() + ".tmp";
  std::filesystem::remove_all(tmp);
  save_dataset_cache(ds, tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, dir, ec);
  if (ec) std::filesystem::remove_all(tmp);
  return ds;
}

}  // namespace aim::data
