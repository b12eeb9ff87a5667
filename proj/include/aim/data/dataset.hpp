#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/data/feature_space.hpp"
#include "aim/data/image.hpp"
#include "aim/data/lexicon.hpp"

namespace aim::data {

struct Example {
  FeatureVector x;
  int label = 0;
};

/// Key-token sets planted per class by the synthetic rule generator.
struct PlantedKeys {
  std::vector<std::vector<int>> per_class;
};

struct Dataset {
  std::string name;
  FeatureSpace space;
  int num_classes = 2;
  std::vector<std::string> class_names;
  std::vector<Example> train, dev, test;
  std::optional<PlantedKeys> planted;
};

struct DatasetConfig {
  std::string name = "synthetic-rule";
  std::size_t train = 1000, dev = 200, test = 200;
  std::uint64_t seed = 0;
  std::size_t d = 50;
  std::size_t max_vocab = 5000;
  std::string path;
  // synthetic-rule
  int num_classes = 2;
  std::size_t keys_per_class = 5;
  std::size_t label_keys_min = 6, label_keys_max = 8;
  std::size_t other_keys_min = 5;
  std::size_t min_length = 30;
  // image
  std::size_t grid = 4;
  std::vector<int> digits = {0, 1, 2};
  // tabular
  std::string label_column = "label";
};

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"name", c.name},
       {"train", c.train},
       {"dev", c.dev},
       {"test", c.test},
       {"seed", c.seed},
       {"d", c.d},
       {"max_vocab", c.max_vocab},
       {"path", c.path},
       {"num_classes", c.num_classes},
       {"keys_per_class", c.keys_per_class},
       {"label_keys_min", c.label_keys_min},
       {"label_keys_max", c.label_keys_max},
       {"other_keys_min", c.other_keys_min},
       {"min_length", c.min_length},
       {"grid", c.grid},
       {"digits", c.digits},
       {"label_column", c.label_column}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
  static const std::array<const char*, 17> kKeys = {"name",          "train",          "dev",           "test",
                                                    "seed",          "d",              "max_vocab",     "path",
                                                    "num_classes",   "keys_per_class", "label_keys_min", "label_keys_max",
                                                    "other_keys_min", "min_length",    "grid",          "digits",
                                                    "label_column"};
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(kKeys.begin(), kKeys.end(), [&](const char* s) { return k == s; }) == kKeys.end()) {
      throw std::invalid_argument("dataset: unknown key '" + k + "'");
    }
  }
  DatasetConfig d;
  c.name = j.value("name", d.name);
  c.train = j.value("train", d.train);
  c.dev = j.value("dev", d.dev);
  c.test = j.value("test", d.test);
  c.seed = j.value("seed", d.seed);
  c.d = j.value("d", d.d);
  c.max_vocab = j.value("max_vocab", d.max_vocab);
  c.path = j.value("path", d.path);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.keys_per_class = j.value("keys_per_class", d.keys_per_class);
  c.label_keys_min = j.value("label_keys_min", d.label_keys_min);
  c.label_keys_max = j.value("label_keys_max", d.label_keys_max);
  c.other_keys_min = j.value("other_keys_min", d.other_keys_min);
  c.min_length = j.value("min_length", d.min_length);
  c.grid = j.value("grid", d.grid);
  c.digits = j.value("digits", d.digits);
  c.label_column = j.value("label_column", d.label_column);
}

/// Root for external corpora and caches: $AIM_DATA_ROOT, else ./data.
inline std::filesystem::path data_root() {
  if (const char* env = std::getenv("AIM_DATA_ROOT"); env != nullptr && *env != '\0') return env;
  return std::filesystem::path("data");
}

inline std::filesystem::path resolve_data_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || std::filesystem::exists(path)) return path;
  return data_root() / path;
}

namespace detail {

inline const std::vector<std::vector<std::string>>& rule_key_words() {
  static const std::vector<std::vector<std::string>> kWords = {
      {"superb", "delightful", "charming", "brilliant", "moving", "stunning", "witty", "gripping", "heartfelt",
       "masterful"},
      {"dreadful", "tedious", "clumsy", "bland", "awful", "lifeless", "muddled", "shallow", "boring", "painful"},
      {"election", "senate", "minister", "treaty", "parliament", "diplomat", "ballot", "embassy", "cabinet", "summit"},
      {"striker", "league", "coach", "tournament", "goalkeeper", "stadium", "playoff", "referee", "season", "trophy"}};
  return kWords;
}

inline const std::vector<std::string>& neutral_words() {
  static const std::vector<std::string> kWords = {
      "movie",   "film",     "plot",     "actor",    "actress", "scene",   "story",    "character", "director",
      "camera",  "music",    "script",   "ending",   "cast",    "role",    "audience", "time",      "minutes",
      "hour",    "year",     "people",   "man",      "woman",   "world",   "life",     "house",     "city",
      "night",   "day",      "friend",   "family",   "father",  "mother",  "girl",     "boy",       "book",
      "series",  "episode",  "version",  "screen",   "theater", "studio",  "budget",   "effects",   "dialogue",
      "sequel",  "genre",    "drama",    "comedy",   "horror",  "action",  "romance",  "thriller",  "documentary",
      "watch",   "see",      "saw",      "seen",     "think",   "know",    "make",     "made",      "get",
      "go",      "going",    "say",      "said",     "look",    "come",    "take",     "find",      "give",
      "tell",    "show",     "shows",    "play",     "played",  "seems",   "feel",     "start",     "end",
      "part",    "point",    "thing",    "way",      "kind",    "lot",     "bit",      "place",     "moment",
      "first",   "second",   "last",     "new",      "old",     "long",    "short",    "whole",     "real",
      "main",    "big",      "small",    "young",    "early",   "later",   "original", "television", "dvd",
      "version", "american", "british",  "french",   "war",     "police",  "killer",   "car",       "money",
      "school",  "love",     "death",    "job",      "fact",    "idea",    "question", "reason",    "name"};
  return kWords;
}

inline std::vector<std::string> stopword_sample() {
  const auto& all = english_stopwords();
  return {all.begin(), all.begin() + 120};
}

}  // namespace detail

/// Planted-key text task: every instance contains label-class keys and strictly fewer
/// keys of each other class, so a key-overlap rule recovers the label exactly.
inline Dataset make_synthetic_rule(const DatasetConfig& cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("synthetic-rule needs >= 2 classes");
  if (cfg.keys_per_class == 0) throw std::invalid_argument("synthetic-rule needs keys_per_class >= 1");
  if (cfg.label_keys_min < 1 || cfg.label_keys_max < cfg.label_keys_min || cfg.other_keys_min >= cfg.label_keys_min) {
    throw std::invalid_argument("synthetic-rule key-count ranges are inconsistent");
  }
  const auto total_keys = cfg.label_keys_max + static_cast<std::size_t>(cfg.num_classes - 1) * (cfg.label_keys_max - 1);
  if (cfg.d < total_keys || cfg.min_length > cfg.d) throw std::invalid_argument("synthetic-rule: d too small");
  const auto& word_groups = detail::rule_key_words();
  std::vector<std::vector<std::string>> key_words(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t k = 0; k < cfg.keys_per_class; ++k) {
      const bool named = static_cast<std::size_t>(c) < word_groups.size() && k < word_groups[static_cast<std::size_t>(c)].size();
      key_words[static_cast<std::size_t>(c)].push_back(
          named ? word_groups[static_cast<std::size_t>(c)][k] : "key" + std::to_string(c) + "_" + std::to_string(k));
    }
  }
  std::vector<std::string> filler = detail::stopword_sample();
  for (const auto& w : detail::neutral_words()) filler.push_back(w);
  std::sort(filler.begin(), filler.end());
  filler.erase(std::unique(filler.begin(), filler.end()), filler.end());

  Rng rng(cfg.seed);
  auto make_doc = [&](int label) {
    const auto length = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(std::max(cfg.min_length, total_keys)),
                                                             static_cast<std::int64_t>(cfg.d)));
    std::vector<std::string> doc(length);
    for (auto& t : doc) t = filler[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(filler.size()) - 1))];
    std::vector<std::size_t> positions(length);
    for (std::size_t i = 0; i < length; ++i) positions[i] = i;
    shuffle(positions, rng);
    std::size_t next = 0;
    const auto n_label = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(cfg.label_keys_min),
                                                              static_cast<std::int64_t>(cfg.label_keys_max)));
    for (int c = 0; c < cfg.num_classes; ++c) {
      const std::size_t n = c == label ? n_label
                                       : static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(cfg.other_keys_min),
                                                                              static_cast<std::int64_t>(n_label) - 1));
      const auto& keys = key_words[static_cast<std::size_t>(c)];
      for (std::size_t k = 0; k < n; ++k) {
        doc[positions[next++]] = keys[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(keys.size()) - 1))];
      }
    }
    return doc;
  };
  auto make_split = [&](std::size_t n) {
    std::vector<std::pair<std::vector<std::string>, int>> docs;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(uniform_int(rng, 0, cfg.num_classes - 1));
      docs.emplace_back(make_doc(label), label);
    }
    return docs;
  };
  const auto train_docs = make_split(cfg.train);
  const auto dev_docs = make_split(cfg.dev);
  const auto test_docs = make_split(cfg.test);

  // Vocabulary covers every word the generator can emit so encodings never hit OOV.
  std::vector<std::vector<std::string>> vocab_corpus{filler};
  for (const auto& kw : key_words) vocab_corpus.push_back(kw);
  Dataset ds;
  ds.name = "synthetic-rule";
  ds.space = build_vocab(vocab_corpus, filler.size() + total_keys * 10, cfg.d);
  ds.num_classes = cfg.num_classes;
  for (int c = 0; c < cfg.num_classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
  PlantedKeys planted;
  for (const auto& kw : key_words) {
    std::vector<int> ids;
    for (const auto& w : kw) ids.push_back(ds.space.token_id(w));
    planted.per_class.push_back(std::move(ids));
  }
  ds.planted = std::move(planted);
  auto encode = [&](const auto& docs, std::vector<Example>& out) {
    for (const auto& [doc, label] : docs) out.push_back({encode_text(doc, ds.space, cfg.d), label});
  };
  encode(train_docs, ds.train);
  encode(dev_docs, ds.dev);
  encode(test_docs, ds.test);
  return ds;
}

/// Review-like sentiment corpus: stopwords, punctuation and neutral words with a sparse
/// sprinkling of polar words drawn from synonym groups; polarity mostly agrees with the label.
inline Dataset make_synthetic_sentiment(const DatasetConfig& cfg) {
  static const std::vector<std::vector<std::string>> kPositive = {
      {"good", "great", "excellent", "superb", "fine"},
      {"enjoyable", "entertaining", "fun", "delightful"},
      {"beautiful", "lovely", "gorgeous", "stunning"},
      {"brilliant", "outstanding", "wonderful", "amazing"},
      {"funny", "hilarious", "witty"},
      {"best", "favorite", "perfect"}};
  static const std::vector<std::vector<std::string>> kNegative = {
      {"bad", "awful", "terrible", "horrible", "dreadful"},
      {"boring", "dull", "tedious", "slow"},
      {"stupid", "silly", "dumb", "pointless"},
      {"worst", "waste", "poor", "weak"},
      {"annoying", "irritating", "painful"},
      {"mess", "disaster", "failure"}};
  static const std::vector<std::string> kPunct = {".", ",", "!", "?", "-", "'"};
  const auto& stop = english_stopwords();
  const auto& neutral = detail::neutral_words();
  std::vector<std::string> pos, neg;
  for (const auto& g : kPositive) pos.insert(pos.end(), g.begin(), g.end());
  for (const auto& g : kNegative) neg.insert(neg.end(), g.begin(), g.end());

  Rng rng(cfg.seed);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(v.size()) - 1))];
  };
  auto make_doc = [&](int label) {
    const auto min_len = static_cast<std::int64_t>(std::min<std::size_t>(cfg.min_length, cfg.d));
    const auto length = static_cast<std::size_t>(uniform_int(rng, std::max<std::int64_t>(8, min_len),
                                                             static_cast<std::int64_t>(cfg.d + cfg.d / 4)));
    std::vector<std::string> doc;
    doc.reserve(length);
    for (std::size_t i = 0; i < length; ++i) {
      const double u = open_unit(rng);
      if (u < 0.42) {
        doc.push_back(pick(stop));
      } else if (u < 0.52) {
        doc.push_back(pick(kPunct));
      } else if (u < 0.94) {
        doc.push_back(pick(neutral));
      } else {
        const bool agree = open_unit(rng) < 0.72;
        const bool positive = (label == 1) == agree;
        doc.push_back(pick(positive ? pos : neg));
      }
    }
    return doc;
  };
  auto make_split = [&](std::size_t n) {
    std::vector<std::pair<std::vector<std::string>, int>> docs;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(uniform_int(rng, 0, 1));
      docs.emplace_back(make_doc(label), label);
    }
    return docs;
  };
  const auto train_docs = make_split(cfg.train);
  const auto dev_docs = make_split(cfg.dev);
  const auto test_docs = make_split(cfg.test);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& [doc, l] : train_docs) corpus.push_back(doc);
  if (corpus.empty()) throw std::invalid_argument("synthetic-sentiment: empty train split");
  Dataset ds;
  ds.name = "synthetic-sentiment";
  ds.space = build_vocab(corpus, cfg.max_vocab, cfg.d);
  ds.num_classes = 2;
  ds.class_names = {"negative", "positive"};
  auto encode = [&](const auto& docs, std::vector<Example>& out) {
    for (const auto& [doc, label] : docs) out.push_back({encode_text(doc, ds.space, cfg.d), label});
  };
  encode(train_docs, ds.train);
  encode(dev_docs, ds.dev);
  encode(test_docs, ds.test);
  return ds;
}

namespace detail {
inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::pair<std::string, int>> read_imdb_split(const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, int>> docs;
  for (const auto& [sub, label] : {std::pair<const char*, int>{"neg", 0}, {"pos", 1}}) {
    const auto d = dir / sub;
    if (!std::filesystem::is_directory(d)) throw std::runtime_error("IMDB directory missing: " + d.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(d)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) docs.emplace_back(read_file(f), label);
  }
  return docs;
}
}  // namespace detail

/// Desk-scale subset of the aclImdb release (train/{pos,neg}, test/{pos,neg}).
/// Train is drawn from the official train half; dev and test from the official test half.
inline Dataset load_imdb(const DatasetConfig& cfg) {
  const auto root = resolve_data_path(cfg.path.empty() ? "aclImdb" : cfg.path);
  if (!std::filesystem::is_directory(root)) {
    throw std::runtime_error("IMDB corpus not found at " + root.string() + " (set AIM_DATA_ROOT or dataset.path)");
  }
  auto train_all = detail::read_imdb_split(root / "train");
  auto test_all = detail::read_imdb_split(root / "test");
  if (train_all.size() < cfg.train || test_all.size() < cfg.dev + cfg.test) {
    throw std::runtime_error("IMDB corpus smaller than requested subset sizes");
  }
  Rng rng(cfg.seed);
  shuffle(train_all, rng);
  shuffle(test_all, rng);
  std::vector<std::vector<std::string>> train_tok, dev_tok, test_tok;
  std::vector<int> train_y, dev_y, test_y;
  for (std::size_t i = 0; i < cfg.train; ++i) {
    train_tok.push_back(tokenize(train_all[i].first));
    train_y.push_back(train_all[i].second);
  }
  for (std::size_t i = 0; i < cfg.dev; ++i) {
    dev_tok.push_back(tokenize(test_all[i].first));
    dev_y.push_back(test_all[i].second);
  }
  for (std::size_t i = 0; i < cfg.test; ++i) {
    test_tok.push_back(tokenize(test_all[cfg.dev + i].first));
    test_y.push_back(test_all[cfg.dev + i].second);
  }
  Dataset ds;
  ds.name = "imdb";
  ds.space = build_vocab(train_tok, cfg.max_vocab, cfg.d);
  ds.num_classes = 2;
  ds.class_names = {"negative", "positive"};
  for (std::size_t i = 0; i < train_tok.size(); ++i) ds.train.push_back({encode_text(train_tok[i], ds.space), train_y[i]});
  for (std::size_t i = 0; i < dev_tok.size(); ++i) ds.dev.push_back({encode_text(dev_tok[i], ds.space), dev_y[i]});
  for (std::size_t i = 0; i < test_tok.size(); ++i) ds.test.push_back({encode_text(test_tok[i], ds.space), test_y[i]});
  return ds;
}

/// Seven-column tabular task; the label depends on three of the columns.
inline Dataset make_synthetic_tabular(const DatasetConfig& cfg) {
  Dataset ds;
  ds.name = "synthetic-tabular";
  ds.space = tabular_space({"age", "education", "hours", "capital", "experience", "score", "tenure"});
  ds.num_classes = 2;
  ds.class_names = {"low", "high"};
  Rng rng(cfg.seed);
  auto draw = [&](std::size_t n, std::vector<Example>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(7);
      for (auto& v : row) v = 2.0 * open_unit(rng) - 1.0;
      const double s = 1.5 * row[0] - 2.0 * row[2] + 1.0 * row[5] + 0.2 * (2.0 * open_unit(rng) - 1.0);
      out.push_back({encode_tabular(row), s > 0.0 ? 1 : 0});
    }
  };
  draw(cfg.train, ds.train);
  draw(cfg.dev, ds.dev);
  draw(cfg.test, ds.test);
  return ds;
}

/// CSV with a header row; `label_column` holds integer class ids, every other column is numeric.
inline Dataset load_tabular_csv(const DatasetConfig& cfg) {
  const auto path = resolve_data_path(cfg.path);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  do {
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV " + path.string());
  } while (!line.empty() && line[0] == '#');
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  const auto header = split(line);
  const auto label_it = std::find(header.begin(), header.end(), cfg.label_column);
  if (label_it == header.end()) throw std::runtime_error("CSV has no label column '" + cfg.label_column + "'");
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());
  std::vector<std::string> columns;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i != label_idx) columns.push_back(header[i]);
  }
  std::vector<Example> rows;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw std::runtime_error("ragged CSV row in " + path.string());
    std::vector<double> values;
    int label = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == label_idx) {
        label = std::stoi(cells[i]);
      } else {
        values.push_back(std::stod(cells[i]));
      }
    }
    if (label < 0) throw std::runtime_error("negative label in CSV");
    max_label = std::max(max_label, label);
    rows.push_back({encode_tabular(values), label});
  }
  if (rows.size() < cfg.train + cfg.dev + cfg.test) throw std::runtime_error("CSV smaller than requested split sizes");
  Rng rng(cfg.seed);
  shuffle(rows, rng);
  Dataset ds;
  ds.name = "tabular-csv";
  ds.space = tabular_space(columns);
  ds.num_classes = std::max(2, max_label + 1);
  for (int c = 0; c < ds.num_classes; ++c) ds.class_names.push_back(std::to_string(c));
  ds.train.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cfg.train));
  ds.dev.assign(rows.begin() + static_cast<std::ptrdiff_t>(cfg.train),
                rows.begin() + static_cast<std::ptrdiff_t>(cfg.train + cfg.dev));
  ds.test.assign(rows.begin() + static_cast<std::ptrdiff_t>(cfg.train + cfg.dev),
                 rows.begin() + static_cast<std::ptrdiff_t>(cfg.train + cfg.dev + cfg.test));
  return ds;
}

/// 28x28 three-class shapes (ring, vertical bar, two horizontal bars) with jitter and noise.
inline Dataset make_synthetic_image(const DatasetConfig& cfg) {
  constexpr std::size_t kSide = 28;
  Dataset ds;
  ds.name = "synthetic-image";
  ds.space = image_space(kSide, kSide, cfg.grid);
  ds.num_classes = 3;
  ds.class_names = {"ring", "vbar", "hbars"};
  Rng rng(cfg.seed);
  auto draw = [&](std::size_t n, std::vector<Example>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(uniform_int(rng, 0, 2));
      GrayImage img{kSide, kSide, std::vector<double>(kSide * kSide, 0.0)};
      const double cy = 13.5 + static_cast<double>(uniform_int(rng, -3, 3));
      const double cx = 13.5 + static_cast<double>(uniform_int(rng, -3, 3));
      for (std::size_t r = 0; r < kSide; ++r) {
        for (std::size_t c = 0; c < kSide; ++c) {
          const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
          double v = 0.0;
          if (label == 0) {
            const double rad = std::sqrt(dy * dy + dx * dx);
            v = std::abs(rad - 7.0) < 1.6 ? 1.0 : 0.0;
          } else if (label == 1) {
            v = std::abs(dx) < 2.0 && std::abs(dy) < 10.0 ? 1.0 : 0.0;
          } else {
            v = std::abs(dx) < 9.0 && (std::abs(dy - 5.0) < 1.5 || std::abs(dy + 5.0) < 1.5) ? 1.0 : 0.0;
          }
          img.at(r, c) = std::clamp(v + 0.15 * (open_unit(rng) - 0.5), 0.0, 1.0);
        }
      }
      out.push_back({patch_image(img, cfg.grid), label});
    }
  };
  draw(cfg.train, ds.train);
  draw(cfg.dev, ds.dev);
  draw(cfg.test, ds.test);
  return ds;
}

namespace detail {
inline std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline std::vector<std::pair<GrayImage, int>> read_idx_pair(const std::filesystem::path& images,
                                                            const std::filesystem::path& labels) {
  std::ifstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  if (!im || !lb) throw std::runtime_error("cannot open IDX files under " + images.parent_path().string());
  if (read_be32(im) != 0x00000803 || read_be32(lb) != 0x00000801) throw std::runtime_error("bad IDX magic");
  const auto n = read_be32(im);
  const auto h = read_be32(im), w = read_be32(im);
  if (read_be32(lb) != n) throw std::runtime_error("IDX image/label count mismatch");
  std::vector<std::pair<GrayImage, int>> out;
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (std::uint32_t i = 0; i < n; ++i) {
    im.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    char label = 0;
    lb.read(&label, 1);
    if (!im || !lb) throw std::runtime_error("truncated IDX data");
    GrayImage img{h, w, std::vector<double>(buf.size())};
    for (std::size_t p = 0; p < buf.size(); ++p) img.pixels[p] = buf[p] / 255.0;
    out.emplace_back(std::move(img), static_cast<int>(label));
  }
  return out;
}
}  // namespace detail

/// MNIST-format IDX files restricted to `digits`; labels are re-indexed to 0..k-1.
inline Dataset load_mnist(const DatasetConfig& cfg) {
  const auto root = resolve_data_path(cfg.path.empty() ? "mnist" : cfg.path);
  auto train_all = detail::read_idx_pair(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  auto test_all = detail::read_idx_pair(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte");
  auto keep = [&](std::vector<std::pair<GrayImage, int>>& v) {
    std::vector<std::pair<GrayImage, int>> out;
    for (auto& [img, l] : v) {
      const auto it = std::find(cfg.digits.begin(), cfg.digits.end(), l);
      if (it != cfg.digits.end()) out.emplace_back(std::move(img), static_cast<int>(it - cfg.digits.begin()));
    }
    return out;
  };
  auto train = keep(train_all);
  auto test = keep(test_all);
  if (train.size() < cfg.train || test.size() < cfg.dev + cfg.test) throw std::runtime_error("MNIST subset too small");
  Rng rng(cfg.seed);
  shuffle(train, rng);
  shuffle(test, rng);
  Dataset ds;
  ds.name = "mnist";
  ds.space = image_space(train.front().first.height, train.front().first.width, cfg.grid);
  ds.num_classes = static_cast<int>(cfg.digits.size());
  for (int dgt : cfg.digits) ds.class_names.push_back(std::to_string(dgt));
  for (std::size_t i = 0; i < cfg.train; ++i) ds.train.push_back({patch_image(train[i].first, cfg.grid), train[i].second});
  for (std::size_t i = 0; i < cfg.dev; ++i) ds.dev.push_back({patch_image(test[i].first, cfg.grid), test[i].second});
  for (std::size_t i = 0; i < cfg.test; ++i) {
    ds.test.push_back({patch_image(test[cfg.dev + i].first, cfg.grid), test[cfg.dev + i].second});
  }
  return ds;
}

inline Dataset load_dataset(const DatasetConfig& cfg) {
  if (cfg.name == "synthetic-rule") return make_synthetic_rule(cfg);
  if (cfg.name == "synthetic-sentiment") return make_synthetic_sentiment(cfg);
  if (cfg.name == "imdb") return load_imdb(cfg);
  if (cfg.name == "synthetic-tabular") return make_synthetic_tabular(cfg);
  if (cfg.name == "tabular-csv") return load_tabular_csv(cfg);
  if (cfg.name == "synthetic-image") return make_synthetic_image(cfg);
  if (cfg.name == "mnist") return load_mnist(cfg);
  throw std::invalid_argument("unknown dataset: " + cfg.name);
}

inline std::vector<FeatureVector> inputs_of(const std::vector<Example>& split) {
  std::vector<FeatureVector> out;
  out.reserve(split.size());
  for (const auto& e : split) out.push_back(e.x);
  return out;
}

}  // namespace aim::data
