#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/nn/tensor.hpp"

namespace aim::data {

enum class Modality { kText, kImage, kTabular };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::kText: return "text";
    case Modality::kImage: return "image-superpixel";
    case Modality::kTabular: return "tabular";
  }
  return "?";
}

inline Modality modality_from_string(std::string_view s) {
  if (s == "text") return Modality::kText;
  if (s == "image-superpixel" || s == "image") return Modality::kImage;
  if (s == "tabular") return Modality::kTabular;
  throw std::invalid_argument("unknown modality: " + std::string(s));
}

/// Id shared by padding, out-of-vocabulary tokens and removed features.
inline constexpr int kSentinel = 0;
inline constexpr std::string_view kSentinelToken = "<pad>";

/// An input as d feature slots. Text slots carry token ids; image and tabular slots
/// carry a row of real values (`values` is d x slot_width).
struct FeatureVector {
  std::vector<int> tokens;
  Matrix values;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return valid.size(); }
  bool is_text() const { return !tokens.empty() || values.size() == 0; }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
  bool operator==(const FeatureVector& o) const {
    return tokens == o.tokens && valid == o.valid && values.rows() == o.values.rows() &&
           values.cols() == o.values.cols() && (values.size() == 0 || values == o.values);
  }
};

struct FeatureSpace {
  Modality modality = Modality::kText;
  std::size_t d = 0;
  std::size_t slot_width = 1;
  /// Text: id -> token, entry 0 is the sentinel.
  std::vector<std::string> vocab;
  /// Image/tabular: one unique descriptor per slot.
  std::vector<std::string> descriptors;
  std::size_t image_height = 0, image_width = 0, grid = 0;

  std::size_t vocab_size() const { return vocab.size(); }

  /// Rebuilds the token -> id lookup; call after editing `vocab`.
  void reindex() {
    index_.clear();
    for (std::size_t i = 1; i < vocab.size(); ++i) index_.emplace(vocab[i], static_cast<int>(i));
  }

  int token_id(const std::string& token) const {
    if (index_.size() + 1 != vocab.size()) throw std::logic_error("FeatureSpace used before reindex()");
    const auto it = index_.find(token);
    return it == index_.end() ? kSentinel : it->second;
  }

  /// Human-readable content of slot i of x.
  std::string display(const FeatureVector& x, std::size_t i) const {
    if (modality == Modality::kText) {
      const int id = x.tokens.at(i);
      return vocab.at(static_cast<std::size_t>(id));
    }
    return descriptors.at(i);
  }

  bool is_sentinel(const FeatureVector& x, std::size_t i) const {
    return modality == Modality::kText && x.tokens.at(i) == kSentinel;
  }

  std::uint64_t hash() const {
    Fnv1a h;
    h.update(to_string(modality));
    h.update_pod(static_cast<std::uint64_t>(d));
    h.update_pod(static_cast<std::uint64_t>(slot_width));
    for (const auto& t : vocab) {
      h.update(t);
      h.update("\n");
    }
    for (const auto& t : descriptors) {
      h.update(t);
      h.update("\n");
    }
    h.update_pod(static_cast<std::uint64_t>(image_height));
    h.update_pod(static_cast<std::uint64_t>(image_width));
    h.update_pod(static_cast<std::uint64_t>(grid));
    return h.digest();
  }

  nlohmann::json to_json() const {
    return {{"modality", to_string(modality)}, {"d", d},
            {"slot_width", slot_width},        {"vocab", vocab},
            {"descriptors", descriptors},      {"image_height", image_height},
            {"image_width", image_width},      {"grid", grid},
            {"hash", to_hex(hash())}};
  }

  static FeatureSpace from_json(const nlohmann::json& j) {
    FeatureSpace s;
    s.modality = modality_from_string(j.at("modality").get<std::string>());
    s.d = j.at("d").get<std::size_t>();
    s.slot_width = j.at("slot_width").get<std::size_t>();
    s.vocab = j.at("vocab").get<std::vector<std::string>>();
    s.descriptors = j.at("descriptors").get<std::vector<std::string>>();
    s.image_height = j.value("image_height", std::size_t{0});
    s.image_width = j.value("image_width", std::size_t{0});
    s.grid = j.value("grid", std::size_t{0});
    if (j.contains("hash") && j.at("hash").get<std::string>() != to_hex(s.hash())) {
      throw std::runtime_error("feature space hash mismatch on load");
    }
    s.reindex();
    return s;
  }

 private:
  std::unordered_map<std::string, int> index_;
};

inline bool is_punct_char(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

/// Whitespace + lowercase tokenizer; every punctuation character becomes its own token.
/// HTML line breaks (as found in movie-review dumps) are treated as whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::string s(text);
  for (std::size_t pos = s.find("<br"); pos != std::string::npos; pos = s.find("<br", pos)) {
    const auto end = s.find('>', pos);
    if (end == std::string::npos) break;
    s.replace(pos, end - pos + 1, " ");
  }
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : s) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      flush();
    } else if (is_punct_char(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  flush();
  return out;
}

/// Most frequent tokens get ids 1..max_vocab (ties broken lexicographically); id 0 is the sentinel.
inline FeatureSpace build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t max_vocab,
                                std::size_t d = 400) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (d == 0) throw std::invalid_argument("build_vocab: d must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus) {
    for (const auto& t : doc) {
      if (t != kSentinelToken) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_vocab) ranked.resize(max_vocab);
  FeatureSpace space;
  space.modality = Modality::kText;
  space.d = d;
  space.vocab.reserve(ranked.size() + 1);
  space.vocab.emplace_back(kSentinelToken);
  for (auto& [tok, n] : ranked) space.vocab.push_back(tok);
  space.reindex();
  return space;
}

/// First d tokens mapped to ids (OOV -> sentinel), right-padded with the sentinel.
inline FeatureVector encode_text(const std::vector<std::string>& doc, const FeatureSpace& space, std::size_t d) {
  if (space.modality != Modality::kText) throw std::invalid_argument("encode_text: space is not text");
  FeatureVector x;
  x.tokens.assign(d, kSentinel);
  x.valid.assign(d, 0);
  const std::size_t n = std::min(d, doc.size());
  for (std::size_t i = 0; i < n; ++i) {
    x.tokens[i] = space.token_id(doc[i]);
    x.valid[i] = 1;
  }
  return x;
}

inline FeatureVector encode_text(const std::vector<std::string>& doc, const FeatureSpace& space) {
  return encode_text(doc, space, space.d);
}

/// Inverse of encode_text for in-vocabulary tokens; padding slots are dropped.
inline std::vector<std::string> decode_text(const FeatureVector& x, const FeatureSpace& space) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x.valid[i]) out.push_back(space.vocab.at(static_cast<std::size_t>(x.tokens[i])));
  }
  return out;
}

/// A tabular row as d slots of width 1 with an all-ones validity mask.
inline FeatureVector encode_tabular(const std::vector<double>& row) {
  FeatureVector x;
  x.values = Matrix(static_cast<Eigen::Index>(row.size()), 1);
  for (std::size_t i = 0; i < row.size(); ++i) x.values(static_cast<Eigen::Index>(i), 0) = row[i];
  x.valid.assign(row.size(), 1);
  return x;
}

inline FeatureSpace tabular_space(std::vector<std::string> columns) {
  if (columns.empty()) throw std::invalid_argument("tabular space needs at least one column");
  FeatureSpace s;
  s.modality = Modality::kTabular;
  s.d = columns.size();
  s.slot_width = 1;
  s.descriptors = std::move(columns);
  return s;
}

}  // namespace aim::data
