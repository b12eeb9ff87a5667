#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "aim/data/dataset.hpp"
#include "aim/data/lexicon.hpp"

// Token-level metrics on explanations: purity, brevity, Jaccard overlaps.

namespace aim::metrics {

using data::StopLexicon;

inline bool is_sentinel(const std::string& t) { return t == data::kSentinelToken; }

/// Fraction of stopword/punctuation tokens; sentinel slots are ignored. Empty -> 0.
inline double purity(const std::vector<std::string>& tokens, const StopLexicon& lex) {
  std::size_t n = 0, stop = 0;
  for (const auto& t : tokens) {
    if (is_sentinel(t)) continue;
    ++n;
    stop += lex.contains(t) ? 1u : 0u;
  }
  return n == 0 ? 0.0 : static_cast<double>(stop) / static_cast<double>(n);
}

/// token -> synonym-set ids, loaded from a `#aim-synonyms-v1` table.
class SynonymDb {
 public:
  SynonymDb() = default;

  static SynonymDb load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synonym table " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("#aim-synonyms-v1", 0) != 0) {
      throw std::runtime_error("not a synonym table: " + path.string());
    }
    SynonymDb db;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw std::runtime_error("synonym table line " + std::to_string(lineno) + ": no tab");
      std::istringstream ids(line.substr(tab + 1));
      std::vector<std::string> v;
      for (std::string id; ids >> id;) v.push_back(id);
      db.add(line.substr(0, tab), std::move(v));
    }
    return db;
  }

  void add(const std::string& token, std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    table_[token] = std::move(ids);
  }

  const std::vector<std::string>& ids(const std::string& token) const {
    static const std::vector<std::string> kNone;
    const auto it = table_.find(token);
    return it == table_.end() ? kNone : it->second;
  }

  bool share_synset(const std::string& a, const std::string& b) const {
    const auto& x = ids(a);
    const auto& y = ids(b);
    std::size_t i = 0, j = 0;
    while (i < x.size() && j < y.size()) {
      if (x[i] == y[j]) return true;
      x[i] < y[j] ? ++i : ++j;
    }
    return false;
  }

  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, std::vector<std::string>> table_;
};

/// Bundled WordNet export: <source>/data, then the data root.
inline std::filesystem::path default_synonym_path() {
#ifdef AIM_SOURCE_DIR
  const std::filesystem::path bundled = std::filesystem::path(AIM_SOURCE_DIR) / "data" / "wordnet_synonyms.tsv";
  if (std::filesystem::exists(bundled)) return bundled;
#endif
  return data::data_root() / "wordnet_synonyms.tsv";
}

/// Union-find over small index sets.
class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }
  std::size_t components() {
    std::size_t c = 0;
    for (std::size_t i = 0; i < parent_.size(); ++i) c += find(i) == i ? 1u : 0u;
    return c;
  }

 private:
  std::vector<std::size_t> parent_;
};

/// Number of clusters when tokens are linked iff identical or sharing a synonym set.
inline std::size_t brevity(const std::vector<std::string>& tokens, const SynonymDb& db) {
  std::vector<std::string> toks;
  for (const auto& t : tokens) {
    if (!is_sentinel(t)) toks.push_back(t);
  }
  // Link through shared synset ids rather than all pairs.
  DisjointSets sets(toks.size());
  std::unordered_map<std::string, std::size_t> owner;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (auto [it, fresh] = owner.emplace("w:" + toks[i], i); !fresh) sets.unite(i, it->second);
    for (const auto& id : db.ids(toks[i])) {
      if (auto [it, fresh] = owner.emplace("s:" + id, i); !fresh) sets.unite(i, it->second);
    }
  }
  return sets.components();
}

/// |a ∩ b| / |a ∪ b| over deduplicated sets; two empty sets give 1.
inline double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> x(a.begin(), a.end()), y(b.begin(), b.end());
  if (x.empty() && y.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : x) inter += y.count(t);
  return static_cast<double>(inter) / static_cast<double>(x.size() + y.size() - inter);
}

/// Drops stopwords, punctuation and sentinel slots.
inline std::vector<std::string> content_tokens(const std::vector<std::string>& tokens, const StopLexicon& lex) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (!is_sentinel(t) && !lex.contains(t)) out.push_back(t);
  }
  return out;
}

/// Mean Jaccard between the anchor's explanation and each neighbor's, stopwords removed.
/// No neighbors -> 0.
inline double iou_stability(const std::vector<std::string>& anchor, const std::vector<std::vector<std::string>>& neighbors,
                            const StopLexicon& lex) {
  if (neighbors.empty()) return 0.0;
  const auto a = content_tokens(anchor, lex);
  double s = 0.0;
  for (const auto& n : neighbors) s += jaccard(a, content_tokens(n, lex));
  return s / static_cast<double>(neighbors.size());
}

/// Per instance: mean over unordered class pairs of the Jaccard between the classes' token sets.
/// `per_class[c][i]` is the explanation of instance i for class c.
inline std::vector<double> pairwise_iou(const std::vector<std::vector<std::vector<std::string>>>& per_class) {
  if (per_class.size() < 2) throw std::invalid_argument("pairwise_iou needs at least two classes");
  const std::size_t n = per_class.front().size();
  for (const auto& c : per_class) {
    if (c.size() != n) throw std::invalid_argument("pairwise_iou: ragged class lists");
  }
  std::vector<double> out(n, 0.0);
  const std::size_t classes = per_class.size();
  const double pairs = static_cast<double>(classes * (classes - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < classes; ++a) {
      for (std::size_t b = a + 1; b < classes; ++b) out[i] += jaccard(per_class[a][i], per_class[b][i]);
    }
    out[i] /= pairs;
  }
  return out;
}

}  // namespace aim::metrics
