#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "memsearch/protocol.hpp"

// Local lexical search engine over a JSONL corpus, the stand-in for a dense
// retriever behind the same search interface. Scoring is Okapi BM25 with
// k1 = 1.2, b = 0.75 and the nonnegative idf variant
// ln(1 + (N - df + 0.5) / (df + 0.5)). Duplicate query terms weigh by
// multiplicity. The index is immutable after build; concurrent searches need
// no coordination.

namespace memsearch {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Passage {
  std::string id;
  std::string title;
  std::string body;
  double score = 0.0;
};

// lowercase, split on non-alphanumeric (ASCII)
inline std::vector<std::string> text_terms(std::string_view text) {
  std::vector<std::string> terms;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      terms.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(std::move(cur));
  return terms;
}

class Index {
 public:
  struct Doc {
    std::string id;
    std::string title;
    std::string body;
    std::size_t length = 0;  // term count
  };

  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;
  static constexpr const char* kFormatName = "memsearch-index";
  static constexpr int kFormatVersion = 1;

  std::size_t size() const { return docs_.size(); }
  const std::vector<Doc>& docs() const { return docs_; }
  double avg_doc_length() const { return avg_doc_len_; }

  std::size_t document_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  void add_document(Doc doc) {
    auto terms = text_terms(doc.body);
    doc.length = terms.size();
    std::unordered_map<std::string, std::uint32_t> tf;
    for (auto& t : terms) ++tf[t];
    auto ord = static_cast<std::uint32_t>(docs_.size());
    for (auto& [term, freq] : tf) {
      postings_[term].emplace_back(ord, freq);
    }
    docs_.push_back(std::move(doc));
    recompute_avg();
  }

  std::vector<Passage> search(std::string_view query, std::size_t k) const;

  void save(const std::string& path) const;
  static Index load(const std::string& path);
  friend Index build_index(const std::string& path);

 private:
  void recompute_avg() {
    std::size_t total = 0;
    for (const auto& d : docs_) total += d.length;
    avg_doc_len_ = docs_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs_.size());
  }

  std::vector<Doc> docs_;
  // term -> (doc ordinal, term frequency), ordinals ascending
  std::map<std::string, std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings_;
  double avg_doc_len_ = 0.0;
};

// Corpus: JSONL, one {"id", "title", "text"} object per line, UTF-8. Errors
// name the offending line. Reserved tag substrings are rejected here; the
// grammar has no escaping scheme.
inline Index build_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open corpus file: " + path);

  Index index;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  std::size_t total_len = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = [&] { return path + ":" + std::to_string(lineno); };
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw IngestError(where() + ": malformed JSON line");
    }
    for (const char* field : {"id", "title", "text"}) {
      if (!doc.contains(field) || !doc[field].is_string()) {
        throw IngestError(where() + ": missing string field '" + field + "'");
      }
    }
    Index::Doc d;
    d.id = doc["id"].get<std::string>();
    d.title = doc["title"].get<std::string>();
    d.body = doc["text"].get<std::string>();
    if (!seen_ids.insert(d.id).second) {
      throw IngestError(where() + ": duplicate id '" + d.id + "'");
    }
    if (contains_reserved_tag(d.id) || contains_reserved_tag(d.title) ||
        contains_reserved_tag(d.body)) {
      throw IngestError(where() + ": reserved tag substring in document");
    }
    auto terms = text_terms(d.body);
    d.length = terms.size();
    total_len += d.length;
    std::unordered_map<std::string, std::uint32_t> tf;
    for (auto& t : terms) ++tf[t];
    auto ord = static_cast<std::uint32_t>(index.docs_.size());
    for (auto& [term, freq] : tf) {
      index.postings_[term].emplace_back(ord, freq);
    }
    index.docs_.push_back(std::move(d));
  }
  index.avg_doc_len_ = index.docs_.empty()
                           ? 0.0
                           : static_cast<double>(total_len) / static_cast<double>(index.docs_.size());
  return index;
}

// Top-k by BM25, ties broken by ascending id. Only documents matching at
// least one query term are candidates, so an absent-everywhere query yields
// an empty list, as does a query that normalizes to zero terms.
inline std::vector<Passage> Index::search(std::string_view query, std::size_t k) const {
  if (k < 1) throw std::invalid_argument("search: k must be >= 1");
  auto qterms = text_terms(query);
  if (qterms.empty() || docs_.empty()) return {};

  const double n = static_cast<double>(docs_.size());
  std::unordered_map<std::uint32_t, double> scores;
  for (const auto& term : qterms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double df = static_cast<double>(it->second.size());
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (auto [ord, tf] : it->second) {
      const double dl = static_cast<double>(docs_[ord].length);
      const double denom = static_cast<double>(tf) + kK1 * (1.0 - kB + kB * dl / avg_doc_len_);
      scores[ord] += idf * (static_cast<double>(tf) * (kK1 + 1.0)) / denom;
    }
  }
  if (scores.empty()) return {};

  std::vector<std::pair<std::uint32_t, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return docs_[a.first].id < docs_[b.first].id;
  });
  if (ranked.size() > k) ranked.resize(k);

  std::vector<Passage> out;
  out.reserve(ranked.size());
  for (auto [ord, score] : ranked) {
    out.push_back(Passage{docs_[ord].id, docs_[ord].title, docs_[ord].body, score});
  }
  return out;
}

inline std::vector<Passage> search(const Index& index, std::string_view query, std::size_t k) {
  return index.search(query, k);
}

inline void Index::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["k1"] = kK1;
  j["b"] = kB;
  auto docs = nlohmann::ordered_json::array();
  for (const auto& d : docs_) {
    docs.push_back({{"id", d.id}, {"title", d.title}, {"body", d.body}, {"length", d.length}});
  }
  j["docs"] = std::move(docs);
  nlohmann::ordered_json postings = nlohmann::ordered_json::object();
  for (const auto& [term, plist] : postings_) {
    auto arr = nlohmann::ordered_json::array();
    for (auto [ord, tf] : plist) arr.push_back({ord, tf});
    postings[term] = std::move(arr);
  }
  j["postings"] = std::move(postings);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot open index file for writing: " + path);
  out << j.dump(1) << '\n';
}

inline Index Index::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open index file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw IngestError(path + ": malformed index file");
  }
  if (j.value("format", "") != kFormatName || j.value("version", -1) != kFormatVersion) {
    throw IngestError(path + ": unsupported index format/version");
  }
  Index index;
  std::size_t total_len = 0;
  for (const auto& d : j.at("docs")) {
    Doc doc;
    doc.id = d.at("id").get<std::string>();
    doc.title = d.at("title").get<std::string>();
    doc.body = d.at("body").get<std::string>();
    doc.length = d.at("length").get<std::size_t>();
    total_len += doc.length;
    index.docs_.push_back(std::move(doc));
  }
  for (auto it = j.at("postings").begin(); it != j.at("postings").end(); ++it) {
    auto& plist = index.postings_[it.key()];
    for (const auto& pair : it.value()) {
      plist.emplace_back(pair.at(0).get<std::uint32_t>(), pair.at(1).get<std::uint32_t>());
    }
  }
  index.avg_doc_len_ = index.docs_.empty()
                           ? 0.0
                           : static_cast<double>(total_len) / static_cast<double>(index.docs_.size());
  return index;
}

}  // namespace memsearch
