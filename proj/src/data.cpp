#include "qspike/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace qspike {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

Corpus parse_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  const std::vector<std::string> header = split_tabs(trim_cr(line));
  Corpus c;
  if (header == std::vector<std::string>{"text_a", "label"}) {
    c.pair = false;
  } else if (header == std::vector<std::string>{"text_a", "text_b", "label"}) {
    c.pair = true;
  } else {
    throw ParseError("header must be 'text_a<TAB>label' or 'text_a<TAB>text_b<TAB>label'", 1);
  }
  const std::size_t cols = header.size();
  std::vector<std::string> raw_labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != cols) {
      throw ParseError("expected " + std::to_string(cols) + " fields, found " + std::to_string(f.size()), lineno);
    }
    if (f.back().empty()) throw ParseError("missing label", lineno);
    TextExample ex;
    ex.text_a = f[0];
    if (c.pair) ex.text_b = f[1];
    c.examples.push_back(std::move(ex));
    raw_labels.push_back(f.back());
  }
  std::set<std::string> names(raw_labels.begin(), raw_labels.end());
  c.label_names.assign(names.begin(), names.end());
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    c.examples[i].label = static_cast<std::size_t>(
        std::lower_bound(c.label_names.begin(), c.label_names.end(), raw_labels[i]) - c.label_names.begin());
  }
  return c;
}

Corpus load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);
  return parse_tsv(in);
}

void align_labels(Corpus& c, const Corpus& reference) {
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    const std::string& name = c.label_names.at(c.examples[i].label);
    const auto it = std::find(reference.label_names.begin(), reference.label_names.end(), name);
    if (it == reference.label_names.end()) throw ParseError("label '" + name + "' not in training labels", i + 2);
    c.examples[i].label = static_cast<std::size_t>(it - reference.label_names.begin());
  }
  c.label_names = reference.label_names;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
    out.push_back(w);
  }
  return out;
}

Tokenizer::Tokenizer(std::vector<std::string> vocab, std::size_t max_len) : vocab_(std::move(vocab)), max_len_(max_len) {
  if (max_len_ < 2) throw ConfigError("tokenizer max_len must be at least 2");
  if (vocab_.size() < 4 || vocab_[kPad] != "[PAD]" || vocab_[kUnk] != "[UNK]" || vocab_[kCls] != "[CLS]" ||
      vocab_[kSep] != "[SEP]") {
    throw ConfigError("vocabulary must start with [PAD] [UNK] [CLS] [SEP]");
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!index_.emplace(vocab_[i], i).second) throw ConfigError("duplicate vocabulary entry '" + vocab_[i] + "'");
  }
}

Tokenizer Tokenizer::build(const Corpus& train, std::size_t max_len) {
  std::set<std::string> words;
  for (const auto& ex : train.examples) {
    for (auto& w : split_words(ex.text_a)) words.insert(w);
    if (ex.text_b)
      for (auto& w : split_words(*ex.text_b)) words.insert(w);
  }
  std::vector<std::string> vocab{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (const auto& w : words)
    if (w != "[pad]" && w != "[unk]" && w != "[cls]" && w != "[sep]") vocab.push_back(w);
  return Tokenizer(std::move(vocab), max_len);
}

std::size_t Tokenizer::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

TokenIds Tokenizer::encode(const std::string& text_a, const std::optional<std::string>& text_b) const {
  TokenIds ids{kCls};
  for (const auto& w : split_words(text_a)) ids.push_back(id(w));
  ids.push_back(kSep);
  if (text_b) {
    for (const auto& w : split_words(*text_b)) ids.push_back(id(w));
    ids.push_back(kSep);
  }
  ids.resize(max_len_, kPad);
  return ids;
}

std::string Tokenizer::decode(const TokenIds& ids) const {
  std::string out;
  for (std::size_t id : ids) {
    if (id <= kSep || id >= vocab_.size()) continue;
    if (!out.empty()) out += ' ';
    out += vocab_[id];
  }
  return out;
}

std::vector<Example> encode_corpus(const Tokenizer& tok, const Corpus& c) {
  std::vector<Example> out;
  out.reserve(c.examples.size());
  for (const auto& ex : c.examples) out.push_back(Example{tok.encode(ex.text_a, ex.text_b), ex.label});
  return out;
}

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "keyword-presence") return SynthKind::KeywordPresence;
  if (s == "parity-of-keywords") return SynthKind::ParityOfKeywords;
  if (s == "pair-overlap") return SynthKind::PairOverlap;
  throw ConfigError("unknown synthetic task '" + s + "'");
}

std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::KeywordPresence: return "keyword-presence";
    case SynthKind::ParityOfKeywords: return "parity-of-keywords";
    case SynthKind::PairOverlap: return "pair-overlap";
  }
  return "?";
}

namespace {

std::string filler(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%03zu", i);
  return buf;
}

std::string join(const std::vector<std::string>& w) {
  std::string s;
  for (const auto& x : w) {
    if (!s.empty()) s += ' ';
    s += x;
  }
  return s;
}

// `count` distinct fillers, optionally avoiding a set.
std::vector<std::string> distinct_fillers(std::size_t count, std::size_t pool, const std::set<std::string>& avoid,
                                          Rng& rng) {
  std::vector<std::string> out;
  std::set<std::string> used = avoid;
  while (out.size() < count) {
    std::string w = filler(rng.index(pool));
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

Corpus synth_task(const SynthConfig& cfg, std::size_t size, std::uint64_t seed) {
  if (size < 2) throw ConfigError("synthetic corpus needs at least 2 examples");
  if (cfg.min_words < 3 || cfg.max_words < cfg.min_words) throw ConfigError("synthetic sentence lengths");
  if (cfg.keywords == 0) throw ConfigError("synthetic task needs at least one keyword");
  if (cfg.filler_words < 2 * cfg.max_words + 1) throw ConfigError("synthetic filler vocabulary too small");
  Rng rng(seed);
  std::vector<std::size_t> labels(size);
  for (std::size_t i = 0; i < size; ++i) labels[i] = i % 2;
  shuffle(labels, rng);

  Corpus c;
  c.label_names = {"0", "1"};
  c.pair = cfg.kind == SynthKind::PairOverlap;
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t label = labels[i];
    const std::size_t len = cfg.min_words + rng.index(cfg.max_words - cfg.min_words + 1);
    TextExample ex;
    ex.label = label;
    if (cfg.kind == SynthKind::PairOverlap) {
      std::vector<std::string> a = distinct_fillers(len, cfg.filler_words, {}, rng);
      std::vector<std::string> b =
          distinct_fillers(len, cfg.filler_words, std::set<std::string>(a.begin(), a.end()), rng);
      if (label == 1) b[rng.index(b.size())] = a[rng.index(a.size())];
      ex.text_a = join(a);
      ex.text_b = join(b);
    } else {
      std::vector<std::string> words;
      for (std::size_t k = 0; k < len; ++k) words.push_back(filler(rng.index(cfg.filler_words)));
      std::size_t count = 0;
      if (cfg.kind == SynthKind::KeywordPresence) {
        count = label == 1 ? 1 + rng.index(2) : 0;
      } else {
        count = label + 2 * rng.index(2);  // {0, 2} or {1, 3}
      }
      std::vector<std::size_t> slots(len);
      for (std::size_t k = 0; k < len; ++k) slots[k] = k;
      shuffle(slots, rng);
      for (std::size_t k = 0; k < count; ++k) words[slots[k]] = "k" + std::to_string(rng.index(cfg.keywords));
      ex.text_a = join(words);
    }
    c.examples.push_back(std::move(ex));
  }
  return c;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

}  // namespace qspike
