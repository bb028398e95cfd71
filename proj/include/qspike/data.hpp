#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qspike/implicit_grad.hpp"
#include "qspike/rng.hpp"

namespace qspike {

struct TextExample {
  std::string text_a;
  std::optional<std::string> text_b;
  std::size_t label = 0;
};

struct Corpus {
  std::vector<TextExample> examples;
  std::vector<std::string> label_names;  // label id -> name
  bool pair = false;
  std::string split = "train";
};

/// Reads a tab-separated file whose header names the columns text_a,
/// optional text_b, and label (in that order). Labels are mapped to ids in
/// sorted name order.
Corpus load_tsv(const std::string& path);
Corpus parse_tsv(std::istream& in);
/// Re-labels `c` with the label names of `reference` (dev sets must share
/// the training label ids). Unknown labels raise ParseError.
void align_labels(Corpus& c, const Corpus& reference);

inline constexpr std::size_t kPad = 0, kUnk = 1, kCls = 2, kSep = 3;

class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(std::vector<std::string> vocab, std::size_t max_len);

  /// Vocabulary from a training corpus: specials, then the lowercased
  /// whitespace tokens in sorted order.
  static Tokenizer build(const Corpus& train, std::size_t max_len);

  /// [CLS] a [SEP] (b [SEP]) padded or truncated to max_len.
  TokenIds encode(const std::string& text_a, const std::optional<std::string>& text_b = std::nullopt) const;
  /// Space-joined tokens without specials.
  std::string decode(const TokenIds& ids) const;

  std::size_t size() const { return vocab_.size(); }
  std::size_t max_len() const { return max_len_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  std::size_t id(const std::string& token) const;

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, std::size_t> index_;
  std::size_t max_len_ = 32;
};

std::vector<std::string> split_words(const std::string& text);

std::vector<Example> encode_corpus(const Tokenizer& tok, const Corpus& c);

enum class SynthKind { KeywordPresence, ParityOfKeywords, PairOverlap };
SynthKind parse_synth_kind(const std::string& s);
std::string to_string(SynthKind k);

struct SynthConfig {
  SynthKind kind = SynthKind::KeywordPresence;
  std::size_t filler_words = 64;
  std::size_t keywords = 8;
  std::size_t min_words = 6;
  std::size_t max_words = 12;
};

/// Balanced, deterministic corpus whose labels are a fixed function of the
/// text (so a perfect classifier exists).
Corpus synth_task(const SynthConfig& cfg, std::size_t size, std::uint64_t seed);

/// Example indices grouped into batches after a seeded shuffle; every index
/// appears exactly once.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

}  // namespace qspike
