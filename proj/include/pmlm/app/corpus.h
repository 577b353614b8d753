#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmlm/core/tokens.h"

namespace pmlm {

enum class TokenizerKind { kChar, kWhitespace };

std::string to_string(TokenizerKind kind);
TokenizerKind parse_tokenizer_kind(const std::string& text);

// Splits UTF-8 text into code points (each returned as its UTF-8 bytes).
// Throws std::invalid_argument on malformed input.
std::vector<std::string> utf8_code_points(const std::string& text);

// Token <-> id map. Ids 0..2 are [PAD], [MASK], [UNK]; content tokens follow,
// ordered by descending training frequency and then by code point.
class Vocabulary {
 public:
  Vocabulary(TokenizerKind kind, std::vector<std::string> content_tokens);

  static Vocabulary build(TokenizerKind kind, const std::vector<std::string>& lines);

  TokenizerKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& token) const;  // kUnkId when absent
  bool contains(const std::string& token) const { return ids_.contains(token); }

  std::vector<std::string> split(const std::string& text) const;
  TokenSequence encode(const std::string& text) const;
  // Specials render as "[PAD]", "[MASK]" and "[UNK]"; [PAD] is skipped.
  std::string decode(const TokenSequence& ids) const;
  // Like decode but shows [MASK] as "_" and keeps every position visible.
  std::string render_snapshot(const TokenSequence& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  TokenizerKind kind_;
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> ids_;
};

enum class Split { kTrain, kTest };

struct Corpus {
  std::vector<TokenSequence> documents;  // each exactly max_len, [PAD]-filled
  Vocabulary vocabulary;
  Split split = Split::kTrain;
};

// Reads newline-delimited UTF-8 documents. Each non-empty line is cut into
// ceil(len / max_len) chunks; the last chunk is padded with [PAD]. The
// vocabulary is built from the file unless one is supplied.
Corpus ingest(const std::filesystem::path& path, TokenizerKind tokenizer, std::size_t max_len,
              const Vocabulary* vocabulary = nullptr, Split split = Split::kTrain);
Corpus ingest_lines(const std::vector<std::string>& lines, TokenizerKind tokenizer,
                    std::size_t max_len, const Vocabulary* vocabulary = nullptr,
                    Split split = Split::kTrain);

// Deterministic template-grammar text (one short sentence per line) of about
// `bytes` bytes.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace pmlm
