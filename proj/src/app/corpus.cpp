#include "pmlm/app/corpus.h"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pmlm/core/rng.h"

namespace pmlm {

using nlohmann::json;

std::string to_string(TokenizerKind kind) {
  return kind == TokenizerKind::kWhitespace ? "whitespace" : "char";
}

TokenizerKind parse_tokenizer_kind(const std::string& text) {
  if (text == "char") return TokenizerKind::kChar;
  if (text == "whitespace") return TokenizerKind::kWhitespace;
  throw std::invalid_argument("unknown tokenizer '" + text + "' (expected char or whitespace)");
}

std::vector<std::string> utf8_code_points(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t width = 0;
    if (lead < 0x80) width = 1;
    else if ((lead >> 5) == 0x6) width = 2;
    else if ((lead >> 4) == 0xe) width = 3;
    else if ((lead >> 3) == 0x1e) width = 4;
    else throw std::invalid_argument("invalid UTF-8 lead byte at offset " + std::to_string(i));
    if (i + width > text.size()) throw std::invalid_argument("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t b = 1; b < width; ++b) {
      if ((static_cast<unsigned char>(text[i + b]) >> 6) != 0x2) {
        throw std::invalid_argument("invalid UTF-8 continuation byte at offset " + std::to_string(i + b));
      }
    }
    out.push_back(text.substr(i, width));
    i += width;
  }
  return out;
}

namespace {

const std::vector<std::string>& special_names() {
  static const std::vector<std::string> names{"[PAD]", "[MASK]", "[UNK]"};
  return names;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

std::vector<std::string> split_with(TokenizerKind kind, const std::string& text) {
  return kind == TokenizerKind::kChar ? utf8_code_points(text) : split_whitespace(text);
}

}  // namespace

Vocabulary::Vocabulary(TokenizerKind kind, std::vector<std::string> content_tokens) : kind_(kind) {
  tokens_ = special_names();
  tokens_.insert(tokens_.end(), content_tokens.begin(), content_tokens.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(TokenizerKind kind, const std::vector<std::string>& lines) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (auto& tok : split_with(kind, line)) ++counts[tok];
  }
  for (const auto& name : special_names()) counts.erase(name);
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is ordered by token bytes, which for UTF-8 is code point order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, count] : ranked) tokens.push_back(tok);
  return Vocabulary(kind, std::move(tokens));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " outside " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

std::vector<std::string> Vocabulary::split(const std::string& text) const { return split_with(kind_, text); }

TokenSequence Vocabulary::encode(const std::string& text) const {
  TokenSequence out;
  for (const auto& tok : split(text)) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(const TokenSequence& ids) const {
  std::string out;
  bool first = true;
  for (TokenId id : ids) {
    if (id == kPadId) continue;
    if (kind_ == TokenizerKind::kWhitespace && !first) out.push_back(' ');
    out += token(id);
    first = false;
  }
  return out;
}

std::string Vocabulary::render_snapshot(const TokenSequence& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (kind_ == TokenizerKind::kWhitespace && i > 0) out.push_back(' ');
    out += ids[i] == kMaskId ? std::string("_") : token(ids[i]);
  }
  return out;
}

json Vocabulary::to_json() const {
  return json{{"tokenizer", pmlm::to_string(kind_)},
              {"tokens", std::vector<std::string>(tokens_.begin() + 3, tokens_.end())}};
}

Vocabulary Vocabulary::from_json(const json& j) {
  return Vocabulary(parse_tokenizer_kind(j.at("tokenizer").get<std::string>()),
                    j.at("tokens").get<std::vector<std::string>>());
}

Corpus ingest_lines(const std::vector<std::string>& lines, TokenizerKind tokenizer,
                    std::size_t max_len, const Vocabulary* vocabulary, Split split) {
  if (max_len == 0) throw std::invalid_argument("ingest: max_len must be positive");
  Vocabulary vocab = vocabulary ? *vocabulary : Vocabulary::build(tokenizer, lines);
  if (vocab.kind() != tokenizer) {
    throw std::invalid_argument("ingest: vocabulary tokenizer does not match the requested one");
  }
  Corpus corpus{{}, vocab, split};
  for (const auto& line : lines) {
    const TokenSequence ids = vocab.encode(line);
    for (std::size_t start = 0; start < ids.size(); start += max_len) {
      TokenSequence chunk(max_len, kPadId);
      const std::size_t n = std::min(max_len, ids.size() - start);
      std::copy_n(ids.begin() + static_cast<std::ptrdiff_t>(start), n, chunk.begin());
      corpus.documents.push_back(std::move(chunk));
    }
  }
  if (corpus.documents.empty()) throw std::invalid_argument("ingest: corpus is empty");
  return corpus;
}

Corpus ingest(const std::filesystem::path& path, TokenizerKind tokenizer, std::size_t max_len,
              const Vocabulary* vocabulary, Split split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest: cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  try {
    return ingest_lines(lines, tokenizer, max_len, vocabulary, split);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  static const std::vector<std::string> subjects{"the cat",   "a dog",      "my friend", "the old man",
                                                 "our teacher", "a small bird", "the farmer", "his sister"};
  static const std::vector<std::string> verbs{"sees", "likes", "finds", "chases",
                                              "helps", "paints", "carries", "visits"};
  static const std::vector<std::string> objects{"the red ball", "a green hat", "the big tree",
                                                "an old book",  "the blue door", "a warm coat"};
  static const std::vector<std::string> places{"in the park", "at home", "by the river",
                                               "near the school", "on the hill"};
  Rng rng(seed);
  std::string out;
  while (out.size() < bytes) {
    out += subjects[rng.index(subjects.size())] + ' ' + verbs[rng.index(verbs.size())] + ' ' +
           objects[rng.index(objects.size())] + ' ' + places[rng.index(places.size())] + ".\n";
  }
  return out;
}

}  // namespace pmlm
