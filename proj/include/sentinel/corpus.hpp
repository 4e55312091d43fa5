#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sentinel/types.hpp"

namespace sentinel {

/// Word-level vocabulary. Ids are dense in [0, size()); the three reserved
/// entries always occupy ids 0..2.
class Vocab {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kSentinel = "<sr>";

  Vocab();

  /// Appends `token` if absent and returns its id.
  TokenId add(std::string_view token);

  /// Id of `token`, or unk_id() when it is not in the vocabulary.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  Index size() const { return static_cast<Index>(tokens_.size()); }
  TokenId unk_id() const { return 0; }
  TokenId eos_id() const { return 1; }
  TokenId sr_id() const { return 2; }

  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Token-per-line text; id is the zero-based line number.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Token ids of one document plus chunk spans partitioning [0, size()).
struct TokenSequence {
  std::vector<TokenId> tokens;
  std::vector<Span> chunks;

  Index size() const { return static_cast<Index>(tokens.size()); }
  bool operator==(const TokenSequence&) const = default;
};

/// Throws std::invalid_argument if the spans do not partition the sequence
/// into non-empty in-order pieces, or if any token is the sentinel id.
void validate_token_sequence(const TokenSequence& seq, const Vocab& vocab);

/// Whitespace-delimited surface forms.
std::vector<std::string> split_words(std::string_view text);

/// Words occurring at least `min_count` times get ids, ordered by descending
/// frequency then lexicographically. Throws on an empty corpus.
Vocab build_vocab(const std::vector<std::string>& documents, int min_count = 1);

/// Sentences end at '.', '!' or '?' followed by whitespace or end of text.
/// A trailing fragment without a terminator is its own sentence.
std::vector<std::string> split_sentences(std::string_view text);

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab);

/// Tokenized sentences in order with <eos> appended to the final chunk;
/// every `sentences_per_chunk` consecutive sentences form one chunk.
TokenSequence chunk_document(std::string_view text, const Vocab& vocab,
                             int sentences_per_chunk);

enum class DocumentSplit { kBlankLines, kPerFile };

/// Reads documents from each path. kBlankLines splits a file on blank lines;
/// kPerFile treats each file as one document. Empty documents are dropped.
std::vector<std::string> load_documents(const std::vector<std::filesystem::path>& paths,
                                        DocumentSplit split);

}  // namespace sentinel
