#include "sentinel/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sentinel {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool blank_line(std::string_view line) {
  return std::all_of(line.begin(), line.end(), is_space);
}

}  // namespace

Vocab::Vocab() {
  add(kUnk);
  add(kEos);
  add(kSentinel);
}

TokenId Vocab::add(std::string_view token) {
  if (token.empty()) throw std::invalid_argument("empty vocabulary entry");
  std::string key(token);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(key, id);
  tokens_.push_back(std::move(key));
  return id;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_id() : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != kUnk || lines[1] != kEos || lines[2] != kSentinel)
    throw std::runtime_error("vocab file lacks the reserved header: " + path.string());
  Vocab vocab;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (vocab.add(lines[i]) != static_cast<TokenId>(i))
      throw std::runtime_error("duplicate vocab entry '" + lines[i] + "'");
  }
  return vocab;
}

void validate_token_sequence(const TokenSequence& seq, const Vocab& vocab) {
  Index cursor = 0;
  for (const auto& span : seq.chunks) {
    if (span.begin != cursor || span.end <= span.begin)
      throw std::invalid_argument("chunk spans must be non-empty and contiguous");
    cursor = span.end;
  }
  if (cursor != seq.size()) throw std::invalid_argument("chunk spans must cover the sequence");
  for (TokenId t : seq.tokens) {
    if (t == vocab.sr_id()) throw std::invalid_argument("token sequence contains <sr>");
    if (t < 0 || t >= vocab.size()) throw std::invalid_argument("token id out of range");
  }
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

Vocab build_vocab(const std::vector<std::string>& documents, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& doc : documents)
    for (auto& w : split_words(doc)) ++counts[std::move(w)];
  if (counts.empty()) throw std::invalid_argument("empty corpus");

  std::vector<std::pair<std::string, long>> kept;
  for (auto& [word, n] : counts)
    if (n >= min_count) kept.emplace_back(word, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab vocab;
  for (const auto& [word, n] : kept) {
    // Surface forms spelled like a reserved entry are already present.
    vocab.add(word);
  }
  return vocab;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  auto emit = [&](std::size_t begin, std::size_t end) {
    auto words = split_words(text.substr(begin, end - begin));
    if (words.empty()) return;
    std::string s = words.front();
    for (std::size_t k = 1; k < words.size(); ++k) s += ' ' + words[k];
    sentences.push_back(std::move(s));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_terminal(text[i]) && (i + 1 == text.size() || is_space(text[i + 1]))) {
      emit(start, i + 1);
      start = i + 1;
    }
  }
  emit(start, text.size());
  return sentences;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    TokenId id = vocab.id(w);
    // A literal "<sr>" in raw text is not a sentinel.
    ids.push_back(id == vocab.sr_id() ? vocab.unk_id() : id);
  }
  return ids;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

TokenSequence chunk_document(std::string_view text, const Vocab& vocab,
                             int sentences_per_chunk) {
  if (sentences_per_chunk < 1) throw std::invalid_argument("sentences_per_chunk must be >= 1");
  TokenSequence seq;
  const auto sentences = split_sentences(text);
  for (std::size_t s = 0; s < sentences.size(); s += static_cast<std::size_t>(sentences_per_chunk)) {
    const Index begin = seq.size();
    const std::size_t stop = std::min(sentences.size(), s + static_cast<std::size_t>(sentences_per_chunk));
    for (std::size_t k = s; k < stop; ++k) {
      auto ids = tokenize(sentences[k], vocab);
      seq.tokens.insert(seq.tokens.end(), ids.begin(), ids.end());
    }
    seq.chunks.push_back({begin, seq.size()});
  }
  if (seq.tokens.empty()) throw std::invalid_argument("document has zero tokens");
  seq.tokens.push_back(vocab.eos_id());
  seq.chunks.back().end = seq.size();
  return seq;
}

std::vector<std::string> load_documents(const std::vector<std::filesystem::path>& paths,
                                        DocumentSplit split) {
  std::vector<std::string> docs;
  for (const auto& path : paths) {
    const std::string content = read_file(path);
    if (split == DocumentSplit::kPerFile) {
      if (!split_words(content).empty()) docs.push_back(content);
      continue;
    }
    std::istringstream in(content);
    std::string line, current;
    auto flush = [&] {
      if (!split_words(current).empty()) docs.push_back(current);
      current.clear();
    };
    while (std::getline(in, line)) {
      if (blank_line(line)) {
        flush();
      } else {
        current += line;
        current += '\n';
      }
    }
    flush();
  }
  return docs;
}

}  // namespace sentinel
