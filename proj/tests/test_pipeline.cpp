#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "sentinel/pipeline.hpp"
#include "test_support.hpp"

using namespace sentinel;

namespace {

const Vocab kVocab = test::letter_vocab();
const TokenId A = kVocab.id("A"), B = kVocab.id("B"), C = kVocab.id("C"), D = kVocab.id("D");
const TokenId P = kVocab.id("."), S = kVocab.sr_id(), IGN = kIgnoreLabel;

// [A B . | C D .]
TokenSequence two_chunks() { return {{A, B, P, C, D, P}, {{0, 3}, {3, 6}}}; }

}  // namespace

TEST_CASE("inject_sentinels places one <sr> after each chunk") {
  const auto s = inject_sentinels(two_chunks(), kVocab);
  CHECK(s.tokens == std::vector<TokenId>{A, B, P, S, C, D, P, S});
  CHECK(s.is_sentinel == std::vector<std::uint8_t>{0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(s.chunk_ids == std::vector<Index>{0, 0, 0, 0, 1, 1, 1, 1});

  const auto single = inject_sentinels({{A, B}, {{0, 2}}}, kVocab);
  CHECK(single.tokens == std::vector<TokenId>{A, B, S});
}

TEST_CASE("inject_sentinels rejects invalid token sequences") {
  CHECK_THROWS_AS(inject_sentinels({{A, B}, {{0, 1}}}, kVocab), std::invalid_argument);
  CHECK_THROWS_AS(inject_sentinels({{A, B}, {{0, 0}, {0, 2}}}, kVocab), std::invalid_argument);
  CHECK_THROWS_AS(inject_sentinels({{A, S}, {{0, 2}}}, kVocab), std::invalid_argument);
}

TEST_CASE("assign_position_ids repeats the predecessor for sentinels") {
  auto s = inject_sentinels(two_chunks(), kVocab);
  assign_position_ids(s);
  CHECK(s.position_ids == std::vector<Index>{0, 1, 2, 2, 3, 4, 5, 5});

  auto two = inject_sentinels({{A, B}, {{0, 1}, {1, 2}}}, kVocab);
  assign_position_ids(two);
  CHECK(two.tokens == std::vector<TokenId>{A, S, B, S});
  CHECK(two.position_ids == std::vector<Index>{0, 0, 1, 1});

  auto plain = make_origin_sequence({{A, B, C}, {{0, 3}}});
  CHECK(plain.position_ids == std::vector<Index>{0, 1, 2});

  SentinelSequence leading;
  leading.tokens = {S, A};
  leading.is_sentinel = {1, 0};
  leading.chunk_ids = {0, 0};
  CHECK_THROWS_AS(assign_position_ids(leading), std::invalid_argument);
}

TEST_CASE("assign_labels skips sentinels and ignores their positions") {
  auto s = inject_sentinels(two_chunks(), kVocab);
  assign_labels(s);
  CHECK(s.labels == std::vector<TokenId>{B, P, C, IGN, D, P, IGN, IGN});

  auto plain = make_origin_sequence({{A, B, C}, {{0, 3}}});
  CHECK(plain.labels == std::vector<TokenId>{B, C, IGN});

  // Consecutive sentinels never come out of injection; the rule still skips them.
  SentinelSequence odd;
  odd.tokens = {A, S, S, B};
  odd.is_sentinel = {0, 1, 1, 0};
  odd.chunk_ids = {0, 0, 1, 2};
  assign_labels(odd);
  CHECK(odd.labels == std::vector<TokenId>{B, IGN, IGN, IGN});
}

TEST_CASE("worked example through the full pipeline") {
  const auto s = make_sentinel_sequence(two_chunks(), kVocab);
  CHECK(s.tokens == std::vector<TokenId>{A, B, P, S, C, D, P, S});
  CHECK(s.position_ids == std::vector<Index>{0, 1, 2, 2, 3, 4, 5, 5});
  CHECK(s.labels == std::vector<TokenId>{B, P, C, IGN, D, P, IGN, IGN});
  CHECK(check_sentinel_rules(s, kVocab).empty());
  CHECK(strip_sentinels(s) == two_chunks());
}

TEST_CASE("pipeline properties on 1000 random sequences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = test::random_token_sequence(rng, kVocab, 8, 7);
    const auto s = make_sentinel_sequence(x, kVocab);
    CAPTURE(trial);

    // Round trips.
    REQUIRE(strip_sentinels(s) == x);
    CHECK(make_sentinel_sequence(strip_sentinels(s), kVocab) == s);

    // Counts.
    CHECK(s.size() == x.size() + static_cast<Index>(x.chunks.size()));
    CHECK(s.sentinel_count() == static_cast<Index>(x.chunks.size()));

    Index ordinary = 0;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      // Label skip: first non-sentinel token strictly after i.
      TokenId expect = IGN;
      if (!s.is_sentinel[i])
        for (std::size_t j = i + 1; j < s.tokens.size(); ++j)
          if (!s.is_sentinel[j]) {
            expect = s.tokens[j];
            break;
          }
      CHECK(s.labels[i] == expect);
      CHECK(s.labels[i] != S);
      if (s.is_sentinel[i]) {
        CHECK(s.labels[i] == IGN);
        CHECK(i > 0);
        CHECK(s.position_ids[i] == s.position_ids[i - 1]);
        CHECK_FALSE(s.is_sentinel[i - 1]);
      } else {
        CHECK(s.position_ids[i] == ordinary++);
      }
    }
    CHECK(check_sentinel_rules(s, kVocab).empty());
  }
}

TEST_CASE("window_document splits only at chunk boundaries") {
  const TokenSequence doc{{A, B, C, D, A, B, C, D, A}, {{0, 2}, {2, 5}, {5, 6}, {6, 9}}};
  const auto windows = window_document(doc, 6);
  // Sentinel-inclusive costs 3, 4, 2, 4 with budget 6.
  REQUIRE(windows.size() == 3);
  CHECK(windows[0].tokens == std::vector<TokenId>{A, B});
  CHECK(windows[1].tokens == std::vector<TokenId>{C, D, A, B});
  CHECK(windows[1].chunks == std::vector<Span>{{0, 3}, {3, 4}});
  CHECK(windows[2].tokens == std::vector<TokenId>{C, D, A});
  CHECK_THROWS_AS(window_document(doc, 3), std::invalid_argument);

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = test::random_token_sequence(rng, kVocab, 8, 6);
    std::vector<TokenId> joined;
    for (const auto& w : window_document(x, 12)) {
      CHECK(w.size() + static_cast<Index>(w.chunks.size()) <= 12);
      CHECK(make_sentinel_sequence(w, kVocab).size() <= 12);
      joined.insert(joined.end(), w.tokens.begin(), w.tokens.end());
    }
    CHECK(joined == x.tokens);
  }
}

TEST_CASE("origin and sentinel windows count the same predictions") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = test::random_token_sequence(rng, kVocab, 8, 6);
    auto counted = [](const SentinelSequence& s) {
      Index n = 0;
      for (TokenId y : s.labels) n += y != kIgnoreLabel;
      return n;
    };
    CHECK(counted(make_sequence(x, kVocab, PipelineMode::kOrigin)) ==
          counted(make_sequence(x, kVocab, PipelineMode::kSentinel)));
  }
}

TEST_CASE("check_sentinel_rules names each violated rule") {
  const auto good = make_sentinel_sequence(two_chunks(), kVocab);
  auto broken = [&](auto&& edit) {
    auto s = good;
    edit(s);
    return check_sentinel_rules(s, kVocab);
  };
  CHECK(broken([](auto& s) { s.labels.pop_back(); }) == "array-lengths");
  CHECK(broken([](auto& s) { s.tokens[0] = 999; }) == "token-range");
  CHECK(broken([](auto& s) { s.is_sentinel[0] = 1; }) == "flag-matches-token");
  CHECK(broken([&](auto& s) { s.labels[1] = S; }) == "label-not-sentinel");
  CHECK(broken([&](auto& s) { s.labels[3] = C; }) == "sentinel-label-ignored");
  CHECK(broken([&](auto& s) { s.labels[2] = D; }) == "label-next-ordinary");
  CHECK(broken([](auto& s) { s.position_ids[3] = 3; }) == "sentinel-position-congruence");
  CHECK(broken([](auto& s) { s.position_ids[4] = 7; }) == "ordinary-positions-consecutive");
  CHECK(broken([](auto& s) { s.chunk_ids[4] = 3; }) == "chunk-ids-contiguous");
  CHECK(broken([](auto& s) { s.chunk_ids[3] = 1; }) == "sentinel-at-chunk-end");
}
