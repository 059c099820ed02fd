// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_CONTEXT_HPP
#define CTXPROBE_CONTEXT_HPP

#include <algorithm>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprobe/errors.hpp"
#include "ctxprobe/utf8.hpp"

namespace ctxprobe {

/// Half-open byte range [begin, end) into a UTF-8 string.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t pos) const { return begin <= pos && pos < end; }
  bool overlaps(const CharSpan& other) const {
    if (other.empty()) return contains(other.begin);
    return begin < other.end && other.begin < end;
  }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Sentence {
  std::size_t index = 0;
  CharSpan span;
  std::string text;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct SegmentedContext {
  std::string query;
  std::string text;
  std::vector<Sentence> sentences;
};

/// Half-open token range [begin, end) on a dump's token axis.
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct TokenSpanMap {
  std::vector<TokenRange> ranges;    // one per sentence
  std::vector<bool> empty_sentence;  // sentence had no text, so no tokens expected

  std::size_t size() const { return ranges.size(); }
  std::vector<std::size_t> token_counts() const {
    std::vector<std::size_t> counts;
    counts.reserve(ranges.size());
    for (const auto& r : ranges) counts.push_back(r.size());
    return counts;
  }
};

namespace segmenter {

/// Bump when the abbreviation list changes; segment boundaries depend on it.
inline constexpr int kAbbreviationListVersion = 1;

inline constexpr std::string_view kAbbreviations[] = {
    "Mr.",    "Mrs.",  "Ms.",   "Dr.",   "Prof.", "Sr.",   "Jr.",   "St.",   "Mt.",
    "Gen.",   "Col.",  "Lt.",   "Sgt.",  "Capt.", "Rev.",  "Hon.",  "Gov.",  "Sen.",
    "Rep.",   "Pres.", "Inc.",  "Ltd.",  "Co.",   "Corp.", "Bros.", "vs.",   "etc.",
    "e.g.",   "i.e.",  "cf.",   "al.",   "approx.", "Fig.", "Figs.", "Eq.",  "Vol.",
    "pp.",    "Jan.",  "Feb.",  "Mar.",  "Apr.",  "Jun.",  "Jul.",  "Aug.",  "Sep.",
    "Sept.",  "Oct.",  "Nov.",  "Dec.",  "U.S.",  "U.K.",  "U.N.",  "E.U.",  "a.m.",
    "p.m.",   "Ph.D.", "Ave.",  "Blvd.", "Dept.", "Univ.", "est."};

inline bool is_terminator(char32_t cp) {
  return cp == '.' || cp == '!' || cp == '?' || cp == U'。' || cp == U'！' ||
         cp == U'？';
}

inline bool is_cjk_terminator(char32_t cp) {
  return cp == U'。' || cp == U'！' || cp == U'？';
}

inline bool is_closer(char32_t cp) {
  return cp == '"' || cp == '\'' || cp == ')' || cp == ']' || cp == '}' || cp == U'”' ||
         cp == U'’' || cp == U'」' || cp == U'』' || cp == U'）' ||
         cp == U'》';
}

inline bool is_opener(char c) {
  return c == '(' || c == '"' || c == '\'' || c == '[' || c == '{';
}

/// The whitespace-delimited word ending at byte `end` (exclusive), minus leading openers.
inline std::string_view word_before(std::string_view text, std::size_t end) {
  std::size_t begin = end;
  while (begin > 0) {
    const char c = text[begin - 1];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') break;
    --begin;
  }
  while (begin < end && is_opener(text[begin])) ++begin;
  return text.substr(begin, end - begin);
}

inline bool is_abbreviation(std::string_view word) {
  // Single-letter initials ("J. K. Rowling").
  if (word.size() == 2 && word[0] >= 'A' && word[0] <= 'Z' && word[1] == '.') return true;
  return std::find(std::begin(kAbbreviations), std::end(kAbbreviations), word) !=
         std::end(kAbbreviations);
}

inline std::size_t skip_space(std::string_view text, std::size_t pos) {
  while (pos < text.size()) {
    const auto cp = utf8::decode(text, pos);
    if (!utf8::is_space(cp.value)) break;
    pos += cp.length;
  }
  return pos;
}

/// End of `[begin, end)` with trailing whitespace removed.
inline std::size_t trim_right(std::string_view text, std::size_t begin, std::size_t end) {
  while (end > begin) {
    // Walk back to the start of the previous code point.
    std::size_t start = end - 1;
    while (start > begin && (static_cast<unsigned char>(text[start]) & 0xC0) == 0x80) --start;
    if (!utf8::is_space(utf8::decode(text, start).value)) break;
    end = start;
  }
  return end;
}

}  // namespace segmenter

/// Rule-based sentence splitter.
///
/// Splits after a run of terminators (. ! ? and the full-width 。！？) plus any
/// closing quotes/brackets, when followed by whitespace or end of text. CJK
/// terminators split unconditionally since CJK text does not use spaces. A
/// period ending a known abbreviation or a single capital initial does not
/// split. A newline followed by an uppercase ASCII letter or a CJK character
/// also splits. Sentence spans exclude surrounding whitespace, so the text
/// between consecutive spans is always whitespace.
inline std::vector<Sentence> segment_sentences(std::string_view text) {
  using namespace segmenter;
  std::vector<Sentence> out;
  auto emit = [&](std::size_t begin, std::size_t end) {
    end = trim_right(text, begin, end);
    if (end <= begin) return;
    out.push_back(Sentence{out.size(), CharSpan{begin, end}, std::string(text.substr(begin, end - begin))});
  };

  std::size_t start = skip_space(text, 0);
  std::size_t i = start;
  while (i < text.size()) {
    const auto cp = utf8::decode(text, i);
    if (is_terminator(cp.value)) {
      bool cjk = is_cjk_terminator(cp.value);
      bool only_period = cp.value == '.';
      std::size_t j = i + cp.length;
      while (j < text.size()) {
        const auto next = utf8::decode(text, j);
        if (!is_terminator(next.value)) break;
        cjk = cjk || is_cjk_terminator(next.value);
        only_period = only_period && next.value == '.';
        j += next.length;
      }
      const std::size_t terminators_end = j;
      while (j < text.size()) {
        const auto next = utf8::decode(text, j);
        if (!is_closer(next.value)) break;
        j += next.length;
      }
      bool boundary = false;
      if (j >= text.size() || utf8::is_space(utf8::decode(text, j).value)) {
        boundary = !(only_period && terminators_end == i + 1 &&
                     is_abbreviation(word_before(text, terminators_end)));
      } else if (cjk) {
        boundary = true;
      }
      if (boundary) {
        emit(start, j);
        start = skip_space(text, j);
        i = start;
      } else {
        i = j;
      }
      continue;
    }
    if (cp.value == '\n') {
      const std::size_t k = skip_space(text, i);
      if (k < text.size() && trim_right(text, start, i) > start) {
        const auto next = utf8::decode(text, k);
        if ((next.value >= 'A' && next.value <= 'Z') || utf8::is_cjk(next.value)) {
          emit(start, i);
          start = k;
          i = k;
          continue;
        }
      }
    }
    i += cp.length;
  }
  if (start < text.size()) emit(start, text.size());
  return out;
}

/// Builds sentences from caller-supplied spans (the pre-segmented input path).
inline std::vector<Sentence> sentences_from_spans(std::string_view text,
                                                  std::span<const CharSpan> spans) {
  std::vector<Sentence> out;
  out.reserve(spans.size());
  std::size_t prev_end = 0;
  for (const auto& span : spans) {
    if (span.end < span.begin || span.end > text.size())
      throw MalformedRecord("sentence span [" + std::to_string(span.begin) + ", " +
                            std::to_string(span.end) + ") is outside the context");
    if (span.begin < prev_end)
      throw MalformedRecord("sentence spans overlap or are out of order");
    prev_end = span.end;
    out.push_back(Sentence{out.size(), span, std::string(text.substr(span.begin, span.size()))});
  }
  return out;
}

/// Assigns each token to the sentence whose span contains the token's start
/// offset. Tokens with `context_mask[t] == false` are never assigned; an empty
/// mask means every token is eligible. Each sentence must own a contiguous
/// token range; a non-empty sentence that owns no token is an error.
inline TokenSpanMap map_token_spans(std::span<const Sentence> sentences,
                                    std::span<const CharSpan> token_offsets,
                                    const std::vector<bool>& context_mask = {}) {
  if (!context_mask.empty() && context_mask.size() != token_offsets.size())
    throw TokenAlignmentError("context mask length differs from token count");

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> first(sentences.size(), kNone), last(sentences.size(), kNone),
      count(sentences.size(), 0);
  std::size_t last_owner = 0;
  bool any_owner = false;
  for (std::size_t t = 0; t < token_offsets.size(); ++t) {
    if (!context_mask.empty() && !context_mask[t]) continue;
    const std::size_t start = token_offsets[t].begin;
    // First sentence whose end is past `start`.
    auto it = std::upper_bound(sentences.begin(), sentences.end(), start,
                               [](std::size_t pos, const Sentence& s) { return pos < s.span.end; });
    if (it == sentences.end() || !it->span.contains(start)) continue;
    const auto owner = static_cast<std::size_t>(it - sentences.begin());
    if (any_owner && owner < last_owner)
      throw TokenAlignmentError("token offsets are not monotone at token " + std::to_string(t));
    any_owner = true;
    last_owner = owner;
    if (first[owner] == kNone) first[owner] = t;
    last[owner] = t;
    ++count[owner];
  }

  TokenSpanMap map;
  map.ranges.resize(sentences.size());
  map.empty_sentence.resize(sentences.size(), false);
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (count[s] == 0) {
      if (!sentences[s].span.empty())
        throw TokenAlignmentError("sentence " + std::to_string(s) + " received no tokens");
      map.empty_sentence[s] = true;
      map.ranges[s] = TokenRange{cursor, cursor};
      continue;
    }
    if (last[s] - first[s] + 1 != count[s])
      throw TokenAlignmentError("tokens of sentence " + std::to_string(s) + " are not contiguous");
    map.ranges[s] = TokenRange{first[s], last[s] + 1};
    cursor = last[s] + 1;
  }
  return map;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_CONTEXT_HPP
