#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cfmd {

/// Word-level token surface. Never empty, never contains whitespace.
using Token = std::string;

namespace detail {

// Multi-byte punctuation common in Italian and English news text.
inline constexpr std::array<std::string_view, 10> kUnicodePunct = {
    "’", "‘", "“", "”", "«", "»",
    "—", "–", "…", "·",
};

inline bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
           (c >= 123 && c <= 126);
}

/// Length of the punctuation mark starting at text[pos], or 0.
inline std::size_t punct_length(std::string_view text, std::size_t pos) {
    if (is_ascii_punct(static_cast<unsigned char>(text[pos]))) return 1;
    for (auto mark : kUnicodePunct) {
        if (text.substr(pos, mark.size()) == mark) return mark.size();
    }
    return 0;
}

inline bool attaches_left(std::string_view tok) {
    static constexpr std::array<std::string_view, 15> marks = {
        ".", ",", ";", ":", "!", "?", ")", "]", "}", "%",
        "»", "”", "…", "'", "’"};
    return std::find(marks.begin(), marks.end(), tok) != marks.end();
}

inline bool attaches_right(std::string_view tok) {
    static constexpr std::array<std::string_view, 7> marks = {
        "(", "[", "{", "«", "“", "'", "’"};
    return std::find(marks.begin(), marks.end(), tok) != marks.end();
}

}  // namespace detail

/// Splits on whitespace and peels every punctuation mark into its own token.
/// Case is preserved.
inline std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    std::size_t word_start = std::string_view::npos;
    auto flush = [&](std::size_t end) {
        if (word_start != std::string_view::npos && end > word_start) {
            out.emplace_back(text.substr(word_start, end - word_start));
        }
        word_start = std::string_view::npos;
    };
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (detail::is_space(c)) {
            flush(i);
            ++i;
            continue;
        }
        if (std::size_t n = detail::punct_length(text, i); n > 0) {
            flush(i);
            out.emplace_back(text.substr(i, n));
            i += n;
            continue;
        }
        if (word_start == std::string_view::npos) word_start = i;
        ++i;
    }
    flush(text.size());
    return out;
}

/// Inverse of tokenize up to whitespace normalization: closing marks attach to
/// the previous token, opening marks and apostrophes to the next one.
template <typename Range>
std::string detokenize(const Range& tokens) {
    std::string out;
    bool glue_next = true;
    for (const auto& tok : tokens) {
        const std::string_view t(tok);
        if (!glue_next && !detail::attaches_left(t)) out.push_back(' ');
        out.append(t);
        glue_next = detail::attaches_right(t);
    }
    return out;
}

inline std::size_t token_count(std::string_view text) { return tokenize(text).size(); }

/// Whitespace-separated word count.
inline std::size_t word_count(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (char ch : text) {
        const bool space = detail::is_space(static_cast<unsigned char>(ch));
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

}  // namespace cfmd
