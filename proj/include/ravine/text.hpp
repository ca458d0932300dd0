#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ravine::text {

inline bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

/// Collapses every whitespace run to one space and trims the ends.
inline std::string normalize_whitespace(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending)
            out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

// Bytes >= 0x80 are kept inside tokens so UTF-8 words survive unchanged.
inline bool is_token_byte(unsigned char c)
{
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

/// Lowercases ASCII letters and splits on every non-alphanumeric byte.
inline std::vector<std::string> tokenize(std::string_view s)
{
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : s) {
        auto c = static_cast<unsigned char>(ch);
        if (is_token_byte(c)) {
            current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty())
        tokens.push_back(std::move(current));
    return tokens;
}

inline const std::unordered_set<std::string>& stopwords()
{
    static const std::unordered_set<std::string> words = {
        "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
        "before", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has",
        "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "may", "more",
        "most", "no", "not", "of", "on", "or", "other", "our", "she", "should", "so", "some", "such",
        "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
        "to", "was", "we", "were", "what", "when", "where", "which", "while", "who", "why", "will",
        "with", "would", "you", "your",
    };
    return words;
}

/// Tokens of `s` with stopwords removed, in order, duplicates kept.
inline std::vector<std::string> content_words(std::string_view s)
{
    auto tokens = tokenize(s);
    const auto& stop = stopwords();
    std::erase_if(tokens, [&](const std::string& t) { return stop.contains(t); });
    return tokens;
}

// ---------------------------------------------------------------------------
// UTF-8 helpers. Offsets in the corpus format count code points.

inline bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

inline std::size_t count_code_points(std::string_view s)
{
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return !is_continuation(static_cast<unsigned char>(c)); }));
}

/// Byte offset of code point `index`, or npos when past the end.
inline std::size_t byte_offset_of(std::string_view s, std::size_t index)
{
    std::size_t cp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (is_continuation(static_cast<unsigned char>(s[i])))
            continue;
        if (cp == index)
            return i;
        ++cp;
    }
    return cp == index ? s.size() : std::string_view::npos;
}

/// First `max_chars` code points of `s`.
inline std::string_view utf8_prefix(std::string_view s, std::size_t max_chars)
{
    auto end = byte_offset_of(s, max_chars);
    return end == std::string_view::npos ? s : s.substr(0, end);
}

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace ravine::text
