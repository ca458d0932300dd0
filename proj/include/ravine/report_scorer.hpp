#pragma once

#include "ravine/corpus.hpp"
#include "ravine/error.hpp"
#include "ravine/nuggets.hpp"
#include "ravine/prompts.hpp"
#include "ravine/providers.hpp"
#include "ravine/text.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ravine {

struct Citation {
    std::string title;
    std::string url;

    bool operator==(const Citation&) const = default;
};

/// A report fragment ending at a citation group. `raw` is the exact source
/// slice (concatenating every block's raw gives back the report); `text` is
/// the trimmed statement without its group.
struct Block {
    std::size_t index = 0;
    std::string text;
    std::vector<Citation> citations;
    std::string raw;
    std::string group_text;
    std::size_t malformed_links = 0;
};

struct ParsedGroup {
    std::vector<Citation> citations;
    std::size_t malformed = 0;
};

namespace detail {

/// Position just past a `[title](url)` starting at `i`, or npos.
inline std::size_t scan_link(std::string_view s, std::size_t i)
{
    if (i >= s.size() || s[i] != '[')
        return std::string_view::npos;
    int depth = 0;
    std::size_t j = i;
    for (; j < s.size(); ++j) {
        if (s[j] == '\\') {
            ++j;
            continue;
        }
        if (s[j] == '[')
            ++depth;
        else if (s[j] == ']' && --depth == 0)
            break;
    }
    if (j >= s.size() || j + 1 >= s.size() || s[j + 1] != '(')
        return std::string_view::npos;
    depth = 0;
    for (j = j + 1; j < s.size(); ++j) {
        if (s[j] == '(')
            ++depth;
        else if (s[j] == ')' && --depth == 0)
            return j + 1;
        else if (s[j] == '\n')
            return std::string_view::npos;
    }
    return std::string_view::npos;
}

/// Position just past a citation group `([t](u); ...)` starting at `i`, or npos.
inline std::size_t scan_group(std::string_view s, std::size_t i)
{
    if (i >= s.size() || s[i] != '(')
        return std::string_view::npos;
    std::size_t j = i + 1;
    auto skip = [&] {
        while (j < s.size() && (s[j] == ' ' || s[j] == '\t'))
            ++j;
    };
    skip();
    while (true) {
        auto end = scan_link(s, j);
        if (end == std::string_view::npos)
            return std::string_view::npos;
        j = end;
        skip();
        if (j >= s.size())
            return std::string_view::npos;
        if (s[j] == ')')
            return j + 1;
        if (s[j] != ';')
            return std::string_view::npos;
        ++j;
        skip();
    }
}

inline std::optional<Citation> parse_link(std::string_view piece)
{
    piece = text::trim(piece);
    if (piece.empty() || piece.front() != '[' || piece.back() != ')')
        return std::nullopt;
    auto end = scan_link(piece, 0);
    if (end != piece.size())
        return std::nullopt;
    int depth = 0;
    std::size_t close = 0;
    for (std::size_t j = 0; j < piece.size(); ++j) {
        if (piece[j] == '\\') {
            ++j;
            continue;
        }
        if (piece[j] == '[')
            ++depth;
        else if (piece[j] == ']' && --depth == 0) {
            close = j;
            break;
        }
    }
    std::string_view title = text::trim(piece.substr(1, close - 1));
    std::string_view url = text::trim(piece.substr(close + 2, piece.size() - close - 3));
    if (url.size() >= 2 && url.front() == '<' && url.back() == '>')
        url = text::trim(url.substr(1, url.size() - 2));
    if (url.empty())
        return std::nullopt;
    return Citation{std::string(title), std::string(url)};
}

} // namespace detail

/// Order-preserving (title, url) pairs of one citation group; duplicate urls
/// keep their first occurrence and malformed links are counted, not kept.
inline ParsedGroup parse_citation_group(std::string_view group_text)
{
    ParsedGroup out;
    std::string_view inner = text::trim(group_text);
    if (!inner.empty() && inner.front() == '(')
        inner.remove_prefix(1);
    int balance = 0;
    for (char c : inner)
        balance += c == '(' ? 1 : c == ')' ? -1 : 0;
    if (balance < 0 && !inner.empty() && text::trim(inner).back() == ')') {
        inner = text::trim(inner);
        inner.remove_suffix(1);
    }

    std::vector<std::string_view> pieces;
    int brackets = 0, parens = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < inner.size(); ++i) {
        char c = inner[i];
        if (c == '\\') {
            ++i;
            continue;
        }
        brackets += c == '[' ? 1 : c == ']' ? -1 : 0;
        parens += c == '(' ? 1 : c == ')' ? -1 : 0;
        if (c == ';' && brackets <= 0 && parens <= 0) {
            pieces.push_back(inner.substr(start, i - start));
            start = i + 1;
        }
    }
    pieces.push_back(inner.substr(start));

    std::set<std::string> urls;
    for (auto piece : pieces) {
        if (text::trim(piece).empty() && pieces.size() > 1)
            continue;
        auto link = detail::parse_link(piece);
        if (!link) {
            ++out.malformed;
            continue;
        }
        if (urls.insert(link->url).second)
            out.citations.push_back(std::move(*link));
    }
    return out;
}

/// Splits a report at citation groups. Groups separated only by whitespace
/// form one run attached to the same block; text after the last group
/// becomes a citation-less trailing block.
inline std::vector<Block> split_into_blocks(std::string_view report)
{
    std::vector<Block> blocks;
    std::size_t block_start = 0;
    std::size_t i = 0;
    while (i < report.size()) {
        if (report[i] != '(') {
            ++i;
            continue;
        }
        auto end = detail::scan_group(report, i);
        if (end == std::string_view::npos) {
            ++i;
            continue;
        }
        const std::size_t group_start = i;
        std::vector<std::pair<std::size_t, std::size_t>> groups{{group_start, end}};
        while (true) {
            std::size_t j = end;
            while (j < report.size() && text::is_space(report[j]))
                ++j;
            auto next = detail::scan_group(report, j);
            if (next == std::string_view::npos)
                break;
            groups.emplace_back(j, next);
            end = next;
        }
        Block b;
        b.index = blocks.size();
        b.text = std::string(text::trim(report.substr(block_start, group_start - block_start)));
        b.raw = std::string(report.substr(block_start, end - block_start));
        b.group_text = std::string(report.substr(group_start, end - group_start));
        std::set<std::string> urls;
        for (auto [gs, ge] : groups) {
            auto parsed = parse_citation_group(report.substr(gs, ge - gs));
            b.malformed_links += parsed.malformed;
            for (auto& c : parsed.citations)
                if (urls.insert(c.url).second)
                    b.citations.push_back(std::move(c));
        }
        blocks.push_back(std::move(b));
        block_start = end;
        i = end;
    }
    std::string_view rest = report.substr(block_start);
    if (!text::trim(rest).empty() || blocks.empty()) {
        Block b;
        b.index = blocks.size();
        b.text = std::string(text::trim(rest));
        b.raw = std::string(rest);
        blocks.push_back(std::move(b));
    } else {
        blocks.back().raw += rest;
    }
    return blocks;
}

// ---------------------------------------------------------------------------
// Assignment

enum class Support { not_support, partial_support, support };

inline double support_score(Support s)
{
    switch (s) {
    case Support::support: return 1.0;
    case Support::partial_support: return 0.5;
    case Support::not_support: return 0.0;
    }
    return 0.0;
}

inline std::string_view to_string(Support s)
{
    switch (s) {
    case Support::support: return "support";
    case Support::partial_support: return "partial_support";
    case Support::not_support: return "not_support";
    }
    return "not_support";
}

/// [block][nugget] support labels.
using AssignmentMatrix = std::vector<std::vector<Support>>;

inline std::string assignment_prompt(const std::string& query_text, const std::string& passage,
                                     const std::vector<Nugget>& nuggets)
{
    std::vector<std::string> texts;
    for (const auto& n : nuggets)
        texts.push_back(n.text);
    return prompts::fill(prompts::kNuggetAssignment, {{"num_nuggets", std::to_string(nuggets.size())},
                                                      {"query", query_text},
                                                      {"context", passage},
                                                      {"nugget_texts", render_list_literal(texts)}});
}

inline std::vector<Support> parse_support_labels(const std::string& answer, std::size_t expected)
{
    auto labels = parse_list_literal(answer);
    if (labels.size() != expected)
        throw ParseError("expected " + std::to_string(expected) + " labels, got " + std::to_string(labels.size()),
                         answer);
    std::vector<Support> out;
    for (const auto& l : labels) {
        std::string v{text::trim(l)};
        std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
        if (v == "support")
            out.push_back(Support::support);
        else if (v == "partial_support")
            out.push_back(Support::partial_support);
        else if (v == "not_support")
            out.push_back(Support::not_support);
        else
            throw ParseError("unknown support label '" + l + "'", answer);
    }
    return out;
}

/// One judge call per block; a malformed answer is retried once.
inline std::vector<Support> assign_nuggets(const std::string& query_text, const Block& block,
                                           const std::vector<Nugget>& nuggets, const Judge& judge,
                                           const RetryPolicy& policy = RetryPolicy::immediate())
{
    if (nuggets.empty())
        throw Error("assign_nuggets needs at least one nugget");
    const JudgeRequest request{assignment_prompt(query_text, block.text, nuggets)};
    for (int attempt = 0;; ++attempt) {
        try {
            return parse_support_labels(judge_complete(judge, request, policy), nuggets.size());
        } catch (const ParseError&) {
            if (attempt >= 1)
                throw;
        }
    }
}

// ---------------------------------------------------------------------------
// Completeness

enum class CompletenessMode {
    nugget_max, // per nugget, best support over all blocks
    block_mean, // score each block separately, then average
};

namespace detail {

// Unlabeled nuggets weigh like vital ones.
inline double nugget_weight(const Nugget& n) { return n.label == NuggetLabel::okay ? 0.5 : 1.0; }

inline double weighted_completeness(const std::vector<double>& scores, const std::vector<Nugget>& nuggets)
{
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < nuggets.size(); ++j) {
        num += nugget_weight(nuggets[j]) * scores[j];
        den += nugget_weight(nuggets[j]);
    }
    return num / den;
}

inline void check_matrix(const AssignmentMatrix& matrix, const std::vector<Nugget>& nuggets)
{
    if (nuggets.empty())
        throw Error("completeness is undefined without nuggets");
    for (const auto& row : matrix)
        if (row.size() != nuggets.size())
            throw Error("assignment matrix row does not cover every nugget");
}

} // namespace detail

/// (Σ s_vital + 0.5 Σ s_okay) / (|vital| + 0.5 |okay|).
inline double score_completeness(const AssignmentMatrix& matrix, const std::vector<Nugget>& nuggets,
                                 CompletenessMode mode = CompletenessMode::nugget_max)
{
    detail::check_matrix(matrix, nuggets);
    if (matrix.empty())
        return 0.0;
    if (mode == CompletenessMode::nugget_max) {
        std::vector<double> best(nuggets.size(), 0.0);
        for (const auto& row : matrix)
            for (std::size_t j = 0; j < row.size(); ++j)
                best[j] = std::max(best[j], support_score(row[j]));
        return detail::weighted_completeness(best, nuggets);
    }
    double total = 0.0;
    for (const auto& row : matrix) {
        std::vector<double> s;
        for (auto l : row)
            s.push_back(support_score(l));
        total += detail::weighted_completeness(s, nuggets);
    }
    return total / static_cast<double>(matrix.size());
}

// ---------------------------------------------------------------------------
// Citations

struct CitationCaps {
    std::size_t per_nugget = 3;
    std::size_t per_block = 3;
};

struct GoldPage {
    std::string docid;
    double weight = 0.0;

    bool operator==(const GoldPage&) const = default;
};

/// Weighted gold citations of one block: sources of the nuggets it supports
/// (each nugget capped, retrieved sources first), restricted to pages the run
/// retrieved, weighted by nugget count, top `per_block` kept.
inline std::vector<GoldPage> gold_citations_for_block(const std::vector<Support>& block_labels,
                                                      const std::vector<Nugget>& nuggets,
                                                      const std::set<std::string>& retrieved,
                                                      const CitationCaps& caps = {})
{
    std::map<std::string, double> weight;
    for (std::size_t j = 0; j < nuggets.size() && j < block_labels.size(); ++j) {
        if (support_score(block_labels[j]) <= 0.0)
            continue;
        std::vector<std::string> ordered;
        for (const auto& s : nuggets[j].sources)
            if (retrieved.contains(s))
                ordered.push_back(s);
        for (const auto& s : nuggets[j].sources)
            if (!retrieved.contains(s))
                ordered.push_back(s);
        if (ordered.size() > caps.per_nugget)
            ordered.resize(caps.per_nugget);
        for (const auto& s : ordered)
            if (retrieved.contains(s))
                weight[s] += 1.0;
    }
    std::vector<GoldPage> gold;
    for (auto& [docid, w] : weight)
        gold.push_back({docid, w});
    std::stable_sort(gold.begin(), gold.end(), [](const GoldPage& a, const GoldPage& b) { return a.weight > b.weight; });
    if (gold.size() > caps.per_block)
        gold.resize(caps.per_block);
    return gold;
}

/// url -> docid; empty when the url is not in the corpus.
using UrlResolver = std::function<std::optional<std::string>(std::string_view)>;

inline UrlResolver corpus_resolver(const Corpus& corpus)
{
    return [&corpus](std::string_view url) -> std::optional<std::string> {
        if (const auto* d = corpus.lookup_by_url(url))
            return d->docid;
        return std::nullopt;
    };
}

/// Recall/precision of one block; an empty optional means the block does
/// not count towards that average.
struct BlockCitationScore {
    std::optional<double> recall;
    std::optional<double> precision;
};

/// Recall is weighted by gold weight; precision is the unweighted share of
/// predicted urls that resolve to gold pages.
inline BlockCitationScore score_block_citations(const std::vector<Citation>& pred, const std::vector<GoldPage>& gold,
                                                const UrlResolver& resolve)
{
    std::vector<std::string> urls;
    for (const auto& c : pred) {
        std::string u{text::trim(c.url)};
        if (std::find(urls.begin(), urls.end(), u) == urls.end())
            urls.push_back(std::move(u));
    }
    std::set<std::string> cited_docs;
    std::size_t correct = 0;
    for (const auto& u : urls) {
        auto docid = resolve(u);
        if (!docid)
            continue;
        cited_docs.insert(*docid);
        if (std::any_of(gold.begin(), gold.end(), [&](const GoldPage& g) { return g.docid == *docid; }))
            ++correct;
    }
    BlockCitationScore out;
    if (!gold.empty()) {
        double hit = 0.0, total = 0.0;
        for (const auto& g : gold) {
            total += g.weight;
            if (cited_docs.contains(g.docid))
                hit += g.weight;
        }
        out.recall = hit / total;
    }
    if (!urls.empty())
        out.precision = static_cast<double>(correct) / static_cast<double>(urls.size());
    return out;
}

// ---------------------------------------------------------------------------
// Internal-knowledge completeness

/// Mean over blocks of the share of nuggets a block supports although the
/// run never saw any of their source pages.
inline double comp_in(const AssignmentMatrix& matrix, const std::vector<Nugget>& nuggets,
                      const std::set<std::string>& seen_docs)
{
    detail::check_matrix(matrix, nuggets);
    if (matrix.empty())
        return 0.0;
    std::vector<bool> unseen(nuggets.size());
    for (std::size_t j = 0; j < nuggets.size(); ++j)
        unseen[j] = std::none_of(nuggets[j].sources.begin(), nuggets[j].sources.end(),
                                 [&](const std::string& d) { return seen_docs.contains(d); });
    double total = 0.0;
    for (const auto& row : matrix) {
        std::size_t sigma = 0;
        for (std::size_t j = 0; j < row.size(); ++j)
            sigma += (unseen[j] && support_score(row[j]) > 0.0) ? 1 : 0;
        total += static_cast<double>(sigma) / static_cast<double>(nuggets.size());
    }
    return total / static_cast<double>(matrix.size());
}

// ---------------------------------------------------------------------------

struct ReportScores {
    double completeness = 0.0;
    std::optional<double> cite_recall;
    std::optional<double> cite_precision;
    double comp_in = 0.0;
    // Among nuggets supported anywhere, the share with no seen source.
    std::optional<double> internal_share;
    std::size_t blocks = 0;
    std::size_t malformed_links = 0;
};

struct ReportScoringOptions {
    CompletenessMode completeness_mode = CompletenessMode::nugget_max;
    CitationCaps caps;
    std::size_t max_in_flight = 4;
    RetryPolicy retry = RetryPolicy::immediate();
};

inline std::optional<double> mean_of(const std::vector<double>& values)
{
    if (values.empty())
        return std::nullopt;
    double s = 0.0;
    for (double v : values)
        s += v;
    return s / static_cast<double>(values.size());
}

/// Scores a report given precomputed assignments.
inline ReportScores score_assignments(const std::vector<Block>& blocks, const AssignmentMatrix& matrix,
                                      const std::vector<Nugget>& nuggets, const std::set<std::string>& seen_docs,
                                      const UrlResolver& resolve, const ReportScoringOptions& options = {})
{
    ReportScores out;
    out.blocks = blocks.size();
    out.completeness = score_completeness(matrix, nuggets, options.completeness_mode);
    out.comp_in = comp_in(matrix, nuggets, seen_docs);
    std::vector<double> recalls, precisions;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        out.malformed_links += blocks[i].malformed_links;
        auto gold = gold_citations_for_block(matrix[i], nuggets, seen_docs, options.caps);
        auto s = score_block_citations(blocks[i].citations, gold, resolve);
        if (s.recall)
            recalls.push_back(*s.recall);
        if (s.precision)
            precisions.push_back(*s.precision);
    }
    out.cite_recall = mean_of(recalls);
    out.cite_precision = mean_of(precisions);
    std::size_t supported = 0, internal = 0;
    for (std::size_t j = 0; j < nuggets.size(); ++j) {
        bool any = std::any_of(matrix.begin(), matrix.end(), [&](const auto& row) { return support_score(row[j]) > 0; });
        if (!any)
            continue;
        ++supported;
        internal += std::none_of(nuggets[j].sources.begin(), nuggets[j].sources.end(),
                                 [&](const std::string& d) { return seen_docs.contains(d); })
                        ? 1
                        : 0;
    }
    if (supported)
        out.internal_share = static_cast<double>(internal) / static_cast<double>(supported);
    return out;
}

/// Splits, asks the judge for every block's assignments, then scores.
inline ReportScores score_report(const std::string& query_text, const std::string& report,
                                 const std::vector<Nugget>& nuggets, const Judge& judge,
                                 const std::set<std::string>& seen_docs, const UrlResolver& resolve,
                                 const ReportScoringOptions& options = {})
{
    if (nuggets.empty())
        throw Error("cannot score a report without nuggets");
    auto blocks = split_into_blocks(report);
    auto matrix = parallel_map(blocks.size(), options.max_in_flight, [&](std::size_t i) {
        return assign_nuggets(query_text, blocks[i], nuggets, judge, options.retry);
    });
    return score_assignments(blocks, matrix, nuggets, seen_docs, resolve, options);
}

} // namespace ravine
