#pragma once

#include "ravine/agent.hpp"
#include "ravine/error.hpp"
#include "ravine/nuggets.hpp"
#include "ravine/tools.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ravine {

struct SearchRound {
    int t = 1;
    std::vector<std::string> returned; // D_t in rank order
};

/// Rounds are the successful web_search calls of a trace, numbered 1..T.
inline std::vector<SearchRound> search_rounds(const RunTrace& trace)
{
    std::vector<SearchRound> rounds;
    for (const auto& turn : trace.turns)
        for (std::size_t i = 0; i < turn.tool_calls.size() && i < turn.tool_results.size(); ++i)
            if (turn.tool_calls[i].name == kSearchToolName && turn.tool_results[i].ok)
                rounds.push_back({static_cast<int>(rounds.size()) + 1, turn.tool_results[i].docids});
    return rounds;
}

/// Every page surfaced to the model: search hits plus successful fetches.
inline std::set<std::string> seen_documents(const RunTrace& trace)
{
    std::set<std::string> seen;
    for (const auto& turn : trace.turns)
        for (const auto& r : turn.tool_results)
            if (r.ok)
                seen.insert(r.docids.begin(), r.docids.end());
    return seen;
}

inline std::set<std::string> searched_documents(const std::vector<SearchRound>& rounds)
{
    std::set<std::string> out;
    for (const auto& r : rounds)
        out.insert(r.returned.begin(), r.returned.end());
    return out;
}

enum class BasisKind { qrels, nuggets };

inline std::string_view to_string(BasisKind k) { return k == BasisKind::qrels ? "qrels" : "nuggets"; }

/// The relevant pages a run is measured against. For the nugget basis every
/// nugget keeps at most `cap` sources (lowest docids) and the relevant set is
/// their union.
struct RelevanceBasis {
    BasisKind kind = BasisKind::qrels;
    std::set<std::string> relevant;
    std::vector<std::set<std::string>> nugget_pages; // nugget basis only

    static RelevanceBasis from_qrels(std::set<std::string> relevant)
    {
        return {BasisKind::qrels, std::move(relevant), {}};
    }

    static RelevanceBasis from_nuggets(const std::vector<Nugget>& nuggets, std::size_t cap = 3)
    {
        RelevanceBasis b{BasisKind::nuggets, {}, {}};
        for (const auto& n : nuggets) {
            std::set<std::string> pages;
            for (const auto& s : n.sources) {
                if (pages.size() >= cap)
                    break;
                pages.insert(s);
            }
            b.relevant.insert(pages.begin(), pages.end());
            b.nugget_pages.push_back(std::move(pages));
        }
        return b;
    }
};

/// C(t) for t = 1..T; empty optional when Rel is empty.
inline std::optional<std::vector<double>> cumulative_coverage(const std::vector<SearchRound>& rounds,
                                                              const std::set<std::string>& rel)
{
    if (rel.empty())
        return std::nullopt;
    std::vector<double> c;
    std::set<std::string> covered;
    for (const auto& r : rounds) {
        for (const auto& d : r.returned)
            if (rel.contains(d))
                covered.insert(d);
        c.push_back(static_cast<double>(covered.size()) / static_cast<double>(rel.size()));
    }
    return c;
}

struct SearchGain {
    std::vector<double> deltas;
    std::vector<std::size_t> new_relevant; // |(D_t ∩ Rel) \ D_seen<t|
    std::size_t rel_size = 0;
    std::optional<double> mean; // empty when there were no rounds
};

/// δ(t) = C(t) − C(t−1) with C(0) = 0; mean uses ω(t) = 1/T. Deltas are
/// formed from integer counts, so Σδ telescopes to C(T) without drift in
/// the counts themselves.
inline std::optional<SearchGain> search_gain(const std::vector<SearchRound>& rounds, const std::set<std::string>& rel)
{
    if (rel.empty())
        return std::nullopt;
    SearchGain g;
    g.rel_size = rel.size();
    const double denom = static_cast<double>(rel.size());
    std::set<std::string> covered;
    for (const auto& r : rounds) {
        std::size_t fresh = 0;
        for (const auto& d : r.returned)
            if (rel.contains(d) && covered.insert(d).second)
                ++fresh;
        g.new_relevant.push_back(fresh);
        g.deltas.push_back(static_cast<double>(fresh) / denom);
    }
    if (!rounds.empty())
        g.mean = static_cast<double>(covered.size()) / denom / static_cast<double>(rounds.size());
    return g;
}

struct SearchRecallPrecision {
    std::optional<double> recall;
    std::optional<double> precision;
};

/// Recall = C(T); precision = Σ|D_i ∩ Rel| / Σ|D_i| over raw round sums.
inline SearchRecallPrecision search_recall_precision(const std::vector<SearchRound>& rounds,
                                                     const std::set<std::string>& rel)
{
    SearchRecallPrecision out;
    if (rel.empty())
        return out;
    auto c = cumulative_coverage(rounds, rel);
    out.recall = c->empty() ? 0.0 : c->back();
    std::size_t hits = 0, total = 0;
    for (const auto& r : rounds) {
        total += r.returned.size();
        for (const auto& d : r.returned)
            hits += rel.contains(d) ? 1 : 0;
    }
    if (total > 0)
        out.precision = static_cast<double>(hits) / static_cast<double>(total);
    return out;
}

enum class NuggetRecallMode {
    fractional, // retrieved pages among the nugget's sources, capped, over min(|sources|, cap)
    any_hit,    // 1 when any capped page was retrieved
};

/// Per-nugget search recall averaged over nuggets. Empty optional without nuggets.
inline std::optional<double> nugget_search_recall(const std::vector<Nugget>& nuggets,
                                                  const std::set<std::string>& retrieved,
                                                  NuggetRecallMode mode = NuggetRecallMode::fractional,
                                                  std::size_t cap = 3)
{
    if (nuggets.empty())
        return std::nullopt;
    double total = 0.0;
    for (const auto& n : nuggets) {
        if (mode == NuggetRecallMode::any_hit) {
            std::size_t taken = 0;
            bool hit = false;
            for (const auto& s : n.sources) {
                if (taken++ >= cap)
                    break;
                hit = hit || retrieved.contains(s);
            }
            total += hit ? 1.0 : 0.0;
        } else {
            std::size_t hits = 0;
            for (const auto& s : n.sources)
                hits += retrieved.contains(s) ? 1 : 0;
            const double denom = static_cast<double>(std::min(n.sources.size(), cap));
            total += static_cast<double>(std::min(hits, cap)) / denom;
        }
    }
    return total / static_cast<double>(nuggets.size());
}

struct FetchMetrics {
    std::optional<double> fetch_precision; // over successful fetches
    std::optional<double> url_error_rate;  // over all fetch calls
    std::size_t fetch_calls = 0;
    std::size_t url_errors = 0;
};

inline FetchMetrics fetch_metrics(const RunTrace& trace, const std::set<std::string>& rel)
{
    FetchMetrics m;
    std::size_t ok = 0, relevant = 0;
    for (const auto& turn : trace.turns) {
        for (std::size_t i = 0; i < turn.tool_calls.size() && i < turn.tool_results.size(); ++i) {
            if (turn.tool_calls[i].name != kFetchToolName)
                continue;
            ++m.fetch_calls;
            const auto& r = turn.tool_results[i];
            if (r.error_kind == ToolErrorKind::url_error)
                ++m.url_errors;
            if (r.ok) {
                ++ok;
                relevant += (!r.docids.empty() && rel.contains(r.docids.front())) ? 1 : 0;
            }
        }
    }
    if (m.fetch_calls)
        m.url_error_rate = static_cast<double>(m.url_errors) / static_cast<double>(m.fetch_calls);
    if (ok)
        m.fetch_precision = static_cast<double>(relevant) / static_cast<double>(ok);
    return m;
}

inline double completion_rate(const std::vector<RunTrace>& runs)
{
    if (runs.empty())
        throw Error("completion rate needs at least one run");
    std::size_t done = 0;
    for (const auto& r : runs)
        done += r.completed ? 1 : 0;
    return static_cast<double>(done) / static_cast<double>(runs.size());
}

struct ToolValidityCounts {
    std::size_t calls = 0;
    std::size_t undefined_tool = 0;
    std::size_t param_violation = 0;
    std::size_t fetch_before_search = 0;
    std::size_t url_error = 0;
};

inline ToolValidityCounts tool_validity(const RunTrace& trace)
{
    ToolValidityCounts c;
    for (const auto& turn : trace.turns) {
        for (const auto& v : turn.validity) {
            ++c.calls;
            c.undefined_tool += v.undefined_tool;
            c.param_violation += v.param_violation;
            c.fetch_before_search += v.fetch_before_search;
            c.url_error += v.url_error;
        }
    }
    return c;
}

} // namespace ravine
