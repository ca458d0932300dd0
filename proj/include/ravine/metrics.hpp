#pragma once

#include "ravine/agent.hpp"
#include "ravine/corpus.hpp"
#include "ravine/error.hpp"
#include "ravine/nuggets.hpp"
#include "ravine/process_scorer.hpp"
#include "ravine/report_scorer.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace ravine {

/// Per-run scores. Empty optionals are not applicable for the run and are
/// left out of aggregate means.
struct MetricsRecord {
    std::string qid;
    std::string model;
    std::string config;
    bool completed = false;
    std::string failure_reason = "none";
    BasisKind basis = BasisKind::nuggets;

    std::optional<double> completeness;
    std::optional<double> cite_recall;
    std::optional<double> cite_precision;
    std::optional<double> comp_in;
    std::optional<double> internal_share;

    double latency_s = 0.0;
    double cost_usd = 0.0;
    int turns = 0;

    std::optional<double> search_precision;
    std::optional<double> search_recall;
    std::optional<double> search_gain;
    std::optional<double> url_error_rate;
    std::optional<double> fetch_precision;

    ToolValidityCounts validity;
};

struct ScoringOptions {
    BasisKind basis = BasisKind::nuggets;
    NuggetRecallMode nugget_recall = NuggetRecallMode::fractional;
    std::size_t nugget_page_cap = 3;
    ReportScoringOptions report;
    CostModel cost;
};

/// Scores one finished episode. Failed runs score zero on report quality;
/// the process metrics are computed from whatever the run did.
inline MetricsRecord score_run(const RunTrace& trace, const std::string& query_text, const std::vector<Nugget>& nuggets,
                               const std::set<std::string>& qrels_rel, const Corpus& corpus, const Judge& judge,
                               const ScoringOptions& options = {})
{
    MetricsRecord m;
    m.qid = trace.qid;
    m.model = trace.run_id;
    m.config = trace.config;
    m.completed = trace.completed;
    m.failure_reason = std::string(to_string(trace.failure_reason));
    m.basis = options.basis;

    auto account = account_run(trace, options.cost);
    m.latency_s = account.latency_s;
    m.cost_usd = account.cost_usd;
    m.turns = account.turns;
    m.validity = tool_validity(trace);

    const auto seen = seen_documents(trace);
    if (!nuggets.empty()) {
        if (trace.completed && trace.report_text) {
            auto scores = score_report(query_text, *trace.report_text, nuggets, judge, seen, corpus_resolver(corpus),
                                       options.report);
            m.completeness = scores.completeness;
            m.cite_recall = scores.cite_recall.value_or(0.0);
            m.cite_precision = scores.cite_precision.value_or(0.0);
            m.comp_in = scores.comp_in;
            m.internal_share = scores.internal_share;
        } else {
            m.completeness = 0.0;
            m.cite_recall = 0.0;
            m.cite_precision = 0.0;
        }
    }

    const auto rounds = search_rounds(trace);
    RelevanceBasis basis = options.basis == BasisKind::qrels
                               ? RelevanceBasis::from_qrels(qrels_rel)
                               : RelevanceBasis::from_nuggets(nuggets, options.nugget_page_cap);
    if (auto gain = search_gain(rounds, basis.relevant))
        m.search_gain = gain->mean;
    auto rp = search_recall_precision(rounds, basis.relevant);
    m.search_precision = rp.precision;
    if (options.basis == BasisKind::qrels)
        m.search_recall = rp.recall;
    else
        m.search_recall = nugget_search_recall(nuggets, searched_documents(rounds), options.nugget_recall,
                                               options.nugget_page_cap);
    auto fm = fetch_metrics(trace, basis.relevant);
    m.url_error_rate = fm.url_error_rate;
    m.fetch_precision = fm.fetch_precision;
    return m;
}

// ---------------------------------------------------------------------------
// Metrics file

namespace detail {

inline nlohmann::ordered_json opt_json(const std::optional<double>& v)
{
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
}

inline std::optional<double> opt_read(const nlohmann::json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null())
        return std::nullopt;
    return it->get<double>();
}

} // namespace detail

inline nlohmann::ordered_json to_json(const MetricsRecord& m)
{
    nlohmann::ordered_json j;
    j["qid"] = m.qid;
    j["model"] = m.model;
    j["config"] = m.config;
    j["completed"] = m.completed;
    j["failure_reason"] = m.failure_reason;
    j["basis"] = to_string(m.basis);
    j["completeness"] = detail::opt_json(m.completeness);
    j["cite_recall"] = detail::opt_json(m.cite_recall);
    j["cite_precision"] = detail::opt_json(m.cite_precision);
    j["comp_in"] = detail::opt_json(m.comp_in);
    j["internal_share"] = detail::opt_json(m.internal_share);
    j["latency_s"] = m.latency_s;
    j["cost_usd"] = m.cost_usd;
    j["turns"] = m.turns;
    j["search_precision"] = detail::opt_json(m.search_precision);
    j["search_recall"] = detail::opt_json(m.search_recall);
    j["search_gain"] = detail::opt_json(m.search_gain);
    j["url_error_rate"] = detail::opt_json(m.url_error_rate);
    j["fetch_precision"] = detail::opt_json(m.fetch_precision);
    j["tool_calls"] = m.validity.calls;
    j["undefined_tool"] = m.validity.undefined_tool;
    j["param_violation"] = m.validity.param_violation;
    j["fetch_before_search"] = m.validity.fetch_before_search;
    j["url_errors"] = m.validity.url_error;
    return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j)
{
    MetricsRecord m;
    m.qid = j.at("qid").get<std::string>();
    m.model = j.value("model", std::string());
    m.config = j.value("config", std::string());
    m.completed = j.at("completed").get<bool>();
    m.failure_reason = j.value("failure_reason", std::string("none"));
    m.basis = j.value("basis", std::string("nuggets")) == "qrels" ? BasisKind::qrels : BasisKind::nuggets;
    m.completeness = detail::opt_read(j, "completeness");
    m.cite_recall = detail::opt_read(j, "cite_recall");
    m.cite_precision = detail::opt_read(j, "cite_precision");
    m.comp_in = detail::opt_read(j, "comp_in");
    m.internal_share = detail::opt_read(j, "internal_share");
    m.latency_s = j.at("latency_s").get<double>();
    m.cost_usd = j.at("cost_usd").get<double>();
    m.turns = j.at("turns").get<int>();
    m.search_precision = detail::opt_read(j, "search_precision");
    m.search_recall = detail::opt_read(j, "search_recall");
    m.search_gain = detail::opt_read(j, "search_gain");
    m.url_error_rate = detail::opt_read(j, "url_error_rate");
    m.fetch_precision = detail::opt_read(j, "fetch_precision");
    m.validity.calls = j.value("tool_calls", std::size_t{0});
    m.validity.undefined_tool = j.value("undefined_tool", std::size_t{0});
    m.validity.param_violation = j.value("param_violation", std::size_t{0});
    m.validity.fetch_before_search = j.value("fetch_before_search", std::size_t{0});
    m.validity.url_error = j.value("url_errors", std::size_t{0});
    return m;
}

inline std::vector<MetricsRecord> read_metrics(std::istream& in)
{
    std::vector<MetricsRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        try {
            out.push_back(metrics_from_json(detail::parse_json_line(line, line_no)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("metrics line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Leaderboard

inline constexpr std::array<const char*, 12> kLeaderboardColumns = {
    "Rate", "Comp.", "Rec.", "Prec.", "Latency", "Cost", "Turns",
    "Search Prec.", "Search Rec.", "Search Gain", "URL Err.", "Fetch Prec.",
};

struct LeaderboardRow {
    std::string model;
    std::string config;
    std::size_t runs = 0;
    std::array<std::optional<double>, 12> values;
};

/// Aggregates runs per (model, config): Rate is the completed share, every
/// other column is the mean over runs where the metric applies.
inline std::vector<LeaderboardRow> aggregate(const std::vector<MetricsRecord>& records)
{
    std::map<std::pair<std::string, std::string>, std::vector<const MetricsRecord*>> groups;
    for (const auto& r : records)
        groups[{r.model, r.config}].push_back(&r);
    std::vector<LeaderboardRow> rows;
    for (const auto& [key, runs] : groups) {
        LeaderboardRow row;
        row.model = key.first;
        row.config = key.second;
        row.runs = runs.size();
        auto mean = [&](auto getter) -> std::optional<double> {
            std::vector<double> v;
            for (const auto* r : runs)
                if (std::optional<double> x = getter(*r))
                    v.push_back(*x);
            return mean_of(v);
        };
        using R = MetricsRecord;
        row.values[0] = mean([](const R& r) -> std::optional<double> { return r.completed ? 1.0 : 0.0; });
        row.values[1] = mean([](const R& r) { return r.completeness; });
        row.values[2] = mean([](const R& r) { return r.cite_recall; });
        row.values[3] = mean([](const R& r) { return r.cite_precision; });
        row.values[4] = mean([](const R& r) -> std::optional<double> { return r.latency_s; });
        row.values[5] = mean([](const R& r) -> std::optional<double> { return r.cost_usd; });
        row.values[6] = mean([](const R& r) -> std::optional<double> { return static_cast<double>(r.turns); });
        row.values[7] = mean([](const R& r) { return r.search_precision; });
        row.values[8] = mean([](const R& r) { return r.search_recall; });
        row.values[9] = mean([](const R& r) { return r.search_gain; });
        row.values[10] = mean([](const R& r) { return r.url_error_rate; });
        row.values[11] = mean([](const R& r) { return r.fetch_precision; });
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_value(const std::optional<double>& v)
{
    if (!v)
        return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", *v == 0.0 ? 0.0 : *v);
    return buf;
}

inline std::string leaderboard_markdown(const std::vector<LeaderboardRow>& rows)
{
    std::ostringstream out;
    out << "| Model | Config | Runs |";
    for (const char* c : kLeaderboardColumns)
        out << ' ' << c << " |";
    out << "\n|---|---|---|";
    for (std::size_t i = 0; i < kLeaderboardColumns.size(); ++i)
        out << "---|";
    out << '\n';
    for (const auto& r : rows) {
        out << "| " << r.model << " | " << r.config << " | " << r.runs << " |";
        for (const auto& v : r.values)
            out << ' ' << format_value(v) << " |";
        out << '\n';
    }
    out << "\nColumn groups: Report Quality (Rate, Comp., Rec., Prec.); Efficiency (Latency [s], Cost [$], Turns); "
           "Search (Prec., Rec., Gain); Fetch (URL Err., Prec.). Fractions are in [0, 1].\n";
    return out.str();
}

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s)
        out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

inline std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows)
{
    std::ostringstream out;
    out << "model,config,runs";
    for (const char* c : kLeaderboardColumns)
        out << ',' << c;
    out << '\n';
    for (const auto& r : rows) {
        out << csv_field(r.model) << ',' << csv_field(r.config) << ',' << r.runs;
        for (const auto& v : r.values)
            out << ',' << format_value(v);
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Correlation

/// Sample Pearson r; empty when sizes differ, n < 3 or a variance is zero.
inline std::optional<double> pearson_r(const std::vector<double>& xs, const std::vector<double>& ys)
{
    if (xs.size() != ys.size() || xs.size() < 3)
        return std::nullopt;
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Two-sided permutation p-value of r with a fixed seed.
inline std::optional<double> permutation_p_value(const std::vector<double>& xs, std::vector<double> ys,
                                                 std::size_t iterations = 10000, std::uint64_t seed = 0)
{
    auto r = pearson_r(xs, ys);
    if (!r)
        return std::nullopt;
    std::mt19937_64 rng(seed);
    std::size_t extreme = 0;
    for (std::size_t i = 0; i < iterations; ++i) {
        std::shuffle(ys.begin(), ys.end(), rng);
        auto rp = pearson_r(xs, ys);
        if (rp && std::abs(*rp) >= std::abs(*r) - 1e-12)
            ++extreme;
    }
    return static_cast<double>(extreme + 1) / static_cast<double>(iterations + 1);
}

struct CorrelationGroup {
    std::string name;
    std::size_t n = 0;
    std::optional<double> r;
    std::optional<double> p;
};

/// Completeness vs search precision over completed runs, overall and split
/// into internal-knowledge runs (most supported nuggets never retrieved)
/// and search-based runs.
inline std::vector<CorrelationGroup> correlate_completeness_precision(const std::vector<MetricsRecord>& records,
                                                                      std::size_t permutations = 10000)
{
    std::vector<double> ax, ay, ix, iy, sx, sy;
    for (const auto& m : records) {
        if (!m.completed || !m.completeness || !m.search_precision)
            continue;
        ax.push_back(*m.search_precision);
        ay.push_back(*m.completeness);
        const bool internal = m.internal_share && *m.internal_share > 0.5;
        (internal ? ix : sx).push_back(*m.search_precision);
        (internal ? iy : sy).push_back(*m.completeness);
    }
    auto group = [&](std::string name, const std::vector<double>& x, const std::vector<double>& y) {
        return CorrelationGroup{std::move(name), x.size(), pearson_r(x, y), permutation_p_value(x, y, permutations)};
    };
    return {group("all", ax, ay), group("internal", ix, iy), group("search", sx, sy)};
}

} // namespace ravine
