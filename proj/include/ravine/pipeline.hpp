#pragma once

// File-level steps shared by the command-line tool and the end-to-end tests.

#include "ravine/agent.hpp"
#include "ravine/corpus.hpp"
#include "ravine/embedding.hpp"
#include "ravine/error.hpp"
#include "ravine/metrics.hpp"
#include "ravine/nuggets.hpp"
#include "ravine/providers.hpp"
#include "ravine/search_index.hpp"
#include "ravine/tools.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

namespace ravine {

/// Receives one machine-parsable progress line, e.g.
/// "progress stage=run qid=q1 done=2 total=3".
using Progress = std::function<void(const std::string&)>;

inline std::ifstream open_input(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path + "'");
    return in;
}

inline std::string read_text_file(const std::string& path)
{
    auto in = open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content)
{
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write '" + path + "'");
    out << content;
    if (!out)
        throw Error("write failed for '" + path + "'");
}

namespace detail {

template <typename F>
auto load_with_path(const std::string& path, F&& parse)
{
    auto in = open_input(path);
    try {
        return parse(in);
    } catch (const Error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline std::string progress_line(std::string_view stage, const std::string& qid, std::size_t done, std::size_t total)
{
    return "progress stage=" + std::string(stage) + " qid=" + qid + " done=" + std::to_string(done)
           + " total=" + std::to_string(total);
}

} // namespace detail

inline Corpus load_corpus(const std::string& path)
{
    return detail::load_with_path(path, [](std::istream& in) { return ingest_corpus(in); });
}

inline std::vector<Query> load_queries(const std::string& path)
{
    return detail::load_with_path(path, [](std::istream& in) { return parse_queries(in); });
}

inline QrelSet load_qrels(const std::string& path)
{
    return detail::load_with_path(path, [](std::istream& in) { return parse_qrels(in); });
}

inline std::map<std::string, std::vector<Nugget>> load_nuggets(const std::string& path)
{
    return detail::load_with_path(path, [](std::istream& in) { return read_nuggets(in); });
}

inline std::vector<MetricsRecord> load_metrics(const std::string& path)
{
    return detail::load_with_path(path, [](std::istream& in) { return read_metrics(in); });
}

// ---------------------------------------------------------------------------
// build-index

inline std::unique_ptr<Retriever> build_index(const Corpus& corpus, const IndexConfig& config,
                                              std::shared_ptr<const Embedder> embedder)
{
    if (config.kind == IndexKind::dense)
        return std::make_unique<DenseIndex>(DenseIndex::build(corpus, std::move(embedder), config));
    return std::make_unique<LexicalIndex>(LexicalIndex::build(corpus, config));
}

// ---------------------------------------------------------------------------
// nuggets

struct QueryNuggets {
    std::string qid;
    NuggetBuild build;
};

/// Builds nuggets for every query in file order. Queries without judged
/// segments get an empty entry.
inline std::vector<QueryNuggets> generate_nuggets(const Corpus& corpus, const std::vector<Query>& queries,
                                                  const std::vector<QrelRecord>& qrels, const Judge& judge,
                                                  const Embedder& embedder, const NuggetConfig& config,
                                                  const Progress& progress = {})
{
    std::vector<QueryNuggets> out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        out.push_back({queries[i].qid, build_nuggets(queries[i], qrels, corpus, judge, embedder, config)});
        if (progress)
            progress(detail::progress_line("nuggets", queries[i].qid, i + 1, queries.size()) + " nuggets="
                     + std::to_string(out.back().build.nuggets.size()));
    }
    return out;
}

inline std::string nuggets_to_string(const std::vector<QueryNuggets>& all)
{
    std::ostringstream out;
    for (const auto& q : all)
        write_nuggets(out, q.build.nuggets);
    return out.str();
}

// ---------------------------------------------------------------------------
// run

struct RunPlan {
    std::string run_id = "model";
    std::string config_label = "32k";
    RunConfig run;
    std::size_t fetch_budget = 20000;
    std::size_t max_in_flight = 1;
    std::function<std::unique_ptr<ModelClient>(const Query&)> make_client;
    std::function<Clock()> make_clock; // fresh clock per episode when set
};

/// One episode per query. Episodes run concurrently but results come back
/// in query order.
inline std::vector<RunTrace> run_queries(const Corpus& corpus, const Retriever& index,
                                         const std::vector<Query>& queries, const RunPlan& plan,
                                         const Progress& progress = {})
{
    if (!plan.make_client)
        throw Error("run plan has no model client");
    ToolBox tools(corpus, index, plan.fetch_budget);
    std::mutex progress_mutex;
    std::size_t done = 0;
    return parallel_map(queries.size(), std::max<std::size_t>(1, plan.max_in_flight), [&](std::size_t i) {
        auto client = plan.make_client(queries[i]);
        RunConfig config = plan.run;
        if (plan.make_clock)
            config.clock = plan.make_clock();
        RunTrace trace = run_episode(*client, queries[i], tools, config);
        trace.run_id = plan.run_id;
        trace.config = plan.config_label;
        if (progress) {
            std::lock_guard lock(progress_mutex);
            progress(detail::progress_line("run", queries[i].qid, ++done, queries.size()) + " turns="
                     + std::to_string(trace.turns.size()) + " status=" + std::string(to_string(trace.failure_reason)));
        }
        return trace;
    });
}

inline std::string trace_file_name(const RunTrace& trace) { return trace.qid + ".jsonl"; }

inline void write_traces(const std::string& dir, const std::vector<RunTrace>& traces)
{
    std::filesystem::create_directories(dir);
    for (const auto& t : traces)
        write_text_file((std::filesystem::path(dir) / trace_file_name(t)).string(), trace_to_string(t));
}

/// Every *.jsonl file in `dir`, by file name.
inline std::vector<RunTrace> read_traces(const std::string& dir)
{
    if (!std::filesystem::is_directory(dir))
        throw Error("trace directory '" + dir + "' does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".jsonl")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<RunTrace> out;
    for (const auto& f : files)
        out.push_back(detail::load_with_path(f.string(), [](std::istream& in) { return read_trace(in); }));
    return out;
}

/// Scripted replies keyed by qid: {"q1": [reply, ...], ...}.
inline std::map<std::string, nlohmann::json> load_scripts(const std::string& path)
{
    auto j = detail::load_with_path(path, [](std::istream& in) {
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(e.what());
        }
    });
    if (!j.is_object())
        throw FormatError(path + ": script file must map qids to reply lists");
    std::map<std::string, nlohmann::json> out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out[it.key()] = it.value();
    return out;
}

// ---------------------------------------------------------------------------
// score

struct ScoreInputs {
    const Corpus* corpus = nullptr;
    const std::vector<Query>* queries = nullptr;
    const std::map<std::string, std::vector<Nugget>>* nuggets = nullptr;
    const RelevanceMap* qrels_rel = nullptr;
};

inline std::vector<MetricsRecord> score_traces(const std::vector<RunTrace>& traces, const ScoreInputs& in,
                                               const Judge& judge, const ScoringOptions& options,
                                               const Progress& progress = {})
{
    std::map<std::string, const Query*> by_qid;
    for (const auto& q : *in.queries)
        by_qid[q.qid] = &q;
    static const std::vector<Nugget> no_nuggets;
    static const std::set<std::string> no_rel;
    std::vector<MetricsRecord> out;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& t = traces[i];
        auto q = by_qid.find(t.qid);
        if (q == by_qid.end())
            throw Error("trace for unknown qid '" + t.qid + "'");
        auto n = in.nuggets->find(t.qid);
        auto r = in.qrels_rel->find(t.qid);
        out.push_back(score_run(t, q->second->text, n == in.nuggets->end() ? no_nuggets : n->second,
                                r == in.qrels_rel->end() ? no_rel : r->second, *in.corpus, judge, options));
        if (progress)
            progress(detail::progress_line("score", t.qid, i + 1, traces.size()));
    }
    return out;
}

inline std::string metrics_to_string(const std::vector<MetricsRecord>& records)
{
    std::ostringstream out;
    for (const auto& m : records)
        out << to_json(m).dump() << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// correlate

inline std::string correlation_summary(const std::vector<CorrelationGroup>& groups, std::size_t permutations)
{
    std::ostringstream out;
    out << "group,n,pearson_r,p_permutation\n";
    for (const auto& g : groups)
        out << g.name << ',' << g.n << ',' << format_value(g.r) << ',' << format_value(g.p) << '\n';
    out << "# p from a two-sided permutation test with " << permutations << " shuffles (seed 0)\n";
    return out.str();
}

/// Scatter points for external plotting.
inline std::string correlation_points_csv(const std::vector<MetricsRecord>& records)
{
    std::ostringstream out;
    out << "model,config,qid,search_precision,completeness,internal_share,group\n";
    for (const auto& m : records) {
        if (!m.completed || !m.completeness || !m.search_precision)
            continue;
        const bool internal = m.internal_share && *m.internal_share > 0.5;
        out << csv_field(m.model) << ',' << csv_field(m.config) << ',' << csv_field(m.qid) << ','
            << format_value(m.search_precision) << ',' << format_value(m.completeness) << ','
            << format_value(m.internal_share) << ',' << (internal ? "internal" : "search") << '\n';
    }
    return out.str();
}

} // namespace ravine
