// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "e2e_fixture.hpp"
#include "oracles.hpp"

#include "ravine/agent.hpp"
#include "ravine/hdbscan.hpp"
#include "ravine/metrics.hpp"
#include "ravine/nuggets.hpp"
#include "ravine/process_scorer.hpp"
#include "ravine/prompts.hpp"
#include "ravine/report_scorer.hpp"
#include "ravine/search_index.hpp"
#include "ravine/tools.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef RAVINE_FIXTURE_DIR
#define RAVINE_FIXTURE_DIR "tests/fixtures"
#endif

using namespace ravine;

namespace {

std::string g_fixtures = RAVINE_FIXTURE_DIR;

struct Failure {
    std::string message;
};

void require(bool ok, const std::string& message)
{
    if (!ok)
        throw Failure{message};
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_seconds(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Synthetic episodes for the process metrics.

struct Episode {
    RunTrace trace;
    std::vector<std::vector<std::string>> rounds; // successful searches only
    std::set<std::string> rel;
};

ToolCall search_call(int turn, const std::string& q, double k)
{
    return ToolCall::make("c" + std::to_string(turn), std::string(kSearchToolName),
                          nlohmann::json{{"query", q}, {"num_results", k}}.dump(), turn);
}

ToolCall fetch_call(int turn, const std::string& url)
{
    return ToolCall::make("f" + std::to_string(turn), std::string(kFetchToolName),
                          nlohmann::json{{"url", url}}.dump(), turn);
}

Episode random_episode(std::mt19937_64& rng)
{
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::vector<std::string> universe;
    for (int i = 0; i < 20; ++i)
        universe.push_back("d" + std::to_string(i));
    Episode e;
    std::shuffle(universe.begin(), universe.end(), rng);
    int rel_size = pick(1, 10);
    e.rel.insert(universe.begin(), universe.begin() + rel_size);
    e.trace.qid = "q";
    int rounds = pick(0, 8);
    int turn = 0;
    for (int r = 0; r < rounds; ++r) {
        Turn t;
        t.index = ++turn;
        std::shuffle(universe.begin(), universe.end(), rng);
        std::vector<std::string> returned(universe.begin(), universe.begin() + pick(0, 10));
        t.tool_calls.push_back(search_call(turn, "q" + std::to_string(r), static_cast<double>(returned.size() + 1)));
        t.tool_results.push_back({true, "serp", ToolErrorKind::none, returned});
        e.rounds.push_back(returned);
        // Noise that must not count as a round.
        if (pick(0, 2) == 0) {
            t.tool_calls.push_back(search_call(turn, "", 3));
            t.tool_results.push_back(ToolResult::failure(ToolErrorKind::empty_query, "Error"));
        }
        if (pick(0, 2) == 0) {
            t.tool_calls.push_back(fetch_call(turn, "https://x/" + universe[0]));
            t.tool_results.push_back({true, "page", ToolErrorKind::none, {universe[0]}});
        }
        e.trace.turns.push_back(std::move(t));
    }
    return e;
}

Episode worked_episode()
{
    Episode e;
    for (int i = 1; i <= 10; ++i)
        e.rel.insert("d" + std::to_string(i));
    e.rounds = {{"d1", "d2", "d3", "x1", "x2"}, {"d3", "d4", "x3"}};
    for (int t = 0; t < 2; ++t) {
        Turn turn;
        turn.index = t + 1;
        turn.tool_calls.push_back(search_call(t + 1, "q", 5));
        turn.tool_results.push_back({true, "serp", ToolErrorKind::none, e.rounds[t]});
        e.trace.turns.push_back(std::move(turn));
    }
    return e;
}

std::vector<Episode> episodes()
{
    std::mt19937_64 rng(20240601);
    std::vector<Episode> out{worked_episode()};
    while (out.size() < 200)
        out.push_back(random_episode(rng));
    return out;
}

std::string criterion1()
{
    auto t0 = std::chrono::steady_clock::now();
    auto eps = episodes();
    std::size_t checked = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const auto& e = eps[i];
        const std::string at = "episode " + std::to_string(i) + ": ";
        auto rounds = search_rounds(e.trace);
        require(rounds.size() == e.rounds.size(), at + "round count");
        auto o = oracle::process(e.rounds, e.rel);
        auto c = cumulative_coverage(rounds, e.rel);
        require(c && c->size() == o.coverage.size(), at + "coverage length");
        for (std::size_t t = 0; t < o.coverage.size(); ++t)
            require(close((*c)[t], o.coverage[t], 1e-12), at + "C(" + std::to_string(t + 1) + ")");
        auto g = search_gain(rounds, e.rel);
        require(g && g->deltas.size() == o.deltas.size(), at + "delta length");
        for (std::size_t t = 0; t < o.deltas.size(); ++t)
            require(close(g->deltas[t], o.deltas[t], 1e-12), at + "delta(" + std::to_string(t + 1) + ")");
        if (rounds.empty())
            require(!g->mean, at + "mean gain should be not applicable without rounds");
        else
            require(g->mean && close(*g->mean, o.mean_gain, 1e-12), at + "mean gain");
        auto rp = search_recall_precision(rounds, e.rel);
        require(rp.recall && close(*rp.recall, o.recall, 1e-12), at + "recall");
        if (o.precision < 0)
            require(!rp.precision, at + "precision should be not applicable");
        else
            require(rp.precision && close(*rp.precision, o.precision, 1e-12), at + "precision");
        ++checked;
    }
    // The worked example from the metric definitions.
    auto w = search_gain(search_rounds(eps[0].trace), eps[0].rel);
    require(close(w->deltas[0], 0.3, 1e-12) && close(w->deltas[1], 0.1, 1e-12) && close(*w->mean, 0.2, 1e-12),
            "worked example deltas");
    double secs = seconds_since(t0);
    require(secs < 5.0, "runtime " + fmt(secs) + " s exceeds 5 s");
    return std::to_string(checked) + " episodes, " + fmt_seconds(secs) + " s";
}

std::string criterion2()
{
    auto eps = episodes();
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const auto& e = eps[i];
        const std::string at = "episode " + std::to_string(i) + ": ";
        auto rounds = search_rounds(e.trace);
        auto g = search_gain(rounds, e.rel);
        auto rp = search_recall_precision(rounds, e.rel);
        auto c = cumulative_coverage(rounds, e.rel);
        double c_last = c->empty() ? 0.0 : c->back();
        std::size_t fresh = 0;
        for (auto n : g->new_relevant)
            fresh += n;
        // Σ over integer numerators is exact, and the shared denominator makes
        // Σδ, C(T) and recall the same double.
        std::size_t covered = 0;
        for (const auto& d : searched_documents(rounds))
            covered += e.rel.count(d);
        require(fresh == covered, at + "sum of new relevant pages differs from pages covered");
        double telescoped = static_cast<double>(fresh) / static_cast<double>(g->rel_size);
        require(telescoped == c_last, at + "sum of gains != C(T)");
        require(c_last == *rp.recall, at + "C(T) != recall");
        double summed = 0;
        for (double d : g->deltas)
            summed += d;
        require(close(summed, c_last, 1e-12), at + "floating sum of deltas drifted");
    }
    return std::to_string(eps.size()) + " episodes";
}

// ---------------------------------------------------------------------------

std::string criterion3()
{
    std::mt19937_64 rng(7);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::size_t upgrades = 0;
    for (int m = 0; m < 100; ++m) {
        int n = pick(1, 60);
        int blocks = pick(0, 8);
        std::vector<Nugget> nuggets(static_cast<std::size_t>(n));
        std::vector<bool> vital(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            vital[j] = pick(0, 1) == 1;
            nuggets[j].text = "n" + std::to_string(j);
            nuggets[j].label = vital[j] ? NuggetLabel::vital : NuggetLabel::okay;
        }
        std::vector<std::vector<int>> labels(static_cast<std::size_t>(blocks), std::vector<int>(n));
        for (auto& row : labels)
            for (auto& l : row)
                l = pick(0, 2);
        auto to_matrix = [&] {
            AssignmentMatrix mat;
            for (const auto& row : labels) {
                std::vector<Support> r;
                for (int l : row)
                    r.push_back(l == 2 ? Support::support : l == 1 ? Support::partial_support : Support::not_support);
                mat.push_back(r);
            }
            return mat;
        };
        double got = score_completeness(to_matrix(), nuggets);
        double want = oracle::completeness(labels, vital);
        require(close(got, want, 1e-12), "matrix " + std::to_string(m) + ": " + fmt(got) + " vs " + fmt(want));
        if (blocks == 0)
            continue;
        for (int u = 0; u < 5; ++u) {
            auto& cell = labels[pick(0, blocks - 1)][pick(0, n - 1)];
            if (cell == 2)
                continue;
            ++cell;
            ++upgrades;
            double after = score_completeness(to_matrix(), nuggets);
            require(after >= got, "matrix " + std::to_string(m) + ": completeness fell after an upgrade");
            require(close(after, oracle::completeness(labels, vital), 1e-12), "matrix " + std::to_string(m)
                                                                                 + ": upgraded value off oracle");
            got = after;
        }
    }
    return "100 matrices, " + std::to_string(upgrades) + " single-label upgrades";
}

// ---------------------------------------------------------------------------

std::string criterion4()
{
    Corpus corpus;
    for (const char* id : {"A", "B", "C", "S1", "S2", "S3", "S4", "S5"})
        corpus.add({id, std::string("https://site/") + id, id, "", "body"});
    auto resolve = corpus_resolver(corpus);
    auto cite = [](std::initializer_list<const char*> ids) {
        std::vector<Citation> out;
        for (auto id : ids)
            out.push_back({id, std::string("https://site/") + id});
        return out;
    };

    // Weighted gold set from nugget sources.
    std::vector<Nugget> nuggets(2);
    nuggets[0].sources = {"A", "B"};
    nuggets[1].sources = {"B"};
    auto gold = gold_citations_for_block({Support::support, Support::support}, nuggets, {"A", "B", "C"});
    require(gold.size() == 2 && gold[0] == GoldPage{"B", 2.0} && gold[1] == GoldPage{"A", 1.0},
            "gold set should be {(B,2),(A,1)}");
    auto s = score_block_citations(cite({"B", "C"}), gold, resolve);
    require(s.recall && close(*s.recall, 2.0 / 3.0, 1e-12), "recall should be 2/3");
    require(s.precision && close(*s.precision, 0.5, 1e-12), "precision should be 1/2");

    // Five sources, all retrieved: only the first three by docid count.
    std::vector<Nugget> wide(1);
    wide[0].sources = {"S1", "S2", "S3", "S4", "S5"};
    std::set<std::string> all{"S1", "S2", "S3", "S4", "S5"};
    auto capped = gold_citations_for_block({Support::support}, wide, all);
    require(capped.size() == 3, "capped gold should hold 3 pages, got " + std::to_string(capped.size()));
    for (const auto& g : capped)
        require(g.docid == "S1" || g.docid == "S2" || g.docid == "S3", "page " + g.docid + " escaped the cap");
    auto beyond = score_block_citations(cite({"S4", "S5"}), capped, resolve);
    require(close(*beyond.recall, 0.0, 1e-12) && close(*beyond.precision, 0.0, 1e-12),
            "citing capped-out sources must not score");
    auto inside = score_block_citations(cite({"S1", "S4"}), capped, resolve);
    require(close(*inside.recall, 1.0 / 3.0, 1e-12) && close(*inside.precision, 0.5, 1e-12),
            "one capped-in citation scores recall 1/3, precision 1/2");

    // When only some sources were retrieved, those fill the cap first.
    auto partial = gold_citations_for_block({Support::support}, wide, {"S4", "S5"});
    require(partial.size() == 2 && partial[0].docid == "S4" && partial[1].docid == "S5",
            "retrieved sources should fill the per-nugget cap first");
    return "worked example and 5-source cap";
}

// ---------------------------------------------------------------------------

std::string criterion5()
{
    auto cases = nlohmann::json::parse(read_text_file(g_fixtures + "/blocks/reports.json"));
    require(cases.size() >= 25, "fewer than 25 reports");
    for (const auto& c : cases) {
        const std::string name = c.at("name").get<std::string>();
        const std::string report = c.at("report").get<std::string>();
        auto blocks = split_into_blocks(report);
        std::string rebuilt;
        for (const auto& b : blocks)
            rebuilt += b.raw;
        require(rebuilt == report, name + ": raw slices do not reproduce the report");
        const auto& want = c.at("blocks");
        require(blocks.size() == want.size(), name + ": expected " + std::to_string(want.size()) + " blocks, got "
                                                  + std::to_string(blocks.size()));
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            require(blocks[i].text == want[i].at("text").get<std::string>(),
                    name + ": block " + std::to_string(i) + " text '" + blocks[i].text + "'");
            std::vector<std::string> urls;
            for (const auto& cit : blocks[i].citations)
                urls.push_back(cit.url);
            require(urls == want[i].at("urls").get<std::vector<std::string>>(),
                    name + ": block " + std::to_string(i) + " urls");
            require(blocks[i].malformed_links == want[i].value("malformed", std::size_t{0}),
                    name + ": block " + std::to_string(i) + " malformed count");
        }
    }
    return std::to_string(cases.size()) + " reports";
}

// ---------------------------------------------------------------------------

std::string criterion6()
{
    namespace fs = std::filesystem;
    auto t0 = std::chrono::steady_clock::now();
    const std::string fixture = g_fixtures + "/e2e";
    const auto base = fs::temp_directory_path() / ("ravine_acceptance_" + std::to_string(::getpid()));
    const std::string a = (base / "a").string(), b = (base / "b").string();
    e2e::run_pipeline(fixture, a);
    e2e::run_pipeline(fixture, b);

    auto files = e2e::list_files(a);
    require(files == e2e::list_files(b), "the two executions wrote different file sets");
    for (const auto& f : files)
        require(read_text_file(a + "/" + f) == read_text_file(b + "/" + f), f + " differs between executions");

    // Nuggets against the hand-derived list (order-free).
    std::set<std::string> want_nuggets, got_nuggets;
    {
        std::istringstream in(read_text_file(fixture + "/nuggets_expected.jsonl"));
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) {
                auto j = nlohmann::json::parse(line);
                j["label"] = "vital";
                want_nuggets.insert(nlohmann::json{{"qid", j["qid"]}, {"text", j["text"]}, {"label", j["label"]},
                                                   {"sources", j["sources"]}}
                                        .dump());
            }
        std::istringstream got(read_text_file(a + "/nuggets.jsonl"));
        while (std::getline(got, line))
            if (!line.empty()) {
                auto j = nlohmann::json::parse(line);
                got_nuggets.insert(nlohmann::json{{"qid", j["qid"]}, {"text", j["text"]}, {"label", j["label"]},
                                                  {"sources", j["sources"]}}
                                       .dump());
            }
    }
    require(got_nuggets == want_nuggets, "nugget file differs from the hand-derived nugget list");

    // Per-run values.
    auto runs = e2e::read_csv(fixture + "/reference_runs.csv");
    auto metrics = load_metrics(a + "/metrics.jsonl");
    require(metrics.size() == runs.size() - 1, "metrics row count");
    for (std::size_t r = 1; r < runs.size(); ++r) {
        const auto& row = runs[r];
        const auto& m = metrics[r - 1];
        require(m.qid == row[0], "metrics order");
        auto val = [](const std::optional<double>& v) { return v ? *v : std::nan(""); };
        std::vector<double> got = {m.completed ? 1.0 : 0.0, val(m.completeness), val(m.cite_recall),
                                   val(m.cite_precision), m.latency_s, m.cost_usd, static_cast<double>(m.turns),
                                   val(m.search_precision), val(m.search_recall), val(m.search_gain),
                                   val(m.url_error_rate), val(m.fetch_precision)};
        for (std::size_t c = 0; c < got.size(); ++c)
            require(close(got[c], std::stod(row[c + 1]), 1e-9),
                    m.qid + " " + runs[0][c + 1] + ": " + fmt(got[c]) + " vs reference " + row[c + 1]);
    }

    // Leaderboard.
    auto want = e2e::read_csv(fixture + "/reference_leaderboard.csv");
    auto got = e2e::read_csv(a + "/leaderboard.csv");
    require(got.size() == want.size() && got[0] == want[0], "leaderboard header or row count");
    for (std::size_t r = 1; r < want.size(); ++r) {
        require(got[r].size() == want[r].size(), "leaderboard row width");
        for (std::size_t c = 0; c < 3; ++c)
            require(got[r][c] == want[r][c], "leaderboard key column " + want[0][c]);
        for (std::size_t c = 3; c < want[r].size(); ++c)
            require(close(std::stod(got[r][c]), std::stod(want[r][c]), 1e-9),
                    want[0][c] + ": " + got[r][c] + " vs reference " + want[r][c]);
    }
    fs::remove_all(base);
    double secs = seconds_since(t0);
    require(secs < 30.0, "runtime " + fmt(secs) + " s exceeds 30 s");
    return std::to_string(files.size()) + " files identical, " + fmt_seconds(secs) + " s";
}

// ---------------------------------------------------------------------------

std::string criterion7()
{
    const std::string dir = g_fixtures + "/constants/";
    require(kSearchToolSchema == read_text_file(dir + "web_search.json"), "web_search schema text");
    require(kFetchToolSchema == read_text_file(dir + "web_fetch.json"), "web_fetch schema text");
    auto schemas = tool_schemas();
    require(schemas.size() == 2 && schemas[0].dump(4) == read_text_file(dir + "web_search.json")
                && schemas[1].dump(4) == read_text_file(dir + "web_fetch.json"),
            "tool_schemas() round trip");
    require(prompts::kNuggetCreation == read_text_file(dir + "nugget_creation.txt"), "nugget creation prompt");
    require(prompts::kNuggetMerging == read_text_file(dir + "nugget_merging.txt"), "nugget merging prompt");
    require(prompts::kNuggetScoring == read_text_file(dir + "nugget_scoring.txt"), "nugget scoring prompt");
    require(prompts::kNuggetAssignment == read_text_file(dir + "nugget_assignment.txt"), "nugget assignment prompt");
    require(prompts::kAgentSearch == read_text_file(dir + "agent_search.txt"), "agent search prompt");
    require(kDefaultNuggetCap == 60 && NuggetConfig{}.cap == 60, "nugget cap default");
    CostModel cost;
    require(cost.search_call_price == 0.01 && cost.fetch_call_price == 0.0, "tool prices");
    return "2 schemas, 5 prompts, cap 60, $0.01 search, free fetch";
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> canonical(ClusteringResult r, const std::vector<std::size_t>& back)
{
    std::vector<std::vector<std::size_t>> out;
    for (auto& c : r.clusters) {
        for (auto& i : c)
            i = back[i];
        std::sort(c.begin(), c.end());
        out.push_back(c);
    }
    std::sort(out.begin(), out.end());
    for (auto& i : r.outliers)
        i = back[i];
    std::sort(r.outliers.begin(), r.outliers.end());
    out.push_back(r.outliers); // outliers last, after the sorted clusters
    return out;
}

std::string criterion8()
{
    std::mt19937_64 rng(99);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::normal_distribution<double> noise(0.0, 1.0);
    std::size_t clustered_sets = 0;
    for (int s = 0; s < 500; ++s) {
        const std::size_t n = static_cast<std::size_t>(pick(1, 100));
        const int dim = pick(2, 16);
        const int centers = pick(1, 6);
        const double spread = std::uniform_real_distribution<double>(0.01, 0.6)(rng);
        std::vector<Embedding> centres(static_cast<std::size_t>(centers), Embedding(dim));
        for (auto& c : centres)
            for (auto& x : c)
                x = noise(rng);
        std::vector<Embedding> points(n, Embedding(dim));
        for (auto& p : points) {
            const auto& c = centres[static_cast<std::size_t>(pick(0, centers - 1))];
            for (int d = 0; d < dim; ++d)
                p[d] = c[d] + spread * noise(rng);
            // Occasional exact duplicates exercise equal distances.
            if (pick(0, 9) == 0)
                p = c;
            normalize_l2(p);
        }
        ClusteringParams params;
        params.min_cluster_size = static_cast<std::size_t>(pick(2, 6));
        auto result = hdbscan_cosine(points, params);
        const std::string at = "set " + std::to_string(s) + ": ";

        std::vector<int> seen(n, 0);
        for (const auto& c : result.clusters) {
            require(c.size() >= params.min_cluster_size, at + "cluster below min_cluster_size");
            for (auto i : c)
                require(i < n && ++seen[i] == 1, at + "index repeated or out of range");
        }
        for (auto i : result.outliers)
            require(i < n && ++seen[i] == 1, at + "outlier repeated or out of range");
        require(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }), at + "not a partition");
        clustered_sets += result.clusters.empty() ? 0 : 1;

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Embedding> shuffled(n);
        for (std::size_t i = 0; i < n; ++i)
            shuffled[i] = points[perm[i]];
        std::vector<std::size_t> identity(n);
        std::iota(identity.begin(), identity.end(), 0);
        require(canonical(hdbscan_cosine(shuffled, params), perm) == canonical(result, identity),
                at + "relabeling the inputs changed the clustering");
    }
    return "500 sets, " + std::to_string(clustered_sets) + " with clusters";
}

// ---------------------------------------------------------------------------

std::string criterion9()
{
    std::mt19937_64 rng(4242);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::vector<std::string> vocab;
    for (int i = 0; i < 40; ++i)
        vocab.push_back("w" + std::to_string(i));
    std::size_t queries = 0, prefix_pairs = 0;
    for (int c = 0; c < 40; ++c) {
        const int n = pick(1, 100);
        Corpus corpus;
        std::vector<std::vector<std::string>> tokens;
        auto phrase = [&](int len) {
            std::string s;
            for (int i = 0; i < len; ++i)
                s += (i ? " " : "") + vocab[static_cast<std::size_t>(pick(0, pick(3, 39)))];
            return s;
        };
        for (int d = 0; d < n; ++d) {
            char id[16];
            std::snprintf(id, sizeof id, "doc%03d", d);
            Document doc{id, std::string("https://c/") + id, phrase(pick(0, 4)), phrase(pick(0, 2)),
                         phrase(pick(0, 30))};
            tokens.push_back(oracle::words(doc.title + "\n" + doc.headings + "\n" + doc.body));
            corpus.add(std::move(doc));
        }
        IndexConfig config;
        if (c % 2) {
            config.bm25_k1 = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
            config.bm25_b = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        }
        auto index = LexicalIndex::build(corpus, config);
        for (int q = 0; q < 10; ++q) {
            std::string query = phrase(pick(1, 4));
            if (pick(0, 4) == 0)
                query += " unseen";
            auto qtokens = oracle::words(query);
            auto all = index.search(query, static_cast<std::size_t>(n));
            std::size_t matching = 0;
            for (int d = 0; d < n; ++d) {
                bool match = std::any_of(qtokens.begin(), qtokens.end(), [&](const std::string& t) {
                    return std::find(tokens[d].begin(), tokens[d].end(), t) != tokens[d].end();
                });
                matching += match ? 1 : 0;
            }
            require(all.size() == matching, "hit count differs from matching documents");
            for (std::size_t h = 0; h < all.size(); ++h) {
                std::size_t d = static_cast<std::size_t>(std::stoi(all[h].docid.substr(3)));
                double want = oracle::bm25(tokens, d, qtokens, config.bm25_k1, config.bm25_b);
                require(close(all[h].score, want, 1e-9), all[h].docid + ": " + fmt(all[h].score) + " vs " + fmt(want));
                if (h)
                    require(all[h - 1].score > all[h].score
                                || (all[h - 1].score == all[h].score && all[h - 1].docid < all[h].docid),
                            "hits out of order");
            }
            for (std::size_t k = 1; k <= all.size() + 1; ++k) {
                auto top = index.search(query, k);
                require(top.size() == std::min(k, all.size()), "top-k size");
                for (std::size_t i = 0; i < top.size(); ++i)
                    require(top[i].docid == all[i].docid, "top-" + std::to_string(k) + " is not a prefix");
                ++prefix_pairs;
            }
            ++queries;
        }
    }
    return std::to_string(queries) + " queries, " + std::to_string(prefix_pairs) + " prefix checks";
}

// ---------------------------------------------------------------------------

std::string criterion10()
{
    auto trace_with = [](std::vector<std::pair<std::int64_t, std::int64_t>> tokens, int ok_searches,
                         int failed_searches, int ok_fetches, int failed_fetches) {
        RunTrace t;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            Turn turn;
            turn.index = static_cast<int>(i + 1);
            turn.prompt_tokens = tokens[i].first;
            turn.completion_tokens = tokens[i].second;
            t.turns.push_back(turn);
        }
        if (t.turns.empty())
            t.turns.emplace_back();
        auto& last = t.turns.back();
        for (int i = 0; i < ok_searches; ++i) {
            last.tool_calls.push_back(search_call(last.index, "q", 3));
            last.tool_results.push_back({true, "serp", ToolErrorKind::none, {}});
        }
        for (int i = 0; i < failed_searches; ++i) {
            last.tool_calls.push_back(search_call(last.index, "", 3));
            last.tool_results.push_back(ToolResult::failure(ToolErrorKind::empty_query, "Error"));
        }
        for (int i = 0; i < ok_fetches; ++i) {
            last.tool_calls.push_back(fetch_call(last.index, "u"));
            last.tool_results.push_back({true, "page", ToolErrorKind::none, {"d"}});
        }
        for (int i = 0; i < failed_fetches; ++i) {
            last.tool_calls.push_back(fetch_call(last.index, "bad"));
            last.tool_results.push_back(ToolResult::failure(ToolErrorKind::url_error, "URL not found"));
        }
        return t;
    };

    CostModel model;
    model.input_price_per_mtok = 0.08;
    model.output_price_per_mtok = 0.20;
    auto worked = account_run(trace_with({{4000, 500}, {6000, 1500}}, 3, 0, 0, 0), model);
    require(close(worked.cost_usd, 0.0312, 1e-12), "worked example: " + fmt(worked.cost_usd));

    std::mt19937_64 rng(31);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (int c = 0; c < 20; ++c) {
        std::vector<std::pair<std::int64_t, std::int64_t>> tokens;
        double prompt = 0, completion = 0;
        for (int t = pick(1, 6); t > 0; --t) {
            tokens.emplace_back(pick(0, 200000), pick(0, 20000));
            prompt += static_cast<double>(tokens.back().first);
            completion += static_cast<double>(tokens.back().second);
        }
        int s_ok = pick(0, 10), s_bad = pick(0, 3), f_ok = pick(0, 10), f_bad = pick(0, 3);
        CostModel m;
        m.input_price_per_mtok = std::uniform_real_distribution<double>(0.0, 15.0)(rng);
        m.output_price_per_mtok = std::uniform_real_distribution<double>(0.0, 60.0)(rng);
        if (c % 4 == 3)
            m.fetch_call_price = 0.002;
        auto got = account_run(trace_with(tokens, s_ok, s_bad, f_ok, f_bad), m);
        double want = oracle::cost(prompt, completion, m.input_price_per_mtok, m.output_price_per_mtok, s_ok, f_ok,
                                   m.search_call_price, m.fetch_call_price);
        require(close(got.cost_usd, want, 1e-12), "case " + std::to_string(c) + ": " + fmt(got.cost_usd) + " vs "
                                                      + fmt(want));
    }
    return "$0.0312 and 20 random cases";
}

} // namespace

int main(int argc, char** argv)
{
    if (argc > 1)
        g_fixtures = argv[1];
    const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
        {"metric oracle equivalence", criterion1},
        {"telescoping identity", criterion2},
        {"completeness oracle and monotonicity", criterion3},
        {"citation rules fixture", criterion4},
        {"block parser corpus", criterion5},
        {"deterministic end-to-end fixture", criterion6},
        {"constants conformance", criterion7},
        {"clustering invariants", criterion8},
        {"BM25 oracle and top-k prefix", criterion9},
        {"cost accounting", criterion10},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        std::string status = "PASS", detail;
        try {
            detail = criteria[i].second();
        } catch (const Failure& f) {
            status = "FAIL";
            detail = f.message;
        } catch (const std::exception& e) {
            status = "FAIL";
            detail = std::string("exception: ") + e.what();
        }
        failed += status == "FAIL";
        std::cout << status << " " << (i + 1) << " " << criteria[i].first << " (" << detail << ")" << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}
