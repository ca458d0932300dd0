#include "ravine/http_providers.hpp"
#include "ravine/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <memory>
#include <string>

namespace {

using namespace ravine;

struct ProviderFlags {
    bool mock_judge = false;
    std::string judge_url;
    std::string judge_model = "judge";
    bool mock_embedder = false;
    std::string embed_url;
    std::string embed_model = "embedder";
    std::size_t embed_dim = 4096;
    bool backoff = true;

    void add_judge(CLI::App* cmd)
    {
        cmd->add_flag("--mock-judge", mock_judge, "Use the deterministic rule-based judge");
        cmd->add_option("--judge-url", judge_url, "Chat-completions endpoint (or RAVINE_JUDGE_URL)");
        cmd->add_option("--judge-model", judge_model, "Judge model name");
    }

    void add_embedder(CLI::App* cmd)
    {
        cmd->add_flag("--mock-embedder", mock_embedder, "Use the hashing embedder");
        cmd->add_option("--embed-url", embed_url, "Embeddings endpoint (or RAVINE_EMBED_URL)");
        cmd->add_option("--embed-model", embed_model, "Embedding model name");
        cmd->add_option("--embed-dim", embed_dim, "Embedding dimension")->check(CLI::PositiveNumber);
    }

    RetryPolicy retry() const { return backoff ? RetryPolicy() : RetryPolicy::immediate(); }

    std::unique_ptr<Judge> judge() const
    {
        std::string url = judge_url.empty() ? http::env_or_empty("RAVINE_JUDGE_URL") : judge_url;
        if (mock_judge)
            return std::make_unique<MockJudge>();
        if (url.empty())
            throw Error("no judge configured: pass --mock-judge or --judge-url");
        return std::make_unique<http::HttpJudge>(url, http::env_or_empty("RAVINE_JUDGE_KEY"), judge_model);
    }

    std::shared_ptr<const Embedder> embedder() const
    {
        std::string url = embed_url.empty() ? http::env_or_empty("RAVINE_EMBED_URL") : embed_url;
        if (mock_embedder)
            return std::make_shared<MockEmbedder>(embed_dim);
        if (url.empty())
            throw Error("no embedder configured: pass --mock-embedder or --embed-url");
        return std::make_shared<http::HttpEmbedder>(url, http::env_or_empty("RAVINE_EMBED_KEY"), embed_model,
                                                    embed_dim, retry());
    }
};

void print_progress(const std::string& line) { std::cerr << line << '\n'; }

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Agentic search evaluation: index, nuggets, runs, scoring and leaderboards"};
    app.set_config("--config", "", "Key-value config file; flags override it");
    app.require_subcommand(1);

    ProviderFlags providers;

    // build-index
    auto* build = app.add_subcommand("build-index", "Build a lexical or dense index over a corpus");
    std::string corpus_path, index_path, kind = "lexical";
    IndexConfig index_config;
    build->add_option("--corpus", corpus_path, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    build->add_option("--out", index_path, "Index file to write")->required();
    build->add_option("--kind", kind, "lexical or dense")->check(CLI::IsMember({"lexical", "dense"}));
    build->add_option("--k1", index_config.bm25_k1, "BM25 k1");
    build->add_option("--b", index_config.bm25_b, "BM25 b");
    providers.add_embedder(build);

    // nuggets
    auto* nug = app.add_subcommand("nuggets", "Build attributable nuggets from judged segments");
    std::string queries_path, qrels_path, nuggets_path;
    NuggetConfig nugget_config;
    nug->add_option("--corpus", corpus_path, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    nug->add_option("--queries", queries_path, "Queries JSONL")->required()->check(CLI::ExistingFile);
    nug->add_option("--qrels", qrels_path, "Qrels file")->required()->check(CLI::ExistingFile);
    nug->add_option("--out", nuggets_path, "Nugget JSONL to write")->required();
    nug->add_option("--threshold", nugget_config.relevance_threshold, "Minimum relevance grade");
    nug->add_option("--creator-max", nugget_config.creator_max, "Nuggets per extraction call")
        ->check(CLI::PositiveNumber);
    nug->add_option("--cap", nugget_config.cap, "Nuggets kept per query")->check(CLI::PositiveNumber);
    nug->add_option("--min-cluster-size", nugget_config.clustering.min_cluster_size, "Smallest nugget cluster")
        ->check(CLI::Range(2, 1000000));
    nug->add_option("--parallel", nugget_config.max_in_flight, "Concurrent judge calls")->check(CLI::PositiveNumber);
    providers.add_judge(nug);
    providers.add_embedder(nug);

    // run
    auto* run = app.add_subcommand("run", "Run the search agent on every query and record traces");
    std::string traces_dir, script_path, model_url, model_name = "model", context = "32k", run_id;
    RunPlan plan;
    std::int64_t clock_step = 0;
    double model_temperature = 0.0;
    run->add_option("--corpus", corpus_path, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    run->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
    run->add_option("--queries", queries_path, "Queries JSONL")->required()->check(CLI::ExistingFile);
    run->add_option("--out", traces_dir, "Trace directory")->required();
    run->add_option("--context", context, "32k, 128k or a token count");
    run->add_option("--max-turns", plan.run.max_turns, "Turn limit per episode")->check(CLI::PositiveNumber);
    run->add_option("--fetch-budget", plan.fetch_budget, "Fetch payload limit in characters");
    run->add_option("--parallel", plan.max_in_flight, "Concurrent episodes")->check(CLI::PositiveNumber);
    run->add_option("--run-id", run_id, "Label for the runs (defaults to the model name)");
    run->add_option("--script", script_path, "Scripted replies per qid (JSON)")->check(CLI::ExistingFile);
    run->add_option("--model-url", model_url, "Chat-completions endpoint for the agent model");
    run->add_option("--model", model_name, "Agent model name");
    run->add_option("--temperature", model_temperature, "Agent sampling temperature");
    run->add_option("--clock-step-ms", clock_step, "Use a deterministic clock advancing this much per reading");
    providers.add_embedder(run);

    // score
    auto* score = app.add_subcommand("score", "Score traces against nuggets and qrels");
    std::string metrics_path, basis = "nuggets", recall_mode = "fractional", completeness_mode = "nugget_max";
    ScoringOptions scoring;
    score->add_option("--corpus", corpus_path, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    score->add_option("--queries", queries_path, "Queries JSONL")->required()->check(CLI::ExistingFile);
    score->add_option("--qrels", qrels_path, "Qrels file")->required()->check(CLI::ExistingFile);
    score->add_option("--nuggets", nuggets_path, "Nugget JSONL")->required()->check(CLI::ExistingFile);
    score->add_option("--traces", traces_dir, "Trace directory")->required()->check(CLI::ExistingDirectory);
    score->add_option("--out", metrics_path, "Metrics JSONL to write")->required();
    score->add_option("--basis", basis, "Relevance basis for process metrics")
        ->check(CLI::IsMember({"qrels", "nuggets"}));
    score->add_option("--nugget-recall", recall_mode, "Per-nugget search recall rule")
        ->check(CLI::IsMember({"fractional", "any_hit"}));
    score->add_option("--completeness", completeness_mode, "Completeness aggregation")
        ->check(CLI::IsMember({"nugget_max", "block_mean"}));
    score->add_option("--nugget-cap-pages", scoring.report.caps.per_nugget, "Sources counted per nugget");
    score->add_option("--block-cap-pages", scoring.report.caps.per_block, "Gold pages per block");
    score->add_option("--input-price", scoring.cost.input_price_per_mtok, "USD per million prompt tokens");
    score->add_option("--output-price", scoring.cost.output_price_per_mtok, "USD per million completion tokens");
    score->add_option("--search-price", scoring.cost.search_call_price, "USD per search call");
    score->add_option("--fetch-price", scoring.cost.fetch_call_price, "USD per fetch call");
    score->add_option("--parallel", scoring.report.max_in_flight, "Concurrent judge calls")
        ->check(CLI::PositiveNumber);
    providers.add_judge(score);

    // report
    auto* report = app.add_subcommand("report", "Aggregate metrics into a Markdown and CSV leaderboard");
    std::string md_path, csv_path;
    report->add_option("--metrics", metrics_path, "Metrics JSONL")->required()->check(CLI::ExistingFile);
    report->add_option("--markdown", md_path, "Markdown output (stdout when omitted)");
    report->add_option("--csv", csv_path, "CSV output");

    // correlate
    auto* corr = app.add_subcommand("correlate", "Pearson r between completeness and search precision");
    std::string points_path, summary_path;
    std::size_t permutations = 10000;
    corr->add_option("--metrics", metrics_path, "Metrics JSONL")->required()->check(CLI::ExistingFile);
    corr->add_option("--out", summary_path, "Summary CSV (stdout when omitted)");
    corr->add_option("--points", points_path, "Scatter points CSV");
    corr->add_option("--permutations", permutations, "Permutations for the p-value")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) {
            auto corpus = load_corpus(corpus_path);
            index_config.kind = kind == "dense" ? IndexKind::dense : IndexKind::lexical;
            std::shared_ptr<const Embedder> embedder;
            if (index_config.kind == IndexKind::dense) {
                embedder = providers.embedder();
                index_config.embed_dim = embedder->dim();
            }
            auto index = build_index(corpus, index_config, embedder);
            save_index(*index, index_path);
            std::cerr << "progress stage=build-index docs=" << corpus.size() << " out=" << index_path << '\n';
        } else if (*nug) {
            auto corpus = load_corpus(corpus_path);
            auto queries = load_queries(queries_path);
            auto qrels = load_qrels(qrels_path);
            if (qrels.overwritten)
                std::cerr << "warning duplicate_qrels=" << qrels.overwritten << '\n';
            auto judge = providers.judge();
            auto embedder = providers.embedder();
            if (!providers.mock_judge)
                nugget_config.retry = providers.retry();
            auto all = generate_nuggets(corpus, queries, qrels.records, *judge, *embedder, nugget_config,
                                        print_progress);
            for (const auto& q : all) {
                const auto& d = q.build.diagnostics;
                for (const auto& docid : d.failed_batches)
                    std::cerr << "warning qid=" << q.qid << " failed_batch=" << docid << '\n';
                if (d.empty)
                    std::cerr << "warning qid=" << q.qid << " no_nuggets\n";
            }
            write_text_file(nuggets_path, nuggets_to_string(all));
        } else if (*run) {
            auto corpus = load_corpus(corpus_path);
            auto queries = load_queries(queries_path);
            std::shared_ptr<const Embedder> embedder;
            if (index_file_kind(index_path) == IndexKind::dense)
                embedder = providers.embedder();
            auto index = load_index_file(index_path, embedder);
            plan.run.max_context_tokens = context_preset(context);
            plan.config_label = context;
            plan.run_id = run_id.empty() ? model_name : run_id;
            if (clock_step > 0)
                plan.make_clock = [clock_step] { return stepping_clock(clock_step); };
            if (!script_path.empty()) {
                auto scripts = load_scripts(script_path);
                plan.run.retry = RetryPolicy::immediate();
                plan.make_client = [scripts](const Query& q) -> std::unique_ptr<ModelClient> {
                    auto it = scripts.find(q.qid);
                    if (it == scripts.end())
                        throw Error("script file has no replies for qid '" + q.qid + "'");
                    return std::make_unique<ScriptedClient>(ScriptedClient::from_json(it->second));
                };
            } else {
                std::string url = model_url.empty() ? http::env_or_empty("RAVINE_MODEL_URL") : model_url;
                if (url.empty())
                    throw Error("no agent model configured: pass --script or --model-url");
                std::string key = http::env_or_empty("RAVINE_MODEL_KEY");
                plan.make_client = [=](const Query&) -> std::unique_ptr<ModelClient> {
                    return std::make_unique<http::HttpModelClient>(url, key, model_name, model_temperature);
                };
            }
            auto traces = run_queries(corpus, *index, queries, plan, print_progress);
            write_traces(traces_dir, traces);
        } else if (*score) {
            auto corpus = load_corpus(corpus_path);
            auto queries = load_queries(queries_path);
            auto qrels = load_qrels(qrels_path);
            auto nuggets = load_nuggets(nuggets_path);
            auto traces = read_traces(traces_dir);
            auto rel = project_qrels_to_documents(qrels.records, corpus);
            for (const auto& q : queries)
                if (!nuggets.count(q.qid))
                    std::cerr << "warning qid=" << q.qid << " no_nuggets\n";
            auto judge = providers.judge();
            scoring.basis = basis == "qrels" ? BasisKind::qrels : BasisKind::nuggets;
            scoring.nugget_recall = recall_mode == "any_hit" ? NuggetRecallMode::any_hit : NuggetRecallMode::fractional;
            scoring.report.completeness_mode =
                completeness_mode == "block_mean" ? CompletenessMode::block_mean : CompletenessMode::nugget_max;
            scoring.nugget_page_cap = scoring.report.caps.per_nugget;
            scoring.cost.validate();
            if (!providers.mock_judge)
                scoring.report.retry = providers.retry();
            ScoreInputs in{&corpus, &queries, &nuggets, &rel};
            auto records = score_traces(traces, in, *judge, scoring, print_progress);
            write_text_file(metrics_path, metrics_to_string(records));
        } else if (*report) {
            auto rows = aggregate(load_metrics(metrics_path));
            auto md = leaderboard_markdown(rows);
            if (md_path.empty())
                std::cout << md;
            else
                write_text_file(md_path, md);
            if (!csv_path.empty())
                write_text_file(csv_path, leaderboard_csv(rows));
            std::cerr << "progress stage=report rows=" << rows.size() << '\n';
        } else if (*corr) {
            auto records = load_metrics(metrics_path);
            auto summary = correlation_summary(correlate_completeness_precision(records, permutations), permutations);
            if (summary_path.empty())
                std::cout << summary;
            else
                write_text_file(summary_path, summary);
            if (!points_path.empty())
                write_text_file(points_path, correlation_points_csv(records));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
