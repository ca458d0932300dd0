#include "ravine/agent.hpp"
#include "ravine/nuggets.hpp"
#include "ravine/prompts.hpp"
#include "ravine/providers.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <functional>
#include <mutex>
#include <regex>
#include <sstream>

using namespace ravine;
using Canned = std::map<std::string, std::string>;

namespace {

class FnJudge final : public Judge {
public:
    explicit FnJudge(std::function<std::string(const JudgeRequest&)> fn) : fn_(std::move(fn)) {}
    std::string complete(const JudgeRequest& r) const override
    {
        std::lock_guard lock(mu_);
        return fn_(r);
    }

private:
    std::function<std::string(const JudgeRequest&)> fn_;
    mutable std::mutex mu_;
};

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Corpus small_corpus()
{
    Corpus c;
    c.add({"d1", "https://example.org/d1", "Apple Pie", "", "apple pie recipe"},
          {{"s1", "", "apple pie", {}, {}}, {"s2", "", "recipe", {}, {}}});
    c.add({"d2", "https://example.org/d2", "Banana", "", "banana bread"}, {{"s3", "", "banana bread", {}, {}}});
    return c;
}

ModelReply search_reply(const std::string& query, int n = 3)
{
    return {"", {{"", "web_search", nlohmann::json{{"query", query}, {"num_results", n}}.dump()}}, 0, 0};
}

ModelReply text_reply(std::string text) { return {std::move(text), {}, 0, 0}; }

RunConfig quick_config()
{
    RunConfig cfg;
    cfg.clock = stepping_clock(10);
    cfg.retry = RetryPolicy::immediate(0);
    return cfg;
}

} // namespace

// ---------------------------------------------------------------- prompts

TEST(Prompts, ConstantsMatchFixtures)
{
    const std::string dir = std::string(RAVINE_FIXTURE_DIR) + "/constants/";
    EXPECT_EQ(prompts::kAgentSearch, slurp(dir + "agent_search.txt"));
    EXPECT_EQ(prompts::kNuggetCreation, slurp(dir + "nugget_creation.txt"));
    EXPECT_EQ(prompts::kNuggetMerging, slurp(dir + "nugget_merging.txt"));
    EXPECT_EQ(prompts::kNuggetScoring, slurp(dir + "nugget_scoring.txt"));
    EXPECT_EQ(prompts::kNuggetAssignment, slurp(dir + "nugget_assignment.txt"));
    EXPECT_EQ(nlohmann::json::parse(kSearchToolSchema), nlohmann::json::parse(slurp(dir + "web_search.json")));
    EXPECT_EQ(nlohmann::json::parse(kFetchToolSchema), nlohmann::json::parse(slurp(dir + "web_fetch.json")));
}

TEST(Prompts, FillIsSinglePass)
{
    EXPECT_EQ(prompts::fill("Q: {query}!", {{"query", "{query} and {x}"}}), "Q: {query} and {x}!");
    EXPECT_EQ(prompts::fill("json {\"a\": 1} {q}", {{"q", "z"}}), "json {\"a\": 1} z");
    EXPECT_THROW(prompts::fill("{missing}", {}), Error);
}

// ---------------------------------------------------------------- providers

TEST(Providers, ParseListLiteral)
{
    EXPECT_EQ(parse_list_literal("```python\n[\"x\", \"y\"]\n```"), (std::vector<std::string>{"x", "y"}));
    EXPECT_TRUE(parse_list_literal("[]").empty());
    EXPECT_EQ(parse_list_literal("Sure: ['single', \"a \\\"q\\\"\"] done"), (std::vector<std::string>{"single", "a \"q\""}));
    EXPECT_THROW(parse_list_literal("sure! here you go"), ParseError);
    EXPECT_THROW(parse_list_literal("[1, 2]"), ParseError);
}

TEST(Providers, ListLiteralRoundTrip)
{
    const std::vector<std::string> items{"plain", "with \"quotes\"", "back\\slash", "new\nline", ""};
    EXPECT_EQ(parse_list_literal(render_list_literal(items)), items);
}

TEST(Providers, CannedAnswerWins)
{
    MockJudge judge(Canned{{"p", "[\"a\"]"}});
    EXPECT_EQ(judge_complete(judge, {"p"}, RetryPolicy::immediate()), "[\"a\"]");
    EXPECT_EQ(judge.calls(), 1u);
    EXPECT_THROW(judge_complete(judge, {"unrecognised prompt"}, RetryPolicy::immediate()), ProviderError);
}

TEST(Providers, TransportFailuresExhaustRetries)
{
    std::atomic<int> calls{0};
    FnJudge judge([&](const JudgeRequest&) -> std::string {
        ++calls;
        throw TransportError("503");
    });
    std::vector<std::chrono::milliseconds> waits;
    auto policy = RetryPolicy::immediate(2);
    policy.sleep = [&](std::chrono::milliseconds d) { waits.push_back(d); };
    try {
        judge_complete(judge, {"x"}, policy);
        FAIL();
    } catch (const ProviderError& e) {
        EXPECT_EQ(e.attempts(), 3);
    }
    EXPECT_EQ(calls.load(), 3);
    EXPECT_EQ(waits, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000),
                                                             std::chrono::milliseconds(2000)}));
}

TEST(Providers, TransientFailureRecovers)
{
    int calls = 0;
    FnJudge judge([&](const JudgeRequest&) -> std::string {
        if (++calls < 3)
            throw TransportError("timeout");
        return "ok";
    });
    EXPECT_EQ(judge_complete(judge, {"x"}, RetryPolicy::immediate(3)), "ok");
    EXPECT_EQ(calls, 3);
}

TEST(Providers, TemperaturePinnedToZero)
{
    double seen = -1;
    FnJudge judge([&](const JudgeRequest& r) {
        seen = r.temperature;
        return std::string("[]");
    });
    JudgeRequest req{"x"};
    req.temperature = 0.9;
    judge_complete(judge, req, RetryPolicy::immediate());
    EXPECT_EQ(seen, 0.0);
}

TEST(Providers, MockJudgeRules)
{
    EXPECT_EQ(mock::support_label("red apple", "an apple that is red"), "support");
    EXPECT_EQ(mock::support_label("red apple pie", "a red apple"), "partial_support");
    EXPECT_EQ(mock::support_label("red apple pie crust", "a crust"), "not_support");
    EXPECT_EQ(mock::importance_label("apples grow in orchards", "where do apples grow"), "vital");
    EXPECT_EQ(mock::importance_label("bananas are yellow", "where do apples grow"), "okay");
    EXPECT_EQ(mock::split_sentences("One. Two!\nThree 3.5 four"),
              (std::vector<std::string>{"One", "Two", "Three 3.5 four"}));
}

TEST(Providers, ParallelMapKeepsOrder)
{
    auto out = parallel_map(20, 4, [](std::size_t i) { return i * i; });
    for (std::size_t i = 0; i < out.size(); ++i)
        EXPECT_EQ(out[i], i * i);
    EXPECT_THROW(parallel_map(5, 2, [](std::size_t i) -> int {
                     if (i == 3)
                         throw ParseError("bad", "");
                     return 0;
                 }),
                 ParseError);
}

// ---------------------------------------------------------------- agent

TEST(Agent, ExtractReport)
{
    EXPECT_EQ(extract_report("<report>X</report>"), "X");
    EXPECT_EQ(extract_report("draft <report>A</report> final <report>B</report>"), "B");
    EXPECT_EQ(extract_report("no tags here"), std::nullopt);
    EXPECT_EQ(extract_report("<report>open only"), std::nullopt);
    EXPECT_EQ(extract_report("<report>\n  padded \n</report>"), "padded");
}

TEST(Agent, ContextPresets)
{
    EXPECT_EQ(context_preset("32k"), 32768);
    EXPECT_EQ(context_preset("128k"), 131072);
    EXPECT_EQ(context_preset("5000"), 5000);
    EXPECT_THROW(context_preset("huge"), Error);
}

TEST(Agent, SearchThenReportCompletes)
{
    auto corpus = small_corpus();
    auto index = LexicalIndex::build(corpus);
    ToolBox tools(corpus, index);
    ScriptedClient client({{search_reply("x")}, {text_reply("done <report>Apple pie.</report>")}});
    auto trace = run_episode(client, {"q1", "apple?"}, tools, quick_config());
    EXPECT_TRUE(trace.completed);
    EXPECT_EQ(trace.turns.size(), 2u);
    EXPECT_EQ(trace.report_text, "Apple pie.");
    EXPECT_EQ(trace.failure_reason, FailureReason::none);
    ASSERT_EQ(trace.turns[0].tool_results.size(), 1u);
    EXPECT_TRUE(trace.turns[0].tool_results[0].ok);
    EXPECT_EQ(trace.turns[0].tool_calls[0].id, "call_1_0");
    // One clock reading per turn boundary plus the episode start: (2T + 1) steps.
    EXPECT_EQ(trace.total_wall_ms, 50);
}

TEST(Agent, TurnLimit)
{
    auto corpus = small_corpus();
    auto index = LexicalIndex::build(corpus);
    ToolBox tools(corpus, index);
    ScriptedClient client({{search_reply("apple")}}, true);
    auto cfg = quick_config();
    cfg.max_turns = 5;
    cfg.max_context_tokens = 1 << 30;
    auto trace = run_episode(client, {"q1", "apple?"}, tools, cfg);
    EXPECT_FALSE(trace.completed);
    EXPECT_EQ(trace.failure_reason, FailureReason::turn_limit);
    EXPECT_EQ(trace.turns.size(), 5u);
}

TEST(Agent, ContextExceededOnSecondGeneration)
{
    auto corpus = small_corpus();
    auto index = LexicalIndex::build(corpus);
    ToolBox tools(corpus, index);
    ScriptedClient::Step first{search_reply("apple"), false, false};
    first.reply.prompt_tokens = 900;
    first.reply.completion_tokens = 50;
    ScriptedClient::Step second{search_reply("pie"), false, false};
    second.reply.prompt_tokens = 1000;
    second.reply.completion_tokens = 60;
    ScriptedClient client({first, second});
    auto cfg = quick_config();
    cfg.max_context_tokens = 2000;
    auto trace = run_episode(client, {"q1", "apple?"}, tools, cfg);
    EXPECT_EQ(trace.failure_reason, FailureReason::context_exceeded);
    ASSERT_EQ(trace.turns.size(), 2u);
    EXPECT_TRUE(trace.turns[1].tool_calls.empty());
    EXPECT_TRUE(trace.turns[1].tool_results.empty());
}

TEST(Agent, MissingTagsAndTransportFailure)
{
    auto corpus = small_corpus();
    auto index = LexicalIndex::build(corpus);
    ToolBox tools(corpus, index);
    ScriptedClient untagged({{text_reply("just prose")}});
    EXPECT_EQ(run_episode(untagged, {"q1", "x"}, tools, quick_config()).failure_reason, FailureReason::no_report_tags);
    ScriptedClient empty({});
    auto trace = run_episode(empty, {"q1", "x"}, tools, quick_config());
    EXPECT_EQ(trace.failure_reason, FailureReason::transport_error);
    EXPECT_TRUE(trace.turns.empty());
}

TEST(Agent, ScriptedClientMetersTokens)
{
    auto client = ScriptedClient::from_json(nlohmann::json::parse(
        R"([{"text": "a b c", "tool_calls": [{"name": "web_search", "arguments": {"query": "x", "num_results": 2}}]},
            {"text": "done", "prompt_tokens": 7, "completion_tokens": 3}])"));
    nlohmann::json messages = nlohmann::json::array({{{"role", "user"}, {"content", "one two three four"}}});
    auto r1 = client.chat(messages, {});
    EXPECT_EQ(r1.prompt_tokens, count_message_tokens(messages));
    EXPECT_EQ(r1.completion_tokens, 3 + count_whitespace_tokens(r1.tool_calls[0].arguments));
    auto r2 = client.chat(messages, {});
    EXPECT_EQ(r2.prompt_tokens, 7);
    EXPECT_EQ(r2.completion_tokens, 3);
    EXPECT_THROW(client.chat(messages, {}), ProviderError);
}

namespace {

RunTrace priced_trace(int searches, int fetches, int failed_searches = 0)
{
    RunTrace t;
    Turn turn;
    turn.prompt_tokens = 10000;
    turn.completion_tokens = 2000;
    auto add = [&](const char* name, bool ok) {
        turn.tool_calls.push_back(ToolCall::make("c", name, "{}", 1));
        turn.tool_results.push_back(ok ? ToolResult{true, "", ToolErrorKind::none, {}}
                                       : ToolResult::failure(ToolErrorKind::bad_params, "bad"));
    };
    for (int i = 0; i < searches; ++i)
        add("web_search", true);
    for (int i = 0; i < failed_searches; ++i)
        add("web_search", false);
    for (int i = 0; i < fetches; ++i)
        add("web_fetch", true);
    t.turns.push_back(turn);
    t.total_wall_ms = 1500;
    return t;
}

} // namespace

TEST(Agent, AccountRunWorkedExample)
{
    CostModel cost{0.08, 0.20, 0.01, 0.0};
    auto a = account_run(priced_trace(3, 0), cost);
    EXPECT_NEAR(a.cost_usd, 0.0312, 1e-12);
    EXPECT_EQ(a.turns, 1);
    EXPECT_EQ(a.search_calls, 3);
    EXPECT_DOUBLE_EQ(a.latency_s, 1.5);
    EXPECT_NEAR(account_run(priced_trace(3, 4), cost).cost_usd, 0.0312, 1e-12);
    EXPECT_NEAR(account_run(priced_trace(3, 0, 2), cost).cost_usd, 0.0312, 1e-12);

    auto empty = account_run(RunTrace{}, cost);
    EXPECT_EQ(empty.latency_s, 0.0);
    EXPECT_EQ(empty.cost_usd, 0.0);
    EXPECT_EQ(empty.turns, 0);
}

TEST(Agent, TraceRoundTrip)
{
    auto corpus = small_corpus();
    auto index = LexicalIndex::build(corpus);
    ToolBox tools(corpus, index);
    ScriptedClient client({{search_reply("apple")},
                           {{"", {{"f1", "web_fetch", R"({"url":"https://example.org/d1"})"}}, 0, 0}},
                           {text_reply("<report>Apple ([A](https://example.org/d1)).</report>")}});
    auto trace = run_episode(client, {"q1", "apple?"}, tools, quick_config());
    trace.run_id = "r1";
    trace.config = "32k";
    std::istringstream in(trace_to_string(trace));
    auto back = read_trace(in);
    EXPECT_EQ(trace_to_string(back), trace_to_string(trace));
    EXPECT_EQ(back.config, "32k");
    EXPECT_EQ(back.turns[1].tool_results[0].docids, (std::vector<std::string>{"d1"}));
    EXPECT_EQ(back.turns[1].validity[0], trace.turns[1].validity[0]);

    std::istringstream truncated(trace_to_string(trace).substr(0, 40));
    EXPECT_THROW(read_trace(truncated), Error);
}

// ---------------------------------------------------------------- nuggets

TEST(Nuggets, BuildBatchesGroupsByDocument)
{
    auto c = small_corpus();
    auto batches = build_batches("q1", {{"q1", "s3", 1}, {"q1", "s2", 2}, {"q1", "s1", 1}, {"q2", "s1", 2}}, c);
    ASSERT_EQ(batches.size(), 2u);
    EXPECT_EQ(batches[0].docid, "d1");
    ASSERT_EQ(batches[0].segments.size(), 2u);
    EXPECT_EQ(batches[0].segments[0]->segid, "s1");
    EXPECT_EQ(batches[0].segments[1]->segid, "s2");
    EXPECT_EQ(batches[1].docid, "d2");
    EXPECT_TRUE(build_batches("q9", {{"q1", "s1", 1}}, c).empty());
    EXPECT_TRUE(build_batches("q1", {{"q1", "s1", 0}}, c).empty());
}

TEST(Nuggets, ExtractBatch)
{
    auto c = small_corpus();
    auto batch = build_batches("q1", {{"q1", "s1", 1}}, c).front();
    const auto prompt = creation_prompt("apple?", batch, 3);

    MockJudge two(Canned{{prompt, R"(["fact one", "fact two"])"}});
    auto raw = extract_batch("q1", "apple?", batch, two, 3);
    ASSERT_EQ(raw.size(), 2u);
    EXPECT_EQ(raw[0].source_docid, "d1");
    EXPECT_EQ(raw[1].text, "fact two");

    MockJudge none(Canned{{prompt, "[]"}});
    EXPECT_TRUE(extract_batch("q1", "apple?", batch, none, 3).empty());

    MockJudge many(Canned{{prompt, R"(["a1", "a2", "a3", "a4", "a5"])"}});
    auto capped = extract_batch("q1", "apple?", batch, many, 3);
    ASSERT_EQ(capped.size(), 3u);
    EXPECT_EQ(capped[2].text, "a3");

    int calls = 0;
    FnJudge flaky([&](const JudgeRequest&) { return ++calls == 1 ? std::string("oops") : std::string("[\"ok\"]"); });
    EXPECT_EQ(extract_batch("q1", "apple?", batch, flaky, 3).size(), 1u);
    MockJudge broken(Canned{{prompt, "no list"}});
    EXPECT_THROW(extract_batch("q1", "apple?", batch, broken, 3), ParseError);
}

TEST(Nuggets, UnionDuplicates)
{
    auto merged = union_duplicates({{"q1", "same", "d2"}, {"q1", "other", "d1"}, {"q1", "same", "d1"}});
    ASSERT_EQ(merged.size(), 2u);
    EXPECT_EQ(merged[0].text, "same");
    EXPECT_EQ(merged[0].sources, (std::set<std::string>{"d1", "d2"}));
}

TEST(Nuggets, ClusterDegenerateCases)
{
    MockEmbedder e(1024);
    std::vector<Nugget> same(3, Nugget{"q1", "identical text", {"d1"}, NuggetLabel::unlabeled});
    auto r = cluster_nuggets(same, e, {});
    ASSERT_EQ(r.clusters.size(), 1u);
    EXPECT_EQ(r.clusters[0].size(), 3u);

    std::vector<Nugget> apart{{"q1", "alpha", {"d1"}, {}}, {"q1", "omega", {"d2"}, {}}};
    ASSERT_NE(e.axis_of("alpha"), e.axis_of("omega"));
    EXPECT_EQ(cluster_nuggets(apart, e, {}).outliers, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(cluster_nuggets({apart[0]}, e, {}).outliers, (std::vector<std::size_t>{0}));
}

TEST(Nuggets, MergeCluster)
{
    std::vector<Nugget> members{{"q1", "n zero", {"d1"}, {}}, {"q1", "n one", {"d2"}, {}}};
    const auto prompt = merge_prompt("q?", members);

    MockJudge both(Canned{{prompt, "combined fact [1, 2]"}});
    auto merged = merge_cluster("q?", members, both);
    ASSERT_EQ(merged.size(), 1u);
    EXPECT_EQ(merged[0].text, "combined fact");
    EXPECT_EQ(merged[0].sources, (std::set<std::string>{"d1", "d2"}));

    MockJudge no_need(Canned{{prompt, "[NO NEED]"}});
    EXPECT_EQ(merge_cluster("q?", members, no_need), members);

    MockJudge partial(Canned{{prompt, "- only the first [1]"}});
    auto kept = merge_cluster("q?", members, partial);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].sources, (std::set<std::string>{"d1"}));
    EXPECT_EQ(kept[1], members[1]);

    MockJudge out_of_range(Canned{{prompt, "bad [3]"}});
    EXPECT_THROW(merge_cluster("q?", members, out_of_range), ParseError);
}

TEST(Nuggets, FinalizeKeepsVitalFirst)
{
    // Labels are encoded in the texts; 50 vital and 20 okay, interleaved.
    std::vector<Nugget> nuggets;
    int v = 0, o = 0;
    for (int i = 0; i < 70; ++i) {
        bool vital = (i % 7 != 3 && v < 50) || o >= 20;
        nuggets.push_back({"q1", vital ? "zzvital" + std::to_string(v++) : "zzokay" + std::to_string(o++), {"d1"}, {}});
    }
    FnJudge judge([](const JudgeRequest& r) {
        static const std::regex re("zz(vital|okay)\\d+");
        std::vector<std::string> labels;
        auto list = r.prompt.substr(r.prompt.rfind("Nugget List:"));
        for (auto it = std::sregex_iterator(list.begin(), list.end(), re); it != std::sregex_iterator(); ++it)
            labels.push_back((*it)[1].str());
        return render_list_literal(labels);
    });
    auto out = finalize_nuggets("q?", nuggets, judge, 60);
    ASSERT_EQ(out.size(), 60u);
    for (int i = 0; i < 50; ++i) {
        EXPECT_EQ(out[i].label, NuggetLabel::vital);
        EXPECT_EQ(out[i].text, "zzvital" + std::to_string(i));
    }
    for (int i = 0; i < 10; ++i) {
        EXPECT_EQ(out[50 + i].label, NuggetLabel::okay);
        EXPECT_EQ(out[50 + i].text, "zzokay" + std::to_string(i));
    }

    std::vector<Nugget> five(nuggets.begin(), nuggets.begin() + 5);
    auto small = finalize_nuggets("q?", five, judge);
    ASSERT_EQ(small.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_EQ(small[i].text, five[i].text);
    EXPECT_EQ(kDefaultNuggetCap, 60u);
}

TEST(Nuggets, LabelAnswerOfWrongLengthRetriedThenFails)
{
    std::vector<Nugget> nuggets{{"q1", "a", {}, {}}, {"q1", "b", {}, {}}};
    int calls = 0;
    FnJudge short_answer([&](const JudgeRequest&) {
        ++calls;
        return std::string("[\"vital\"]");
    });
    EXPECT_THROW(label_nuggets("q?", nuggets, short_answer), ParseError);
    EXPECT_EQ(calls, 2);
}

TEST(Nuggets, BuildWithMockJudge)
{
    Corpus c;
    c.add({"d1", "u1", "t", "", "x"}, {{"s1", "", "Apples grow in cold orchards. Tiny.", {}, {}}});
    c.add({"d2", "u2", "t", "", "x"}, {{"s2", "", "Apples grow in cold orchards. Bananas need heat to ripen.", {}, {}}});
    MockJudge judge;
    MockEmbedder embedder(1024);
    auto build = build_nuggets({"q1", "where do apples grow"}, {{"q1", "s1", 1}, {"q1", "s2", 1}}, c, judge, embedder);
    EXPECT_EQ(build.diagnostics.batches, 2u);
    ASSERT_FALSE(build.nuggets.empty());
    EXPECT_EQ(build.nuggets[0].text, "Apples grow in cold orchards");
    EXPECT_EQ(build.nuggets[0].sources, (std::set<std::string>{"d1", "d2"}));
    EXPECT_EQ(build.nuggets[0].label, NuggetLabel::vital);

    std::ostringstream out;
    write_nuggets(out, build.nuggets);
    std::istringstream in(out.str());
    EXPECT_EQ(read_nuggets(in).at("q1"), build.nuggets);
}
