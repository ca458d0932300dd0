#pragma once

#include "ravine/error.hpp"
#include "ravine/prompts.hpp"
#include "ravine/providers.hpp"
#include "ravine/text.hpp"
#include "ravine/tools.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ravine {

inline constexpr int kContext32k = 32768;
inline constexpr int kContext128k = 131072;

/// Maps "32k"/"128k" (or a plain token count) to a context budget.
inline int context_preset(std::string_view name)
{
    if (name == "32k")
        return kContext32k;
    if (name == "128k")
        return kContext128k;
    try {
        std::size_t used = 0;
        int v = std::stoi(std::string(name), &used);
        if (used == name.size() && v > 0)
            return v;
    } catch (const std::exception&) {
    }
    throw Error("unknown context preset '" + std::string(name) + "' (expected 32k, 128k or a token count)");
}

struct CostModel {
    double input_price_per_mtok = 0.0;
    double output_price_per_mtok = 0.0;
    double search_call_price = 0.01;
    double fetch_call_price = 0.0;

    void validate() const
    {
        if (input_price_per_mtok < 0 || output_price_per_mtok < 0 || search_call_price < 0 || fetch_call_price < 0)
            throw Error("cost model prices must be >= 0");
    }
};

/// Monotonic milliseconds; injectable so traces can be made deterministic.
using Clock = std::function<std::int64_t()>;

inline Clock steady_clock_ms()
{
    return [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };
}

/// Advances by `step` on every reading.
inline Clock stepping_clock(std::int64_t step)
{
    auto now = std::make_shared<std::int64_t>(0);
    return [now, step] { return *now += step; };
}

struct RunConfig {
    int max_context_tokens = kContext32k;
    int max_turns = 64;
    std::string system_prompt{prompts::kAgentSearch}; // {question} is substituted
    CostModel cost_model;
    Clock clock = steady_clock_ms();
    RetryPolicy retry;
};

struct Turn {
    int index = 1;
    std::string model_text;
    std::vector<ToolCall> tool_calls;
    std::vector<ValidityRecord> validity; // aligned with tool_calls
    std::vector<ToolResult> tool_results; // aligned with tool_calls
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::int64_t wall_ms = 0;
};

enum class FailureReason { none, no_report_tags, context_exceeded, turn_limit, transport_error };

inline std::string_view to_string(FailureReason r)
{
    switch (r) {
    case FailureReason::none: return "none";
    case FailureReason::no_report_tags: return "no_report_tags";
    case FailureReason::context_exceeded: return "context_exceeded";
    case FailureReason::turn_limit: return "turn_limit";
    case FailureReason::transport_error: return "transport_error";
    }
    return "none";
}

inline FailureReason failure_reason_from_string(std::string_view s)
{
    for (auto r : {FailureReason::none, FailureReason::no_report_tags, FailureReason::context_exceeded,
                   FailureReason::turn_limit, FailureReason::transport_error})
        if (to_string(r) == s)
            return r;
    throw FormatError("unknown failure reason '" + std::string(s) + "'");
}

struct RunTrace {
    std::string qid;
    std::string run_id;
    std::string config; // e.g. the context preset the run used
    std::vector<Turn> turns;
    bool completed = false;
    std::optional<std::string> report_text;
    std::int64_t total_wall_ms = 0;
    FailureReason failure_reason = FailureReason::none;
};

// ---------------------------------------------------------------------------
// Model clients

struct ModelToolCall {
    std::string id;
    std::string name;
    std::string arguments; // JSON-encoded string
};

struct ModelReply {
    std::string text;
    std::vector<ModelToolCall> tool_calls;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

/// Chat-with-tools model. `messages` follows the chat-completions layout.
/// Clients report their own token usage. TransportError is retried.
class ModelClient {
public:
    virtual ~ModelClient() = default;
    virtual ModelReply chat(const nlohmann::json& messages, const nlohmann::ordered_json& tools) = 0;
};

/// Whitespace token count; the mock tokenizer used by scripted clients.
inline std::int64_t count_whitespace_tokens(std::string_view s)
{
    std::int64_t n = 0;
    bool in = false;
    for (char c : s) {
        bool sp = text::is_space(c);
        if (!sp && !in)
            ++n;
        in = !sp;
    }
    return n;
}

inline std::int64_t count_message_tokens(const nlohmann::json& messages)
{
    std::int64_t n = 0;
    for (const auto& m : messages) {
        if (auto c = m.find("content"); c != m.end() && c->is_string())
            n += count_whitespace_tokens(c->get_ref<const std::string&>());
        if (auto calls = m.find("tool_calls"); calls != m.end())
            for (const auto& call : *calls)
                n += count_whitespace_tokens(call["function"]["arguments"].get<std::string>());
    }
    return n;
}

/// Plays back a fixed list of replies. Replies without token counts are
/// metered with the whitespace tokenizer over the request and the reply.
class ScriptedClient final : public ModelClient {
public:
    struct Step {
        ModelReply reply;
        bool meter_prompt = true;     // derive prompt_tokens from the request
        bool meter_completion = true; // derive completion_tokens from the reply
    };

    explicit ScriptedClient(std::vector<Step> steps, bool repeat_last = false)
        : steps_(std::move(steps)), repeat_last_(repeat_last)
    {
    }

    /// Parses [{text, tool_calls:[{name, arguments}], prompt_tokens?, completion_tokens?}].
    static ScriptedClient from_json(const nlohmann::json& script, bool repeat_last = false)
    {
        if (!script.is_array())
            throw FormatError("agent script must be an array of replies");
        std::vector<Step> steps;
        for (const auto& s : script) {
            Step step;
            step.reply.text = s.value("text", std::string());
            if (auto calls = s.find("tool_calls"); calls != s.end()) {
                for (const auto& c : *calls) {
                    ModelToolCall mc;
                    mc.id = c.value("id", std::string());
                    mc.name = c.value("name", std::string());
                    const auto& args = c.contains("arguments") ? c["arguments"] : nlohmann::json::object();
                    mc.arguments = args.is_string() ? args.get<std::string>() : args.dump();
                    step.reply.tool_calls.push_back(std::move(mc));
                }
            }
            if (s.contains("prompt_tokens")) {
                step.reply.prompt_tokens = s["prompt_tokens"].get<std::int64_t>();
                step.meter_prompt = false;
            }
            if (s.contains("completion_tokens")) {
                step.reply.completion_tokens = s["completion_tokens"].get<std::int64_t>();
                step.meter_completion = false;
            }
            steps.push_back(std::move(step));
        }
        return ScriptedClient(std::move(steps), repeat_last);
    }

    ModelReply chat(const nlohmann::json& messages, const nlohmann::ordered_json&) override
    {
        if (steps_.empty() || (next_ >= steps_.size() && !repeat_last_))
            throw ProviderError("scripted client has no reply left");
        const Step& step = steps_[next_ < steps_.size() ? next_ : steps_.size() - 1];
        ++next_;
        ModelReply reply = step.reply;
        if (step.meter_prompt)
            reply.prompt_tokens = count_message_tokens(messages);
        if (step.meter_completion) {
            reply.completion_tokens = count_whitespace_tokens(reply.text);
            for (const auto& c : reply.tool_calls)
                reply.completion_tokens += count_whitespace_tokens(c.arguments);
        }
        return reply;
    }

private:
    std::vector<Step> steps_;
    std::size_t next_ = 0;
    bool repeat_last_;
};

// ---------------------------------------------------------------------------

/// Content of the last complete <report>...</report> pair, trimmed.
inline std::optional<std::string> extract_report(std::string_view final_text)
{
    constexpr std::string_view open = "<report>";
    constexpr std::string_view close = "</report>";
    auto end = final_text.rfind(close);
    if (end == std::string_view::npos)
        return std::nullopt;
    auto start = final_text.rfind(open, end);
    if (start == std::string_view::npos)
        return std::nullopt;
    start += open.size();
    return std::string(text::trim(final_text.substr(start, end - start)));
}

inline nlohmann::json assistant_message(const ModelReply& reply, const std::vector<ToolCall>& calls)
{
    nlohmann::json msg = {{"role", "assistant"}, {"content", reply.text}};
    if (!calls.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto& c : calls)
            arr.push_back({{"id", c.id},
                           {"type", "function"},
                           {"function", {{"name", c.name}, {"arguments", c.arguments_json}}}});
        msg["tool_calls"] = std::move(arr);
    }
    return msg;
}

/// Drives one episode: generate, execute every tool call, feed results back,
/// until the model answers without tools or a budget is hit.
inline RunTrace run_episode(ModelClient& client, const Query& query, const ToolBox& tools, const RunConfig& config)
{
    if (config.max_context_tokens <= 0)
        throw Error("max_context_tokens must be > 0");
    if (config.max_turns <= 0)
        throw Error("max_turns must be > 0");
    RunTrace trace;
    trace.qid = query.qid;
    const auto schemas = tool_schemas();
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back(
        {{"role", "system"}, {"content", prompts::fill(config.system_prompt, {{"question", query.text}})}});
    messages.push_back({{"role", "user"}, {"content", query.text}});

    std::vector<ToolCall> history;
    std::int64_t used_tokens = 0;
    const auto episode_start = config.clock();

    for (int index = 1;; ++index) {
        const auto turn_start = config.clock();
        ModelReply reply;
        try {
            reply = config.retry.run([&] { return client.chat(messages, schemas); });
        } catch (const ProviderError&) {
            trace.failure_reason = FailureReason::transport_error;
            break;
        }
        Turn turn;
        turn.index = index;
        turn.model_text = reply.text;
        turn.prompt_tokens = std::max<std::int64_t>(0, reply.prompt_tokens);
        turn.completion_tokens = std::max<std::int64_t>(0, reply.completion_tokens);
        used_tokens += turn.prompt_tokens + turn.completion_tokens;

        for (std::size_t i = 0; i < reply.tool_calls.size(); ++i) {
            const auto& mc = reply.tool_calls[i];
            std::string id = mc.id.empty() ? "call_" + std::to_string(index) + "_" + std::to_string(i) : mc.id;
            turn.tool_calls.push_back(ToolCall::make(std::move(id), mc.name, mc.arguments, index));
        }

        if (used_tokens > config.max_context_tokens) {
            // The overflowing generation is recorded but its calls are not run.
            turn.tool_calls.clear();
            turn.wall_ms = config.clock() - turn_start;
            trace.turns.push_back(std::move(turn));
            trace.failure_reason = FailureReason::context_exceeded;
            break;
        }

        if (turn.tool_calls.empty()) {
            turn.wall_ms = config.clock() - turn_start;
            trace.report_text = extract_report(turn.model_text);
            trace.turns.push_back(std::move(turn));
            trace.completed = trace.report_text.has_value();
            trace.failure_reason = trace.completed ? FailureReason::none : FailureReason::no_report_tags;
            break;
        }

        messages.push_back(assistant_message(reply, turn.tool_calls));
        for (const auto& call : turn.tool_calls) {
            turn.validity.push_back(validate_call(call, history, &tools.corpus()));
            turn.tool_results.push_back(tools.execute(call));
            history.push_back(call);
            messages.push_back(
                {{"role", "tool"}, {"tool_call_id", call.id}, {"content", turn.tool_results.back().payload}});
        }
        turn.wall_ms = config.clock() - turn_start;
        trace.turns.push_back(std::move(turn));

        if (index >= config.max_turns) {
            trace.failure_reason = FailureReason::turn_limit;
            break;
        }
    }
    trace.total_wall_ms = config.clock() - episode_start;
    return trace;
}

struct RunAccount {
    double latency_s = 0.0;
    double cost_usd = 0.0;
    int turns = 0;
    int search_calls = 0;
    int fetch_calls = 0;
};

/// Latency, monetary cost and turn count. Tool prices apply to calls that
/// executed successfully.
inline RunAccount account_run(const RunTrace& trace, const CostModel& cost)
{
    RunAccount a;
    a.latency_s = static_cast<double>(trace.total_wall_ms) / 1000.0;
    a.turns = static_cast<int>(trace.turns.size());
    double prompt = 0.0;
    double completion = 0.0;
    for (const auto& t : trace.turns) {
        prompt += static_cast<double>(t.prompt_tokens);
        completion += static_cast<double>(t.completion_tokens);
        for (std::size_t i = 0; i < t.tool_calls.size() && i < t.tool_results.size(); ++i) {
            if (!t.tool_results[i].ok)
                continue;
            if (t.tool_calls[i].name == kSearchToolName)
                ++a.search_calls;
            else if (t.tool_calls[i].name == kFetchToolName)
                ++a.fetch_calls;
        }
    }
    a.cost_usd = prompt * cost.input_price_per_mtok / 1e6 + completion * cost.output_price_per_mtok / 1e6
                 + a.search_calls * cost.search_call_price + a.fetch_calls * cost.fetch_call_price;
    return a;
}

// ---------------------------------------------------------------------------
// Trace files: one JSON object per turn, then a summary object.

inline nlohmann::ordered_json turn_to_json(const Turn& t)
{
    nlohmann::ordered_json j;
    j["record"] = "turn";
    j["index"] = t.index;
    j["model_text"] = t.model_text;
    auto calls = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < t.tool_calls.size(); ++i) {
        const auto& c = t.tool_calls[i];
        nlohmann::ordered_json cj;
        cj["id"] = c.id;
        cj["name"] = c.name;
        cj["arguments"] = c.arguments_json;
        cj["turn_index"] = c.turn_index;
        if (i < t.validity.size()) {
            const auto& v = t.validity[i];
            cj["validity"] = {{"undefined_tool", v.undefined_tool},
                              {"param_violation", v.param_violation},
                              {"fetch_before_search", v.fetch_before_search},
                              {"url_error", v.url_error}};
        }
        calls.push_back(std::move(cj));
    }
    j["tool_calls"] = std::move(calls);
    auto results = nlohmann::ordered_json::array();
    for (const auto& r : t.tool_results) {
        nlohmann::ordered_json rj;
        rj["ok"] = r.ok;
        rj["payload"] = r.payload;
        rj["error_kind"] = to_string(r.error_kind);
        rj["docids"] = r.docids;
        results.push_back(std::move(rj));
    }
    j["tool_results"] = std::move(results);
    j["prompt_tokens"] = t.prompt_tokens;
    j["completion_tokens"] = t.completion_tokens;
    j["wall_ms"] = t.wall_ms;
    return j;
}

inline void write_trace(std::ostream& out, const RunTrace& trace)
{
    for (const auto& t : trace.turns)
        out << turn_to_json(t).dump() << '\n';
    nlohmann::ordered_json s;
    s["record"] = "summary";
    s["qid"] = trace.qid;
    s["run_id"] = trace.run_id;
    s["config"] = trace.config;
    s["turns"] = trace.turns.size();
    s["completed"] = trace.completed;
    s["report_text"] = trace.report_text ? nlohmann::ordered_json(*trace.report_text) : nlohmann::ordered_json();
    s["total_wall_ms"] = trace.total_wall_ms;
    s["failure_reason"] = to_string(trace.failure_reason);
    out << s.dump() << '\n';
}

inline std::string trace_to_string(const RunTrace& trace)
{
    std::ostringstream out;
    write_trace(out, trace);
    return out.str();
}

inline RunTrace read_trace(std::istream& in)
{
    RunTrace trace;
    bool summary = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        if (summary)
            throw FormatError("trace line " + std::to_string(line_no) + ": record after summary");
        auto j = detail::parse_json_line(line, line_no);
        auto kind = j.value("record", std::string());
        try {
            if (kind == "turn") {
                Turn t;
                t.index = j.at("index").get<int>();
                t.model_text = j.at("model_text").get<std::string>();
                for (const auto& c : j.at("tool_calls")) {
                    t.tool_calls.push_back(ToolCall::make(c.at("id").get<std::string>(), c.at("name").get<std::string>(),
                                                          c.at("arguments").get<std::string>(),
                                                          c.at("turn_index").get<int>()));
                    if (auto v = c.find("validity"); v != c.end())
                        t.validity.push_back({v->at("undefined_tool").get<bool>(), v->at("param_violation").get<bool>(),
                                              v->at("fetch_before_search").get<bool>(), v->at("url_error").get<bool>()});
                }
                for (const auto& r : j.at("tool_results"))
                    t.tool_results.push_back({r.at("ok").get<bool>(), r.at("payload").get<std::string>(),
                                              tool_error_kind_from_string(r.at("error_kind").get<std::string>()),
                                              r.at("docids").get<std::vector<std::string>>()});
                if (t.tool_results.size() != t.tool_calls.size())
                    throw FormatError("tool_results not aligned with tool_calls");
                t.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
                t.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
                t.wall_ms = j.at("wall_ms").get<std::int64_t>();
                trace.turns.push_back(std::move(t));
            } else if (kind == "summary") {
                summary = true;
                trace.qid = j.at("qid").get<std::string>();
                trace.run_id = j.value("run_id", std::string());
                trace.config = j.value("config", std::string());
                trace.completed = j.at("completed").get<bool>();
                if (!j.at("report_text").is_null())
                    trace.report_text = j.at("report_text").get<std::string>();
                trace.total_wall_ms = j.at("total_wall_ms").get<std::int64_t>();
                trace.failure_reason = failure_reason_from_string(j.at("failure_reason").get<std::string>());
            } else {
                throw FormatError("unknown record kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("trace line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("trace line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!summary)
        throw FormatError("trace has no summary record");
    return trace;
}

} // namespace ravine
