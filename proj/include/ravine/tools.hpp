#pragma once

#include "ravine/corpus.hpp"
#include "ravine/search_index.hpp"
#include "ravine/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ravine {

inline constexpr std::string_view kSearchToolName = "web_search";
inline constexpr std::string_view kFetchToolName = "web_fetch";

inline constexpr std::string_view kSearchToolSchema = R"({
    "type": "function",
    "function": {
        "name": "web_search",
        "description": "Retrieve a list of documents from the web corpus based on query relevance.",
        "parameters": {
            "type": "object",
            "properties": {
                "query": {
                    "type": "string",
                    "description": ""
                },
                "num_results": {
                    "type": "number",
                    "description": "Number of top results to return."
                }
            },
            "required": [
                "query",
                "num_results"
            ],
            "additionalProperties": false
        }
    }
})";

inline constexpr std::string_view kFetchToolSchema = R"({
    "type": "function",
    "function": {
        "name": "web_fetch",
        "description": "Fetch the content of a web page based on its URL.",
        "parameters": {
            "type": "object",
            "properties": {
                "url": {
                    "type": "string",
                    "description": "The full URL of the web page to fetch content from."
                }
            },
            "required": [
                "url"
            ],
            "additionalProperties": false
        }
    }
})";

/// The two tool definitions, in order web_search, web_fetch.
inline nlohmann::ordered_json tool_schemas()
{
    return nlohmann::ordered_json::array(
        {nlohmann::ordered_json::parse(kSearchToolSchema), nlohmann::ordered_json::parse(kFetchToolSchema)});
}

struct ToolCall {
    std::string id;
    std::string name;
    std::string arguments_json;   // raw string as emitted by the model
    nlohmann::json arguments;     // decoded; discarded value when undecodable
    int turn_index = 1;

    static ToolCall make(std::string id, std::string name, std::string arguments_json, int turn_index)
    {
        ToolCall c{std::move(id), std::move(name), std::move(arguments_json), {}, turn_index};
        c.arguments = nlohmann::json::parse(c.arguments_json, nullptr, false);
        return c;
    }
};

enum class ToolErrorKind { none, undefined_tool, bad_params, url_error, empty_query };

inline std::string_view to_string(ToolErrorKind k)
{
    switch (k) {
    case ToolErrorKind::none: return "none";
    case ToolErrorKind::undefined_tool: return "undefined_tool";
    case ToolErrorKind::bad_params: return "bad_params";
    case ToolErrorKind::url_error: return "url_error";
    case ToolErrorKind::empty_query: return "empty_query";
    }
    return "none";
}

inline ToolErrorKind tool_error_kind_from_string(std::string_view s)
{
    for (auto k : {ToolErrorKind::none, ToolErrorKind::undefined_tool, ToolErrorKind::bad_params,
                   ToolErrorKind::url_error, ToolErrorKind::empty_query})
        if (to_string(k) == s)
            return k;
    throw FormatError("unknown tool error kind '" + std::string(s) + "'");
}

struct ToolResult {
    bool ok = true;
    std::string payload;
    ToolErrorKind error_kind = ToolErrorKind::none;
    // Documents surfaced by this call: the ranked hits of a search or the
    // fetched page. Recorded for metrics; never shown to the model.
    std::vector<std::string> docids;

    static ToolResult failure(ToolErrorKind kind, std::string message)
    {
        return {false, std::move(message), kind, {}};
    }
};

struct ValidityRecord {
    bool undefined_tool = false;
    bool param_violation = false;
    bool fetch_before_search = false;
    bool url_error = false;

    bool operator==(const ValidityRecord&) const = default;
};

namespace detail {

enum class ArgKind { string, number };

struct ArgSpec {
    std::string_view name;
    ArgKind kind;
};

inline const std::vector<ArgSpec>* argument_specs(std::string_view tool)
{
    static const std::vector<ArgSpec> search = {{"query", ArgKind::string}, {"num_results", ArgKind::number}};
    static const std::vector<ArgSpec> fetch = {{"url", ArgKind::string}};
    if (tool == kSearchToolName)
        return &search;
    if (tool == kFetchToolName)
        return &fetch;
    return nullptr;
}

/// Empty when the arguments conform to the schema, otherwise the reason.
inline std::optional<std::string> argument_violation(const ToolCall& call)
{
    const auto* specs = argument_specs(call.name);
    if (!specs)
        return std::nullopt;
    if (!call.arguments.is_object())
        return "arguments are not a JSON object";
    for (const auto& spec : *specs) {
        auto it = call.arguments.find(std::string(spec.name));
        if (it == call.arguments.end())
            return "missing required parameter '" + std::string(spec.name) + "'";
        bool kind_ok = spec.kind == ArgKind::string ? it->is_string() : it->is_number();
        if (!kind_ok)
            return "parameter '" + std::string(spec.name) + "' has the wrong type";
    }
    for (const auto& [key, value] : call.arguments.items()) {
        bool known = false;
        for (const auto& spec : *specs)
            known = known || spec.name == key;
        if (!known)
            return "unexpected parameter '" + key + "'";
    }
    return std::nullopt;
}

inline std::string single_line(std::string_view s)
{
    std::string out{text::trim(s)};
    for (auto& c : out)
        if (c == '\n' || c == '\r')
            c = ' ';
    return out;
}

} // namespace detail

/// Pure schema/selection classification of one call. When `corpus` is given,
/// url_error is also set for fetches whose url is not in the corpus.
inline ValidityRecord validate_call(const ToolCall& call, const std::vector<ToolCall>& prior_calls,
                                    const Corpus* corpus = nullptr)
{
    ValidityRecord v;
    v.undefined_tool = detail::argument_specs(call.name) == nullptr;
    v.param_violation = !v.undefined_tool && detail::argument_violation(call).has_value();
    if (call.name == kFetchToolName) {
        v.fetch_before_search = std::none_of(prior_calls.begin(), prior_calls.end(),
                                             [](const ToolCall& c) { return c.name == kSearchToolName; });
        if (corpus && !v.param_violation)
            v.url_error = corpus->lookup_by_url(call.arguments["url"].get<std::string>()) == nullptr;
    }
    return v;
}

/// One stanza per hit: rank, title, url, headings.
inline std::string render_serp(const std::vector<SearchHit>& hits)
{
    if (hits.empty())
        return "No results found.";
    std::string out;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (i)
            out += "\n\n";
        std::string headings;
        std::size_t pos = 0;
        const std::string& h = hits[i].headings;
        while (pos <= h.size()) {
            auto nl = h.find('\n', pos);
            auto piece = text::trim(std::string_view(h).substr(pos, nl == std::string::npos ? std::string::npos : nl - pos));
            if (!piece.empty())
                headings += (headings.empty() ? "" : " | ") + std::string(piece);
            if (nl == std::string::npos)
                break;
            pos = nl + 1;
        }
        out += "[" + std::to_string(i + 1) + "] " + detail::single_line(hits[i].title) + "\n";
        out += "URL: " + detail::single_line(hits[i].url) + "\n";
        out += "Headings: " + headings;
    }
    return out;
}

/// URLs listed in a SERP payload, in rank order.
inline std::vector<std::string> parse_serp_urls(std::string_view payload)
{
    std::vector<std::string> urls;
    std::size_t pos = 0;
    while (pos < payload.size()) {
        auto nl = payload.find('\n', pos);
        auto line = payload.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        if (line.starts_with("URL: "))
            urls.emplace_back(text::trim(line.substr(5)));
        if (nl == std::string_view::npos)
            break;
        pos = nl + 1;
    }
    return urls;
}

inline constexpr std::string_view kTruncationMarker = "[...truncated]";

/// Executes web_search/web_fetch calls over an immutable corpus and index.
class ToolBox {
public:
    ToolBox(const Corpus& corpus, const Retriever& index, std::size_t fetch_budget_chars = 20000)
        : corpus_(&corpus), index_(&index), fetch_budget_(fetch_budget_chars)
    {
    }

    const Corpus& corpus() const { return *corpus_; }
    std::size_t fetch_budget() const { return fetch_budget_; }

    ToolResult execute_search(const std::string& query, double num_results) const
    {
        if (!(num_results >= 1.0) || std::floor(num_results) != num_results || num_results > 1e9)
            return ToolResult::failure(ToolErrorKind::bad_params,
                                       "Error: num_results must be a positive integer.");
        try {
            auto hits = index_->search(query, static_cast<std::size_t>(num_results));
            ToolResult r{true, render_serp(hits), ToolErrorKind::none, {}};
            for (const auto& h : hits)
                r.docids.push_back(h.docid);
            return r;
        } catch (const EmptyQueryError&) {
            return ToolResult::failure(ToolErrorKind::empty_query, "Error: the search query is empty.");
        }
    }

    ToolResult execute_fetch(const std::string& url) const
    {
        const Document* doc = corpus_->lookup_by_url(url);
        if (!doc)
            return ToolResult::failure(ToolErrorKind::url_error, "URL not found");
        std::string content = doc->title + "\n" + doc->headings + "\n\n" + doc->body;
        if (text::count_code_points(content) > fetch_budget_)
            content = std::string(text::utf8_prefix(content, fetch_budget_)) + "\n" + std::string(kTruncationMarker);
        return {true, std::move(content), ToolErrorKind::none, {doc->docid}};
    }

    /// Dispatches a model tool call; failures become tool-error results.
    ToolResult execute(const ToolCall& call) const
    {
        if (!detail::argument_specs(call.name))
            return ToolResult::failure(ToolErrorKind::undefined_tool,
                                       "Error: undefined tool '" + call.name
                                           + "'. Available tools: web_search, web_fetch.");
        if (auto why = detail::argument_violation(call))
            return ToolResult::failure(ToolErrorKind::bad_params, "Error: invalid parameters: " + *why + ".");
        if (call.name == kSearchToolName)
            return execute_search(call.arguments["query"].get<std::string>(),
                                  call.arguments["num_results"].get<double>());
        return execute_fetch(call.arguments["url"].get<std::string>());
    }

private:
    const Corpus* corpus_;
    const Retriever* index_;
    std::size_t fetch_budget_;
};

} // namespace ravine
