#pragma once

// OpenAI-compatible HTTP backends for the judge, the embedder and the agent
// model. Define CPPHTTPLIB_OPENSSL_SUPPORT before including to reach https
// endpoints.

#include "ravine/agent.hpp"
#include "ravine/embedding.hpp"
#include "ravine/error.hpp"
#include "ravine/providers.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

namespace ravine::http {

struct Endpoint {
    std::string base; // scheme://host[:port]
    std::string path; // request path, e.g. /v1/chat/completions
};

inline Endpoint parse_endpoint(const std::string& url)
{
    auto scheme = url.find("://");
    if (scheme == std::string::npos)
        throw Error("endpoint '" + url + "' has no scheme");
    auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.base = url.substr(0, slash);
    e.path = slash == std::string::npos ? "/" : url.substr(slash);
    if (e.base.size() <= scheme + 3)
        throw Error("endpoint '" + url + "' has no host");
    return e;
}

inline std::string env_or_empty(const char* name)
{
    const char* v = std::getenv(name);
    return v ? v : "";
}

/// POSTs JSON and returns the decoded body. Connection failures, 429 and
/// 5xx raise TransportError so the retry policy can take over.
inline nlohmann::json post_json(const Endpoint& ep, const std::string& api_key, const nlohmann::json& body,
                                int timeout_s = 300)
{
    httplib::Client client(ep.base);
    client.set_connection_timeout(timeout_s);
    client.set_read_timeout(timeout_s);
    client.set_write_timeout(timeout_s);
    httplib::Headers headers;
    if (!api_key.empty())
        headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(ep.path, headers, body.dump(), "application/json");
    if (!res)
        throw TransportError("request to " + ep.base + ep.path + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransportError("HTTP " + std::to_string(res->status) + " from " + ep.base + ep.path);
    if (res->status < 200 || res->status >= 300)
        throw ProviderError("HTTP " + std::to_string(res->status) + " from " + ep.base + ep.path + ": " + res->body);
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("undecodable response body: ") + e.what());
    }
}

class HttpJudge final : public Judge {
public:
    HttpJudge(std::string url, std::string api_key, std::string model)
        : ep_(parse_endpoint(url)), key_(std::move(api_key)), model_(std::move(model))
    {
    }

    std::string complete(const JudgeRequest& request) const override
    {
        nlohmann::json body{{"model", model_},
                            {"messages", {{{"role", "user"}, {"content", request.prompt}}}},
                            {"max_tokens", request.max_output_tokens},
                            {"temperature", request.temperature}};
        auto j = post_json(ep_, key_, body);
        try {
            const auto& content = j.at("choices").at(0).at("message").at("content");
            return content.is_null() ? std::string() : content.get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed completion response: ") + e.what());
        }
    }

private:
    Endpoint ep_;
    std::string key_;
    std::string model_;
};

class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(std::string url, std::string api_key, std::string model, std::size_t dim,
                 RetryPolicy retry = RetryPolicy())
        : ep_(parse_endpoint(url)), key_(std::move(api_key)), model_(std::move(model)), dim_(dim),
          retry_(std::move(retry))
    {
    }

    std::size_t dim() const override { return dim_; }

    std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) const override
    {
        if (texts.empty())
            throw Error("embed_batch needs at least one text");
        nlohmann::json body{{"model", model_}, {"input", texts}};
        auto j = retry_.run([&] { return post_json(ep_, key_, body); });
        std::vector<Embedding> out(texts.size());
        try {
            for (const auto& item : j.at("data")) {
                auto idx = item.value("index", std::size_t{0});
                if (idx >= out.size())
                    throw ProviderError("embedding index out of range");
                out[idx] = item.at("embedding").get<Embedding>();
                normalize_l2(out[idx]);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("malformed embedding response: ") + e.what());
        }
        check_embeddings(out, texts.size(), dim_);
        return out;
    }

private:
    Endpoint ep_;
    std::string key_;
    std::string model_;
    std::size_t dim_;
    RetryPolicy retry_;
};

class HttpModelClient final : public ModelClient {
public:
    HttpModelClient(std::string url, std::string api_key, std::string model, double temperature = 0.0,
                    int max_output_tokens = 4096)
        : ep_(parse_endpoint(url)), key_(std::move(api_key)), model_(std::move(model)), temperature_(temperature),
          max_tokens_(max_output_tokens)
    {
    }

    ModelReply chat(const nlohmann::json& messages, const nlohmann::ordered_json& tools) override
    {
        nlohmann::json body{{"model", model_},
                            {"messages", messages},
                            {"tools", nlohmann::json::parse(tools.dump())},
                            {"temperature", temperature_},
                            {"max_tokens", max_tokens_}};
        auto j = post_json(ep_, key_, body);
        ModelReply reply;
        try {
            const auto& msg = j.at("choices").at(0).at("message");
            if (auto c = msg.find("content"); c != msg.end() && c->is_string())
                reply.text = c->get<std::string>();
            if (auto calls = msg.find("tool_calls"); calls != msg.end() && calls->is_array()) {
                for (const auto& c : *calls) {
                    ModelToolCall mc;
                    mc.id = c.value("id", std::string());
                    const auto& fn = c.at("function");
                    mc.name = fn.value("name", std::string());
                    const auto& args = fn.contains("arguments") ? fn["arguments"] : nlohmann::json("");
                    mc.arguments = args.is_string() ? args.get<std::string>() : args.dump();
                    reply.tool_calls.push_back(std::move(mc));
                }
            }
            if (auto usage = j.find("usage"); usage != j.end()) {
                reply.prompt_tokens = usage->value("prompt_tokens", std::int64_t{0});
                reply.completion_tokens = usage->value("completion_tokens", std::int64_t{0});
            }
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed chat response: ") + e.what());
        }
        return reply;
    }

private:
    Endpoint ep_;
    std::string key_;
    std::string model_;
    double temperature_;
    int max_tokens_;
};

} // namespace ravine::http
