#pragma once

#include "ravine/embedding.hpp"
#include "ravine/error.hpp"
#include "ravine/prompts.hpp"
#include "ravine/text.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

namespace ravine {

struct JudgeRequest {
    std::string prompt;
    int max_output_tokens = 2048;
    double temperature = 0.0;
};

/// Chat-style text completion used for nugget extraction and scoring.
/// Implementations must be safe to call from several threads.
class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string complete(const JudgeRequest& request) const = 0;
};

struct RetryPolicy {
    int retries = 3;
    std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(1000), std::chrono::milliseconds(2000),
                                                   std::chrono::milliseconds(4000)};
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };

    /// Same retry count, no waiting. Used by tests and mock pipelines.
    static RetryPolicy immediate(int retries = 3)
    {
        RetryPolicy p;
        p.retries = retries;
        p.sleep = [](std::chrono::milliseconds) {};
        return p;
    }

    std::chrono::milliseconds delay_before_retry(int retry) const
    {
        if (backoff.empty())
            return std::chrono::milliseconds(0);
        auto i = static_cast<std::size_t>(retry);
        return i < backoff.size() ? backoff[i] : backoff.back();
    }

    /// Runs `fn`, retrying TransportError up to `retries` times.
    template <typename F>
    auto run(F&& fn) const -> std::invoke_result_t<F&>
    {
        for (int attempt = 0;; ++attempt) {
            try {
                return fn();
            } catch (const TransportError& e) {
                if (attempt >= retries)
                    throw ProviderError(std::string("provider failed after ") + std::to_string(attempt + 1)
                                            + " attempts: " + e.what(),
                                        attempt + 1);
                sleep(delay_before_retry(attempt));
            }
        }
    }
};

/// Evaluation-path completion: temperature pinned to 0, single sample,
/// transient failures retried per policy.
inline std::string judge_complete(const Judge& judge, JudgeRequest request, const RetryPolicy& policy)
{
    request.temperature = 0.0;
    return policy.run([&] { return judge.complete(request); });
}

// ---------------------------------------------------------------------------
// List literals

namespace detail {

inline bool parse_quoted(std::string_view s, std::size_t& i, std::string& out)
{
    const char quote = s[i];
    if (quote != '"' && quote != '\'')
        return false;
    ++i;
    out.clear();
    while (i < s.size()) {
        char c = s[i++];
        if (c == quote)
            return true;
        if (c == '\\' && i < s.size()) {
            char e = s[i++];
            switch (e) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            default: out.push_back(e); break;
            }
            continue;
        }
        out.push_back(c);
    }
    return false;
}

inline void skip_ws(std::string_view s, std::size_t& i)
{
    while (i < s.size() && text::is_space(s[i]))
        ++i;
}

inline std::optional<std::vector<std::string>> parse_list_at(std::string_view s, std::size_t i)
{
    if (s[i] != '[')
        return std::nullopt;
    ++i;
    std::vector<std::string> items;
    skip_ws(s, i);
    if (i < s.size() && s[i] == ']')
        return items;
    std::string item;
    while (i < s.size()) {
        skip_ws(s, i);
        if (i >= s.size() || !parse_quoted(s, i, item))
            return std::nullopt;
        items.push_back(item);
        skip_ws(s, i);
        if (i >= s.size())
            return std::nullopt;
        if (s[i] == ']')
            return items;
        if (s[i] != ',')
            return std::nullopt;
        ++i;
        skip_ws(s, i);
        if (i < s.size() && s[i] == ']') // trailing comma
            return items;
    }
    return std::nullopt;
}

/// Body of the first fenced code block, or the input when there is none.
inline std::string_view strip_code_fence(std::string_view s)
{
    auto open = s.find("```");
    if (open == std::string_view::npos)
        return s;
    auto body_start = s.find('\n', open + 3);
    if (body_start == std::string_view::npos)
        return s.substr(open + 3);
    ++body_start;
    auto close = s.find("```", body_start);
    return close == std::string_view::npos ? s.substr(body_start) : s.substr(body_start, close - body_start);
}

} // namespace detail

/// Parses a bracketed list of quoted strings out of judge output, tolerating
/// code fences and surrounding prose.
inline std::vector<std::string> parse_list_literal(std::string_view raw)
{
    for (std::string_view candidate : {detail::strip_code_fence(raw), raw}) {
        for (std::size_t i = candidate.find('['); i != std::string_view::npos; i = candidate.find('[', i + 1)) {
            if (auto items = detail::parse_list_at(candidate, i))
                return *items;
        }
    }
    throw ParseError("judge output does not contain a list of strings", std::string(raw));
}

/// Inverse of parse_list_literal: `["a", "b"]`.
inline std::string render_list_literal(const std::vector<std::string>& items)
{
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i)
            out += ", ";
        out.push_back('"');
        for (char c : items[i]) {
            switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c); break;
            }
        }
        out.push_back('"');
    }
    out.push_back(']');
    return out;
}

// ---------------------------------------------------------------------------
// Bounded parallelism

/// Calls fn(i) for i in [0, count) on at most `max_in_flight` threads and
/// returns results in index order. The first exception by index is rethrown
/// after all work finishes.
template <typename F>
auto parallel_map(std::size_t count, std::size_t max_in_flight, F&& fn)
    -> std::vector<std::invoke_result_t<F&, std::size_t>>
{
    using R = std::invoke_result_t<F&, std::size_t>;
    std::vector<std::optional<R>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(count, std::max<std::size_t>(1, max_in_flight));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    std::vector<R> out;
    out.reserve(count);
    for (auto& s : slots)
        out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Mock judge

namespace mock {

inline std::set<std::string> content_set(std::string_view s)
{
    auto words = text::content_words(s);
    return {words.begin(), words.end()};
}

/// support iff every content word of the nugget occurs in the passage,
/// partial_support iff at least half do.
inline std::string support_label(std::string_view nugget, std::string_view passage)
{
    auto wanted = content_set(nugget);
    if (wanted.empty())
        return "not_support";
    auto have = content_set(passage);
    std::size_t hits = 0;
    for (const auto& w : wanted)
        hits += have.contains(w) ? 1 : 0;
    if (hits == wanted.size())
        return "support";
    if (2 * hits >= wanted.size())
        return "partial_support";
    return "not_support";
}

/// vital iff the nugget shares a content word with the query.
inline std::string importance_label(std::string_view nugget, std::string_view query)
{
    auto q = content_set(query);
    for (const auto& w : content_set(nugget))
        if (q.contains(w))
            return "vital";
    return "okay";
}

inline std::string_view between(std::string_view s, std::string_view open, std::string_view close,
                                 bool last_open = false)
{
    auto a = last_open ? s.rfind(open) : s.find(open);
    if (a == std::string_view::npos)
        return {};
    a += open.size();
    auto b = s.find(close, a);
    return b == std::string_view::npos ? s.substr(a) : s.substr(a, b - a);
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b)
{
    if (a.empty() && b.empty())
        return 1.0;
    std::size_t inter = 0;
    for (const auto& w : a)
        inter += b.contains(w) ? 1 : 0;
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

inline std::vector<std::string> split_sentences(std::string_view s)
{
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        auto t = text::trim(cur);
        while (!t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == '?'))
            t.remove_suffix(1);
        t = text::trim(t);
        if (!t.empty())
            out.emplace_back(t);
        cur.clear();
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        cur.push_back(c);
        bool end = c == '\n'
                   || ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || text::is_space(s[i + 1])));
        if (end)
            flush();
    }
    flush();
    return out;
}

} // namespace mock

/// Deterministic rule-based judge. Exact-prompt canned answers take
/// precedence; otherwise the prompt template is recognised and answered by
/// simple lexical rules.
class MockJudge final : public Judge {
public:
    MockJudge() = default;
    explicit MockJudge(std::map<std::string, std::string> canned) : canned_(std::move(canned)) {}

    void set_canned(const std::string& prompt, std::string answer) { canned_[prompt] = std::move(answer); }

    std::size_t calls() const noexcept { return calls_.load(); }

    std::string complete(const JudgeRequest& request) const override
    {
        ++calls_;
        if (auto it = canned_.find(request.prompt); it != canned_.end())
            return it->second;
        std::string_view p = request.prompt;
        if (p.starts_with(fixed_prefix(prompts::kNuggetAssignment)))
            return assignment(p);
        if (p.starts_with(fixed_prefix(prompts::kNuggetScoring)))
            return scoring(p);
        if (p.starts_with(fixed_prefix(prompts::kNuggetMerging)))
            return merging(p);
        if (p.starts_with(fixed_prefix(prompts::kNuggetCreation)))
            return creation(p);
        throw ProviderError("mock judge has no rule for this prompt: " + std::string(p.substr(0, 60)));
    }

private:
    // Leading template text up to the first placeholder, at most 40 bytes.
    static std::string_view fixed_prefix(std::string_view tmpl)
    {
        return tmpl.substr(0, std::min<std::size_t>(40, tmpl.find('{')));
    }

    static std::string assignment(std::string_view p)
    {
        auto passage = mock::between(p, "\nPassage:\n", "\nNugget List: ");
        auto nuggets = parse_list_literal(mock::between(p, "\nNugget List: ", "\nOnly return the list"));
        std::vector<std::string> labels;
        for (const auto& n : nuggets)
            labels.push_back(mock::support_label(n, passage));
        return render_list_literal(labels);
    }

    static std::string scoring(std::string_view p)
    {
        auto query = mock::between(p, "\nSearch Query: ", "\n");
        auto nuggets = parse_list_literal(mock::between(p, "\nNugget List: ", "\nOnly return the list"));
        std::vector<std::string> labels;
        for (const auto& n : nuggets)
            labels.push_back(mock::importance_label(n, query));
        return render_list_literal(labels);
    }

    static std::string merging(std::string_view p)
    {
        auto block = mock::between(p, "\nNuggets List:\n", "\nYour output should be:");
        std::vector<std::string> members;
        std::size_t pos = 0;
        while (pos <= block.size()) {
            auto nl = block.find('\n', pos);
            auto line = text::trim(block.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
            if (auto dot = line.find(". "); dot != std::string_view::npos)
                members.emplace_back(line.substr(dot + 2));
            if (nl == std::string_view::npos)
                break;
            pos = nl + 1;
        }
        std::vector<std::set<std::string>> words;
        for (const auto& m : members)
            words.push_back(mock::content_set(m));
        std::vector<bool> used(members.size(), false);
        std::string out;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (used[i])
                continue;
            std::vector<std::size_t> group{i};
            for (std::size_t j = i + 1; j < members.size(); ++j)
                if (!used[j] && mock::jaccard(words[i], words[j]) >= 0.5)
                    group.push_back(j);
            if (group.size() < 2)
                continue;
            std::size_t best = group.front();
            std::string idx;
            for (auto g : group) {
                used[g] = true;
                if (words[g].size() > words[best].size())
                    best = g;
                idx += (idx.empty() ? "" : ", ") + std::to_string(g + 1);
            }
            out += members[best] + " [" + idx + "]\n";
        }
        return out.empty() ? "[NO NEED]" : out;
    }

    static std::string creation(std::string_view p)
    {
        std::size_t cap = 0;
        auto cap_text = mock::between(p, "has at most ", " nuggets");
        for (char c : cap_text)
            if (c >= '0' && c <= '9')
                cap = cap * 10 + static_cast<std::size_t>(c - '0');
        auto query = mock::between(p, "\nSearch Query: ", "\n");
        auto context = mock::between(p, "\nContext:\n", "\nSearch Query: ");
        auto q = mock::content_set(query);
        std::vector<std::string> nuggets;
        for (auto& sentence : mock::split_sentences(context)) {
            if (nuggets.size() >= cap)
                break;
            auto words = mock::content_set(sentence);
            if (words.size() < 3)
                continue;
            bool relevant = std::any_of(words.begin(), words.end(), [&](const std::string& w) { return q.contains(w); });
            if (relevant && std::find(nuggets.begin(), nuggets.end(), sentence) == nuggets.end())
                nuggets.push_back(sentence);
        }
        return "```python\n" + render_list_literal(nuggets) + "\n```";
    }

    std::map<std::string, std::string> canned_;
    mutable std::atomic<std::size_t> calls_{0};
};

} // namespace ravine
