#pragma once

#include "ravine/corpus.hpp"
#include "ravine/embedding.hpp"
#include "ravine/error.hpp"
#include "ravine/hdbscan.hpp"
#include "ravine/prompts.hpp"
#include "ravine/providers.hpp"
#include "ravine/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <set>
#include <string>
#include <vector>

namespace ravine {

enum class NuggetLabel { unlabeled, vital, okay };

inline std::string_view to_string(NuggetLabel l)
{
    switch (l) {
    case NuggetLabel::vital: return "vital";
    case NuggetLabel::okay: return "okay";
    case NuggetLabel::unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

inline NuggetLabel nugget_label_from_string(std::string_view s)
{
    if (s == "vital")
        return NuggetLabel::vital;
    if (s == "okay")
        return NuggetLabel::okay;
    if (s == "unlabeled")
        return NuggetLabel::unlabeled;
    throw FormatError("unknown nugget label '" + std::string(s) + "'");
}

struct RawNugget {
    std::string qid;
    std::string text;
    std::string source_docid;
};

struct Nugget {
    std::string qid;
    std::string text;
    std::set<std::string> sources;
    NuggetLabel label = NuggetLabel::unlabeled;

    bool operator==(const Nugget&) const = default;
};

struct Batch {
    std::string docid;
    std::vector<const Segment*> segments; // corpus order
};

/// One batch per document holding relevant segments of `qid`, ordered by
/// docid; segments keep their order within the document.
inline std::vector<Batch> build_batches(const std::string& qid, const std::vector<QrelRecord>& qrels,
                                        const Corpus& corpus, int threshold = 1)
{
    std::map<std::string, std::vector<const Segment*>> by_doc;
    for (const auto& r : qrels) {
        if (r.qid != qid || r.grade < threshold)
            continue;
        const Segment* seg = corpus.find_segment(r.segid);
        if (!seg)
            throw FormatError("qrels segment '" + r.segid + "' not in corpus");
        auto& list = by_doc[seg->docid];
        if (std::find(list.begin(), list.end(), seg) == list.end())
            list.push_back(seg);
    }
    std::vector<Batch> batches;
    for (auto& [docid, segs] : by_doc) {
        std::sort(segs.begin(), segs.end(), [&](const Segment* a, const Segment* b) {
            return corpus.segment_rank(a->segid) < corpus.segment_rank(b->segid);
        });
        batches.push_back({docid, std::move(segs)});
    }
    return batches;
}

inline std::string batch_context(const Batch& batch)
{
    std::string context;
    for (std::size_t i = 0; i < batch.segments.size(); ++i) {
        if (i)
            context += "\n";
        context += batch.segments[i]->text;
    }
    return context;
}

inline std::string creation_prompt(const std::string& query_text, const Batch& batch, std::size_t creator_max)
{
    return prompts::fill(prompts::kNuggetCreation, {{"creator_max_nuggets", std::to_string(creator_max)},
                                                    {"query", query_text},
                                                    {"context", batch_context(batch)}});
}

/// Asks the judge for nuggets of one document batch. A malformed answer is
/// re-requested once before the ParseError propagates.
inline std::vector<RawNugget> extract_batch(const std::string& qid, const std::string& query_text, const Batch& batch,
                                            const Judge& judge, std::size_t creator_max,
                                            const RetryPolicy& policy = RetryPolicy::immediate())
{
    if (batch.segments.empty())
        throw Error("extract_batch needs a nonempty batch");
    const JudgeRequest request{creation_prompt(query_text, batch, creator_max)};
    std::vector<std::string> items;
    for (int attempt = 0;; ++attempt) {
        auto answer = judge_complete(judge, request, policy);
        try {
            items = parse_list_literal(answer);
            break;
        } catch (const ParseError&) {
            if (attempt >= 1)
                throw;
        }
    }
    std::vector<RawNugget> out;
    for (auto& item : items) {
        if (out.size() >= creator_max)
            break;
        auto t = text::trim(item);
        if (!t.empty())
            out.push_back({qid, std::string(t), batch.docid});
    }
    return out;
}

/// Collapses raw nuggets with identical text into one unlabeled Nugget with
/// the union of their sources; first occurrence fixes the position.
inline std::vector<Nugget> union_duplicates(const std::vector<RawNugget>& raw)
{
    std::vector<Nugget> out;
    std::map<std::string, std::size_t> index;
    for (const auto& r : raw) {
        auto [it, fresh] = index.emplace(r.text, out.size());
        if (fresh)
            out.push_back({r.qid, r.text, {r.source_docid}, NuggetLabel::unlabeled});
        else
            out[it->second].sources.insert(r.source_docid);
    }
    return out;
}

inline ClusteringResult cluster_nuggets(const std::vector<Nugget>& nuggets, const Embedder& embedder,
                                        const ClusteringParams& params)
{
    if (nuggets.empty())
        throw Error("cluster_nuggets needs at least one nugget");
    std::vector<std::string> texts;
    for (const auto& n : nuggets)
        texts.push_back(n.text);
    auto vectors = embedder.embed_batch(texts);
    check_embeddings(vectors, texts.size(), embedder.dim());
    return hdbscan_cosine(vectors, params);
}

inline std::string merge_prompt(const std::string& query_text, const std::vector<Nugget>& members)
{
    std::string list;
    for (std::size_t i = 0; i < members.size(); ++i)
        list += (i ? "\n" : "") + std::to_string(i + 1) + ". " + members[i].text;
    return prompts::fill(prompts::kNuggetMerging, {{"query", query_text}, {"nuggets_list", list}});
}

/// Interprets a merge answer: `text [i, j, ...]` lines with 1-based member
/// indices, or the [NO NEED] sentinel. Members no line mentions are kept.
inline std::vector<Nugget> parse_merge_answer(const std::string& answer, const std::vector<Nugget>& members)
{
    if (answer.find("[NO NEED]") != std::string::npos)
        return members;
    static const std::regex line_re(R"(^\s*(?:[-*]\s+|\d+[.)]\s+)?(.*?\S)\s*\[\s*(\d+(?:\s*,\s*\d+)*)\s*\]\s*$)");
    static const std::regex num_re(R"(\d+)");
    std::vector<Nugget> merged;
    std::vector<bool> covered(members.size(), false);
    std::size_t start = 0;
    while (start <= answer.size()) {
        auto nl = answer.find('\n', start);
        std::string line = answer.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        std::smatch m;
        if (std::regex_match(line, m, line_re)) {
            Nugget n{members.front().qid, std::string(text::trim(m[1].str())), {}, NuggetLabel::unlabeled};
            std::string nums = m[2].str();
            for (auto it = std::sregex_iterator(nums.begin(), nums.end(), num_re); it != std::sregex_iterator(); ++it) {
                auto idx = std::stoul(it->str());
                if (idx < 1 || idx > members.size())
                    throw ParseError("merge answer references nugget " + std::to_string(idx) + " of "
                                         + std::to_string(members.size()),
                                     answer);
                covered[idx - 1] = true;
                n.sources.insert(members[idx - 1].sources.begin(), members[idx - 1].sources.end());
            }
            if (!n.text.empty())
                merged.push_back(std::move(n));
        }
        if (nl == std::string::npos)
            break;
        start = nl + 1;
    }
    if (merged.empty())
        throw ParseError("merge answer has no `text [indices]` lines", answer);
    for (std::size_t i = 0; i < members.size(); ++i)
        if (!covered[i])
            merged.push_back(members[i]);
    return merged;
}

inline std::vector<Nugget> merge_cluster(const std::string& query_text, const std::vector<Nugget>& members,
                                         const Judge& judge, const RetryPolicy& policy = RetryPolicy::immediate())
{
    if (members.size() < 2)
        throw Error("merge_cluster needs at least two nuggets");
    const JudgeRequest request{merge_prompt(query_text, members)};
    for (int attempt = 0;; ++attempt) {
        try {
            return parse_merge_answer(judge_complete(judge, request, policy), members);
        } catch (const ParseError&) {
            if (attempt >= 1)
                throw;
        }
    }
}

inline std::string scoring_prompt(const std::string& query_text, const std::vector<std::string>& texts)
{
    return prompts::fill(prompts::kNuggetScoring, {{"num_nuggets", std::to_string(texts.size())},
                                                   {"query", query_text},
                                                   {"nugget_list", render_list_literal(texts)}});
}

/// Labels are requested in chunks of `batch_size`; a wrong-length or
/// unknown-label answer is retried once per chunk.
inline void label_nuggets(const std::string& query_text, std::vector<Nugget>& nuggets, const Judge& judge,
                          std::size_t batch_size = 10, const RetryPolicy& policy = RetryPolicy::immediate())
{
    if (batch_size == 0)
        throw Error("label batch size must be > 0");
    for (std::size_t from = 0; from < nuggets.size(); from += batch_size) {
        const std::size_t to = std::min(nuggets.size(), from + batch_size);
        std::vector<std::string> texts;
        for (std::size_t i = from; i < to; ++i)
            texts.push_back(nuggets[i].text);
        const JudgeRequest request{scoring_prompt(query_text, texts)};
        for (int attempt = 0;; ++attempt) {
            auto answer = judge_complete(judge, request, policy);
            try {
                auto labels = parse_list_literal(answer);
                if (labels.size() != texts.size())
                    throw ParseError("expected " + std::to_string(texts.size()) + " labels, got "
                                         + std::to_string(labels.size()),
                                     answer);
                std::vector<NuggetLabel> parsed;
                for (auto& l : labels) {
                    std::string v{text::trim(l)};
                    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
                    if (v != "vital" && v != "okay")
                        throw ParseError("unknown importance label '" + l + "'", answer);
                    parsed.push_back(nugget_label_from_string(v));
                }
                for (std::size_t i = from; i < to; ++i)
                    nuggets[i].label = parsed[i - from];
                break;
            } catch (const ParseError&) {
                if (attempt >= 1)
                    throw;
            }
        }
    }
}

/// Keeps every vital nugget before any okay one, in pipeline order, up to `cap`.
inline std::vector<Nugget> truncate_vital_first(const std::vector<Nugget>& nuggets, std::size_t cap)
{
    if (nuggets.size() <= cap)
        return nuggets;
    std::vector<Nugget> out;
    for (auto label : {NuggetLabel::vital, NuggetLabel::okay, NuggetLabel::unlabeled})
        for (const auto& n : nuggets)
            if (n.label == label && out.size() < cap)
                out.push_back(n);
    return out;
}

inline constexpr std::size_t kDefaultNuggetCap = 60;

inline std::vector<Nugget> finalize_nuggets(const std::string& query_text, std::vector<Nugget> nuggets,
                                            const Judge& judge, std::size_t cap = kDefaultNuggetCap,
                                            std::size_t label_batch = 10,
                                            const RetryPolicy& policy = RetryPolicy::immediate())
{
    label_nuggets(query_text, nuggets, judge, label_batch, policy);
    return truncate_vital_first(nuggets, cap);
}

struct NuggetConfig {
    int relevance_threshold = 1;
    std::size_t creator_max = 10;
    ClusteringParams clustering;
    std::size_t cap = kDefaultNuggetCap;
    std::size_t label_batch = 10;
    std::size_t max_in_flight = 4;
    RetryPolicy retry = RetryPolicy::immediate();
};

struct NuggetDiagnostics {
    std::size_t batches = 0;
    std::size_t raw_nuggets = 0;
    std::size_t clusters = 0;
    std::size_t outliers = 0;
    std::vector<std::string> failed_batches;     // docids
    std::size_t failed_clusters = 0;             // members kept unmerged
    bool empty = false;                          // no nugget survived
};

struct NuggetBuild {
    std::vector<Nugget> nuggets;
    NuggetDiagnostics diagnostics;
};

/// Full ground-truth construction for one query: batch by document, extract,
/// union duplicates, cluster, merge clusters, label, cap.
inline NuggetBuild build_nuggets(const Query& query, const std::vector<QrelRecord>& qrels, const Corpus& corpus,
                                 const Judge& judge, const Embedder& embedder, const NuggetConfig& config = {})
{
    NuggetBuild out;
    auto batches = build_batches(query.qid, qrels, corpus, config.relevance_threshold);
    out.diagnostics.batches = batches.size();

    struct Extracted {
        std::vector<RawNugget> nuggets;
        bool failed = false;
    };
    auto extracted = parallel_map(batches.size(), config.max_in_flight, [&](std::size_t i) {
        try {
            return Extracted{extract_batch(query.qid, query.text, batches[i], judge, config.creator_max, config.retry),
                             false};
        } catch (const ParseError&) {
            return Extracted{{}, true};
        }
    });
    std::vector<RawNugget> raw;
    for (std::size_t i = 0; i < batches.size(); ++i) {
        if (extracted[i].failed)
            out.diagnostics.failed_batches.push_back(batches[i].docid);
        raw.insert(raw.end(), extracted[i].nuggets.begin(), extracted[i].nuggets.end());
    }
    out.diagnostics.raw_nuggets = raw.size();
    auto candidates = union_duplicates(raw);
    if (candidates.empty()) {
        out.diagnostics.empty = true;
        return out;
    }

    auto clustering = cluster_nuggets(candidates, embedder, config.clustering);
    out.diagnostics.clusters = clustering.clusters.size();
    out.diagnostics.outliers = clustering.outliers.size();

    struct Merged {
        std::vector<Nugget> nuggets;
        bool failed = false;
    };
    auto merged = parallel_map(clustering.clusters.size(), config.max_in_flight, [&](std::size_t c) {
        std::vector<Nugget> members;
        for (auto idx : clustering.clusters[c])
            members.push_back(candidates[idx]);
        try {
            return Merged{merge_cluster(query.text, members, judge, config.retry), false};
        } catch (const ParseError&) {
            return Merged{members, true};
        }
    });

    std::vector<Nugget> combined;
    for (auto& m : merged) {
        out.diagnostics.failed_clusters += m.failed ? 1 : 0;
        combined.insert(combined.end(), m.nuggets.begin(), m.nuggets.end());
    }
    for (auto idx : clustering.outliers)
        combined.push_back(candidates[idx]);

    // Identical texts produced by different clusters collapse into one.
    std::vector<Nugget> unique;
    std::map<std::string, std::size_t> seen;
    for (auto& n : combined) {
        auto [it, fresh] = seen.emplace(n.text, unique.size());
        if (fresh)
            unique.push_back(std::move(n));
        else
            unique[it->second].sources.insert(n.sources.begin(), n.sources.end());
    }

    out.nuggets = finalize_nuggets(query.text, std::move(unique), judge, config.cap, config.label_batch, config.retry);
    out.diagnostics.empty = out.nuggets.empty();
    return out;
}

// ---------------------------------------------------------------------------
// Nugget file: {qid, text, label, sources} per line.

inline void write_nuggets(std::ostream& out, const std::vector<Nugget>& nuggets)
{
    for (const auto& n : nuggets) {
        nlohmann::ordered_json j;
        j["qid"] = n.qid;
        j["text"] = n.text;
        j["label"] = to_string(n.label);
        j["sources"] = std::vector<std::string>(n.sources.begin(), n.sources.end());
        out << j.dump() << '\n';
    }
}

/// Nuggets grouped by qid, file order preserved within each query.
inline std::map<std::string, std::vector<Nugget>> read_nuggets(std::istream& in)
{
    std::map<std::string, std::vector<Nugget>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        auto j = detail::parse_json_line(line, line_no);
        Nugget n;
        n.qid = detail::required_string(j, "qid", line_no);
        n.text = detail::required_string(j, "text", line_no);
        n.label = nugget_label_from_string(detail::required_string(j, "label", line_no));
        auto s = j.find("sources");
        if (s == j.end() || !s->is_array() || s->empty())
            throw FormatError("line " + std::to_string(line_no) + ": nugget needs a nonempty sources array");
        for (const auto& d : *s)
            n.sources.insert(d.get<std::string>());
        if (n.text.empty())
            throw FormatError("line " + std::to_string(line_no) + ": empty nugget text");
        out[n.qid].push_back(std::move(n));
    }
    return out;
}

} // namespace ravine
