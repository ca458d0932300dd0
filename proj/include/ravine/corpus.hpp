#pragma once

#include "ravine/error.hpp"
#include "ravine/text.hpp"

#include <json.hpp>

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ravine {

struct Document {
    std::string docid;
    std::string url;
    std::string title;
    std::string headings; // newline-joined
    std::string body;

    bool operator==(const Document&) const = default;
};

struct Segment {
    std::string segid;
    std::string docid;
    std::string text;
    // Code-point offsets into the parent body; absent when the record only
    // carried text.
    std::optional<std::size_t> start;
    std::optional<std::size_t> end;
};

struct QrelRecord {
    std::string qid;
    std::string segid;
    int grade = 0;
};

struct Query {
    std::string qid;
    std::string text;
};

/// Immutable once built; safe for concurrent readers.
class Corpus {
public:
    Corpus() = default;

    /// Adds a document and its segments. Throws on duplicate docid/url/segid.
    void add(Document doc, std::vector<Segment> segments = {})
    {
        if (doc.docid.empty())
            throw FormatError("document with empty docid");
        if (doc.url.empty())
            throw FormatError("document '" + doc.docid + "' has empty url");
        if (by_id_.contains(doc.docid))
            throw FormatError("duplicate docid '" + doc.docid + "'");
        std::string url{text::trim(doc.url)};
        if (by_url_.contains(url))
            throw FormatError("duplicate url '" + url + "' (docid '" + doc.docid + "')");

        const std::size_t index = docs_.size();
        std::vector<std::size_t> seg_indices;
        for (auto& seg : segments) {
            seg.docid = doc.docid;
            if (seg.segid.empty())
                throw FormatError("segment with empty segid in document '" + doc.docid + "'");
            if (by_segid_.contains(seg.segid))
                throw FormatError("duplicate segid '" + seg.segid + "'");
            resolve_segment_text(doc, seg);
            by_segid_.emplace(seg.segid, segments_.size());
            seg_indices.push_back(segments_.size());
            segments_.push_back(std::move(seg));
        }
        by_id_.emplace(doc.docid, index);
        by_url_.emplace(std::move(url), index);
        doc_segments_.push_back(std::move(seg_indices));
        docs_.push_back(std::move(doc));
    }

    std::size_t size() const noexcept { return docs_.size(); }
    bool empty() const noexcept { return docs_.empty(); }
    const std::vector<Document>& documents() const noexcept { return docs_; }
    const std::vector<Segment>& segments() const noexcept { return segments_; }

    const Document* find(std::string_view docid) const
    {
        auto it = by_id_.find(std::string(docid));
        return it == by_id_.end() ? nullptr : &docs_[it->second];
    }

    /// Exact match after trimming surrounding whitespace; no other normalization.
    const Document* lookup_by_url(std::string_view url) const
    {
        auto it = by_url_.find(std::string(text::trim(url)));
        return it == by_url_.end() ? nullptr : &docs_[it->second];
    }

    const Segment* find_segment(std::string_view segid) const
    {
        auto it = by_segid_.find(std::string(segid));
        return it == by_segid_.end() ? nullptr : &segments_[it->second];
    }

    /// Position of a document in ingestion order.
    std::optional<std::size_t> position(std::string_view docid) const
    {
        auto it = by_id_.find(std::string(docid));
        if (it == by_id_.end())
            return std::nullopt;
        return it->second;
    }

    /// Segments of a document in corpus order.
    std::vector<const Segment*> segments_of(std::string_view docid) const
    {
        std::vector<const Segment*> out;
        auto pos = position(docid);
        if (!pos)
            return out;
        for (auto i : doc_segments_[*pos])
            out.push_back(&segments_[i]);
        return out;
    }

    /// Order of a segment within its document, or npos.
    std::size_t segment_rank(std::string_view segid) const
    {
        auto it = by_segid_.find(std::string(segid));
        if (it == by_segid_.end())
            return std::string_view::npos;
        const auto& owner = doc_segments_[by_id_.at(segments_[it->second].docid)];
        for (std::size_t i = 0; i < owner.size(); ++i)
            if (owner[i] == it->second)
                return i;
        return std::string_view::npos;
    }

private:
    static void resolve_segment_text(const Document& doc, Segment& seg)
    {
        if (seg.start.has_value() != seg.end.has_value())
            throw FormatError("segment '" + seg.segid + "' has only one of start/end");
        if (!seg.start)
            return;
        if (*seg.start > *seg.end)
            throw FormatError("segment '" + seg.segid + "' has start > end");
        auto from = text::byte_offset_of(doc.body, *seg.start);
        auto to = text::byte_offset_of(doc.body, *seg.end);
        if (from == std::string_view::npos || to == std::string_view::npos)
            throw FormatError("segment '" + seg.segid + "' span exceeds body of '" + doc.docid + "'");
        std::string slice = doc.body.substr(from, to - from);
        if (!seg.text.empty() && seg.text != slice)
            throw FormatError("segment '" + seg.segid + "' text does not match body slice");
        seg.text = std::move(slice);
    }

    std::vector<Document> docs_;
    std::vector<Segment> segments_;
    std::vector<std::vector<std::size_t>> doc_segments_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> by_url_;
    std::unordered_map<std::string, std::size_t> by_segid_;
};

namespace detail {

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line)
{
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        throw FormatError("line " + std::to_string(line) + ": missing required string field '" + key + "'");
    return it->get<std::string>();
}

inline nlohmann::json parse_json_line(const std::string& line, std::size_t line_no)
{
    try {
        auto obj = nlohmann::json::parse(line);
        if (!obj.is_object())
            throw FormatError("line " + std::to_string(line_no) + ": expected a JSON object");
        return obj;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
}

} // namespace detail

/// Reads the JSONL corpus format: docid, url, title, headings, body and an
/// optional segments array of {segid, start, end} (or {segid, text}).
inline Corpus ingest_corpus(std::istream& in)
{
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        auto obj = detail::parse_json_line(line, line_no);
        Document doc{
            detail::required_string(obj, "docid", line_no),
            detail::required_string(obj, "url", line_no),
            detail::required_string(obj, "title", line_no),
            detail::required_string(obj, "headings", line_no),
            detail::required_string(obj, "body", line_no),
        };
        std::vector<Segment> segments;
        if (auto it = obj.find("segments"); it != obj.end()) {
            if (!it->is_array())
                throw FormatError("line " + std::to_string(line_no) + ": 'segments' must be an array");
            for (const auto& s : *it) {
                if (!s.is_object())
                    throw FormatError("line " + std::to_string(line_no) + ": segment must be an object");
                Segment seg;
                seg.segid = detail::required_string(s, "segid", line_no);
                if (s.contains("start") || s.contains("end")) {
                    if (!s.value("start", nlohmann::json()).is_number_unsigned()
                        || !s.value("end", nlohmann::json()).is_number_unsigned())
                        throw FormatError("line " + std::to_string(line_no) + ": segment '" + seg.segid
                                          + "' needs non-negative integer start and end");
                    seg.start = s["start"].get<std::size_t>();
                    seg.end = s["end"].get<std::size_t>();
                }
                if (auto t = s.find("text"); t != s.end() && t->is_string())
                    seg.text = t->get<std::string>();
                segments.push_back(std::move(seg));
            }
        }
        try {
            corpus.add(std::move(doc), std::move(segments));
        } catch (const FormatError& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return corpus;
}

inline nlohmann::json to_json(const Document& d, const std::vector<const Segment*>& segments = {})
{
    nlohmann::json j = {{"docid", d.docid}, {"url", d.url}, {"title", d.title},
                        {"headings", d.headings}, {"body", d.body}};
    if (!segments.empty()) {
        auto arr = nlohmann::json::array();
        for (const auto* s : segments) {
            nlohmann::json sj = {{"segid", s->segid}};
            if (s->start) {
                sj["start"] = *s->start;
                sj["end"] = *s->end;
            } else {
                sj["text"] = s->text;
            }
            arr.push_back(std::move(sj));
        }
        j["segments"] = std::move(arr);
    }
    return j;
}

struct QrelSet {
    std::vector<QrelRecord> records;
    std::size_t overwritten = 0; // later duplicates that replaced earlier ones
};

/// TREC format, one `qid 0 segid grade` per line. Duplicate (qid, segid)
/// pairs keep the later grade and are counted in `overwritten`.
inline QrelSet parse_qrels(std::istream& in)
{
    QrelSet out;
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        std::istringstream fields(line);
        std::string qid, iter, segid, grade_text, extra;
        if (!(fields >> qid >> iter >> segid >> grade_text) || (fields >> extra))
            throw FormatError("qrels line " + std::to_string(line_no) + ": expected 'qid 0 segid grade'");
        int grade = 0;
        try {
            std::size_t used = 0;
            grade = std::stoi(grade_text, &used);
            if (used != grade_text.size())
                throw std::invalid_argument(grade_text);
        } catch (const std::exception&) {
            throw FormatError("qrels line " + std::to_string(line_no) + ": grade '" + grade_text
                              + "' is not an integer");
        }
        if (grade < 0)
            throw FormatError("qrels line " + std::to_string(line_no) + ": negative grade");
        auto key = std::make_pair(qid, segid);
        if (auto it = seen.find(key); it != seen.end()) {
            out.records[it->second].grade = grade;
            ++out.overwritten;
            continue;
        }
        seen.emplace(std::move(key), out.records.size());
        out.records.push_back({std::move(qid), std::move(segid), grade});
    }
    return out;
}

/// One {qid, text} object per line; qids must be unique.
inline std::vector<Query> parse_queries(std::istream& in)
{
    std::vector<Query> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty())
            continue;
        auto obj = detail::parse_json_line(line, line_no);
        Query q{detail::required_string(obj, "qid", line_no), detail::required_string(obj, "text", line_no)};
        if (!ids.insert(q.qid).second)
            throw FormatError("line " + std::to_string(line_no) + ": duplicate qid '" + q.qid + "'");
        out.push_back(std::move(q));
    }
    return out;
}

using RelevanceMap = std::map<std::string, std::set<std::string>>;

/// Rel(q): documents with at least one segment graded >= threshold for q.
/// Every qid present in the qrels gets an entry, possibly empty.
inline RelevanceMap project_qrels_to_documents(const std::vector<QrelRecord>& qrels, const Corpus& corpus,
                                               int threshold = 1)
{
    RelevanceMap rel;
    std::vector<std::string> missing;
    for (const auto& r : qrels) {
        const Segment* seg = corpus.find_segment(r.segid);
        if (!seg) {
            missing.push_back(r.segid);
            continue;
        }
        auto& docs = rel[r.qid];
        if (r.grade >= threshold)
            docs.insert(seg->docid);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i)
            list += (i ? ", " : "") + missing[i];
        if (missing.size() > 20)
            list += ", ...";
        throw FormatError(std::to_string(missing.size()) + " qrels segment(s) not in corpus: " + list);
    }
    return rel;
}

} // namespace ravine
