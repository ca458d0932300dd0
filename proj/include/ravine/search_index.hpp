#pragma once

#include "ravine/corpus.hpp"
#include "ravine/embedding.hpp"
#include "ravine/error.hpp"
#include "ravine/text.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace ravine {

enum class IndexKind : std::uint8_t { lexical = 0, dense = 1 };

struct IndexConfig {
    IndexKind kind = IndexKind::lexical;
    double bm25_k1 = 0.9;
    double bm25_b = 0.4;
    std::size_t embed_dim = 0; // dense only

    void validate() const
    {
        if (!(bm25_k1 > 0.0))
            throw Error("bm25 k1 must be > 0");
        if (!(bm25_b >= 0.0 && bm25_b <= 1.0))
            throw Error("bm25 b must lie in [0, 1]");
        if (kind == IndexKind::dense && embed_dim == 0)
            throw Error("dense index needs a positive embed_dim");
    }
};

struct SearchHit {
    std::string docid;
    double score = 0.0;
    std::string url;
    std::string title;
    std::string headings;
};

class EmptyQueryError : public Error {
public:
    EmptyQueryError() : Error("query is empty after tokenization") {}
};

/// Text indexed for a document: title, headings and body joined by newlines.
inline std::string indexed_text(const Document& d)
{
    return d.title + "\n" + d.headings + "\n" + d.body;
}

/// Shared by both index kinds: hits sorted by score descending, then docid.
inline void order_hits(std::vector<SearchHit>& hits)
{
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score)
            return a.score > b.score;
        return a.docid < b.docid;
    });
}

/// Read-only top-k retriever behind the web_search tool.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual IndexKind kind() const = 0;
    virtual std::size_t size() const = 0;
    virtual std::vector<SearchHit> search(const std::string& query, std::size_t k) const = 0;
    virtual void save(std::ostream& out) const = 0;
};

namespace detail {

inline constexpr char kIndexMagic[8] = {'R', 'A', 'V', 'N', 'I', 'D', 'X', '\0'};
inline constexpr std::uint32_t kIndexVersion = 1;

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

    void u64(std::uint64_t v)
    {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i)
            b[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(b, 8);
    }
    void u32(std::uint32_t v)
    {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i)
            b[i] = static_cast<unsigned char>(v >> (8 * i));
        raw(b, 4);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s)
    {
        u64(s.size());
        raw(s.data(), s.size());
    }

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    void raw(void* p, std::size_t n)
    {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_)
            throw FormatError("index file truncated");
    }
    std::uint64_t u64()
    {
        unsigned char b[8];
        raw(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i)
            v = (v << 8) | b[i];
        return v;
    }
    std::uint32_t u32()
    {
        unsigned char b[4];
        raw(b, 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | b[i];
        return v;
    }
    std::uint8_t u8()
    {
        std::uint8_t v = 0;
        raw(&v, 1);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str()
    {
        auto n = u64();
        if (n > (1ULL << 32))
            throw FormatError("index file corrupt: string length " + std::to_string(n));
        std::string s(n, '\0');
        if (n)
            raw(s.data(), n);
        return s;
    }

private:
    std::istream& in_;
};

struct DocEntry {
    std::string docid;
    std::string url;
    std::string title;
    std::string headings;
};

inline void write_doc_entries(BinaryWriter& w, const std::vector<DocEntry>& docs)
{
    w.u64(docs.size());
    for (const auto& d : docs) {
        w.str(d.docid);
        w.str(d.url);
        w.str(d.title);
        w.str(d.headings);
    }
}

inline std::vector<DocEntry> read_doc_entries(BinaryReader& r)
{
    std::vector<DocEntry> docs(r.u64());
    for (auto& d : docs) {
        d.docid = r.str();
        d.url = r.str();
        d.title = r.str();
        d.headings = r.str();
    }
    return docs;
}

inline std::vector<DocEntry> doc_entries(const Corpus& corpus)
{
    std::vector<DocEntry> out;
    out.reserve(corpus.size());
    for (const auto& d : corpus.documents())
        out.push_back({d.docid, d.url, d.title, d.headings});
    return out;
}

inline SearchHit make_hit(const DocEntry& d, double score)
{
    return {d.docid, score, d.url, d.title, d.headings};
}

} // namespace detail

/// BM25 inverted index. Scoring follows the Lucene formulation:
///   idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
///   w(t,d) = idf(t) * tf / (tf + k1 * (1 - b + b * |d| / avgdl))
/// summed over query token occurrences. Only documents sharing at least one
/// query term are returned.
class LexicalIndex final : public Retriever {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    static LexicalIndex build(const Corpus& corpus, const IndexConfig& config = {})
    {
        config.validate();
        if (corpus.empty())
            throw Error("cannot build an index over an empty corpus");
        LexicalIndex idx;
        idx.k1_ = config.bm25_k1;
        idx.b_ = config.bm25_b;
        idx.docs_ = detail::doc_entries(corpus);
        idx.lengths_.reserve(corpus.size());
        std::uint64_t total = 0;
        for (std::uint32_t i = 0; i < corpus.size(); ++i) {
            auto tokens = text::tokenize(indexed_text(corpus.documents()[i]));
            std::map<std::string, std::uint32_t> tf;
            for (auto& t : tokens)
                ++tf[t];
            for (auto& [term, n] : tf)
                idx.postings_[term].push_back({i, n});
            idx.lengths_.push_back(tokens.size());
            total += tokens.size();
        }
        idx.avgdl_ = static_cast<double>(total) / static_cast<double>(corpus.size());
        return idx;
    }

    static LexicalIndex load_body(detail::BinaryReader& r)
    {
        LexicalIndex idx;
        idx.k1_ = r.f64();
        idx.b_ = r.f64();
        idx.docs_ = detail::read_doc_entries(r);
        idx.lengths_.resize(idx.docs_.size());
        std::uint64_t total = 0;
        for (auto& len : idx.lengths_) {
            len = r.u64();
            total += len;
        }
        idx.avgdl_ = idx.docs_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(idx.docs_.size());
        auto terms = r.u64();
        for (std::uint64_t t = 0; t < terms; ++t) {
            auto term = r.str();
            auto& list = idx.postings_[term];
            list.resize(r.u64());
            for (auto& p : list) {
                p.doc = r.u32();
                p.tf = r.u32();
                if (p.doc >= idx.docs_.size())
                    throw FormatError("index file corrupt: posting doc out of range");
            }
        }
        return idx;
    }

    IndexKind kind() const override { return IndexKind::lexical; }
    std::size_t size() const override { return docs_.size(); }
    double k1() const { return k1_; }
    double b() const { return b_; }
    double avgdl() const { return avgdl_; }
    std::uint64_t doc_length(std::size_t i) const { return lengths_.at(i); }

    std::size_t document_frequency(const std::string& term) const
    {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

    /// Documents with at least one posting.
    std::size_t postings_bearing_documents() const
    {
        std::vector<bool> seen(docs_.size(), false);
        for (const auto& [term, list] : postings_)
            for (const auto& p : list)
                seen[p.doc] = true;
        return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
    }

    std::vector<SearchHit> search(const std::string& query, std::size_t k) const override
    {
        if (k == 0)
            throw Error("k must be >= 1");
        auto terms = text::tokenize(query);
        if (terms.empty())
            throw EmptyQueryError();
        const double n = static_cast<double>(docs_.size());
        std::vector<double> scores(docs_.size(), 0.0);
        std::vector<bool> matched(docs_.size(), false);
        for (const auto& term : terms) {
            auto it = postings_.find(term);
            if (it == postings_.end())
                continue;
            const double df = static_cast<double>(it->second.size());
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            for (const auto& p : it->second) {
                const double tf = p.tf;
                const double norm = k1_ * (1.0 - b_ + b_ * static_cast<double>(lengths_[p.doc]) / avgdl_);
                scores[p.doc] += idf * tf / (tf + norm);
                matched[p.doc] = true;
            }
        }
        std::vector<SearchHit> hits;
        for (std::size_t i = 0; i < docs_.size(); ++i)
            if (matched[i])
                hits.push_back(detail::make_hit(docs_[i], scores[i]));
        order_hits(hits);
        if (hits.size() > k)
            hits.resize(k);
        return hits;
    }

    void save(std::ostream& out) const override
    {
        detail::BinaryWriter w(out);
        w.raw(detail::kIndexMagic, sizeof detail::kIndexMagic);
        w.u32(detail::kIndexVersion);
        w.u8(static_cast<std::uint8_t>(IndexKind::lexical));
        w.f64(k1_);
        w.f64(b_);
        detail::write_doc_entries(w, docs_);
        for (auto len : lengths_)
            w.u64(len);
        w.u64(postings_.size());
        for (const auto& [term, list] : postings_) {
            w.str(term);
            w.u64(list.size());
            for (const auto& p : list) {
                w.u32(p.doc);
                w.u32(p.tf);
            }
        }
    }

private:
    double k1_ = 0.9;
    double b_ = 0.4;
    double avgdl_ = 0.0;
    std::vector<detail::DocEntry> docs_;
    std::vector<std::uint64_t> lengths_;
    std::map<std::string, std::vector<Posting>> postings_;
};

/// Exact inner-product retrieval over unit-norm document embeddings.
class DenseIndex final : public Retriever {
public:
    static DenseIndex build(const Corpus& corpus, std::shared_ptr<const Embedder> embedder, const IndexConfig& config)
    {
        config.validate();
        if (corpus.empty())
            throw Error("cannot build an index over an empty corpus");
        if (!embedder)
            throw Error("dense index needs an embedding provider");
        if (embedder->dim() != config.embed_dim)
            throw ProviderError("embedder dimension " + std::to_string(embedder->dim()) + " != configured "
                                + std::to_string(config.embed_dim));
        DenseIndex idx;
        idx.embedder_ = std::move(embedder);
        idx.dim_ = config.embed_dim;
        idx.docs_ = detail::doc_entries(corpus);
        std::vector<std::string> texts;
        texts.reserve(corpus.size());
        for (const auto& d : corpus.documents())
            texts.push_back(indexed_text(d));
        idx.vectors_ = idx.embedder_->embed_batch(texts);
        check_embeddings(idx.vectors_, texts.size(), idx.dim_);
        return idx;
    }

    static DenseIndex load_body(detail::BinaryReader& r, std::shared_ptr<const Embedder> embedder)
    {
        DenseIndex idx;
        idx.dim_ = r.u64();
        idx.docs_ = detail::read_doc_entries(r);
        idx.vectors_.assign(idx.docs_.size(), Embedding(idx.dim_));
        for (auto& v : idx.vectors_)
            for (auto& x : v)
                x = r.f64();
        if (!embedder)
            throw Error("dense index needs an embedding provider");
        if (embedder->dim() != idx.dim_)
            throw ProviderError("embedder dimension " + std::to_string(embedder->dim()) + " != index dimension "
                                + std::to_string(idx.dim_));
        idx.embedder_ = std::move(embedder);
        return idx;
    }

    IndexKind kind() const override { return IndexKind::dense; }
    std::size_t size() const override { return docs_.size(); }

    std::vector<SearchHit> search(const std::string& query, std::size_t k) const override
    {
        if (k == 0)
            throw Error("k must be >= 1");
        if (text::tokenize(query).empty())
            throw EmptyQueryError();
        auto q = embedder_->embed_batch({query});
        check_embeddings(q, 1, dim_);
        std::vector<SearchHit> hits;
        hits.reserve(docs_.size());
        for (std::size_t i = 0; i < docs_.size(); ++i)
            hits.push_back(detail::make_hit(docs_[i], dot(q[0], vectors_[i])));
        order_hits(hits);
        if (hits.size() > k)
            hits.resize(k);
        return hits;
    }

    void save(std::ostream& out) const override
    {
        detail::BinaryWriter w(out);
        w.raw(detail::kIndexMagic, sizeof detail::kIndexMagic);
        w.u32(detail::kIndexVersion);
        w.u8(static_cast<std::uint8_t>(IndexKind::dense));
        w.u64(dim_);
        detail::write_doc_entries(w, docs_);
        for (const auto& v : vectors_)
            for (double x : v)
                w.f64(x);
    }

private:
    std::shared_ptr<const Embedder> embedder_;
    std::size_t dim_ = 0;
    std::vector<detail::DocEntry> docs_;
    std::vector<Embedding> vectors_;
};

namespace detail {

inline IndexKind read_index_header(BinaryReader& r)
{
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kIndexMagic, sizeof magic) != 0)
        throw FormatError("not a ravine index file (bad magic)");
    auto version = r.u32();
    if (version != kIndexVersion)
        throw FormatError("index version " + std::to_string(version) + " unsupported (expected "
                          + std::to_string(kIndexVersion) + ")");
    auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(IndexKind::dense))
        throw FormatError("index file has unknown kind");
    return static_cast<IndexKind>(kind);
}

} // namespace detail

/// Reads an index written by Retriever::save. A dense index needs the same
/// embedder it was built with to embed queries.
inline std::unique_ptr<Retriever> load_index(std::istream& in, std::shared_ptr<const Embedder> embedder = nullptr)
{
    detail::BinaryReader r(in);
    if (detail::read_index_header(r) == IndexKind::lexical)
        return std::make_unique<LexicalIndex>(LexicalIndex::load_body(r));
    return std::make_unique<DenseIndex>(DenseIndex::load_body(r, std::move(embedder)));
}

inline void save_index(const Retriever& index, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot open '" + path + "' for writing");
    index.save(out);
    if (!out)
        throw Error("failed writing index to '" + path + "'");
}

inline std::unique_ptr<Retriever> load_index_file(const std::string& path,
                                                  std::shared_ptr<const Embedder> embedder = nullptr)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open index '" + path + "'");
    return load_index(in, std::move(embedder));
}

/// Kind recorded in an index file header.
inline IndexKind index_file_kind(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open index '" + path + "'");
    detail::BinaryReader r(in);
    return detail::read_index_header(r);
}

} // namespace ravine
