#pragma once

#include "ravine/error.hpp"
#include "ravine/text.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace ravine {

using Embedding = std::vector<double>;

/// Text embedding provider. Implementations return one unit-norm vector per
/// input, in input order, all of dimension dim().
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) const = 0;
};

inline double dot(const Embedding& a, const Embedding& b)
{
    double s = 0.0;
    const std::size_t n = a.size() < b.size() ? a.size() : b.size();
    for (std::size_t i = 0; i < n; ++i)
        s += a[i] * b[i];
    return s;
}

inline void normalize_l2(Embedding& v)
{
    double norm = std::sqrt(dot(v, v));
    if (norm == 0.0)
        throw ProviderError("cannot normalize a zero embedding");
    for (auto& x : v)
        x /= norm;
}

/// Checks the batch contract shared by every embedder.
inline void check_embeddings(const std::vector<Embedding>& vectors, std::size_t expected_count, std::size_t dim)
{
    if (vectors.size() != expected_count)
        throw ProviderError("embedder returned " + std::to_string(vectors.size()) + " vectors for "
                            + std::to_string(expected_count) + " inputs");
    for (const auto& v : vectors) {
        if (v.size() != dim)
            throw ProviderError("embedding dimension " + std::to_string(v.size()) + " != expected "
                                + std::to_string(dim));
        if (std::abs(std::sqrt(dot(v, v)) - 1.0) > 1e-6)
            throw ProviderError("embedding is not unit-norm");
    }
}

/// Deterministic bag-of-words embedder: each token is hashed (FNV-1a) onto
/// one axis, counts are accumulated and the vector is L2-normalized.
class MockEmbedder final : public Embedder {
public:
    explicit MockEmbedder(std::size_t dim = 4096) : dim_(dim)
    {
        if (dim_ < 2)
            throw Error("mock embedder needs dim >= 2");
    }

    std::size_t dim() const override { return dim_; }

    std::size_t axis_of(const std::string& token) const
    {
        return static_cast<std::size_t>(text::fnv1a(token) % dim_);
    }

    std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) const override
    {
        if (texts.empty())
            throw ProviderError("embed_batch called with an empty list");
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            Embedding v(dim_, 0.0);
            auto tokens = text::tokenize(t);
            if (tokens.empty())
                tokens.emplace_back(); // empty text maps to the hash of ""
            for (const auto& tok : tokens)
                v[axis_of(tok)] += 1.0;
            normalize_l2(v);
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::size_t dim_;
};

} // namespace ravine
