#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rolepatch/prompt.hpp"
#include "rolepatch/rng.hpp"

namespace rolepatch {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedRecord : DatasetError {
    using DatasetError::DatasetError;
};
struct InsufficientCandidates : DatasetError {
    using DatasetError::DatasetError;
};

struct CandidateDoc {
    std::string doc_id;
    std::string text;
    int label = 0; // graded relevance
};

// One evaluation unit: a query plus the documents a prompt is built from.
// Pointwise samples carry one evaluated document, pairwise exactly two of
// opposite relevance.
struct RankingSample {
    std::string query_id;
    std::string query;
    std::vector<CandidateDoc> docs;

    std::vector<std::string> doc_texts() const {
        std::vector<std::string> t;
        t.reserve(docs.size());
        for (const auto& d : docs) t.push_back(d.text);
        return t;
    }
    std::vector<int> doc_labels() const {
        std::vector<int> l;
        l.reserve(docs.size());
        for (const auto& d : docs) l.push_back(d.label);
        return l;
    }
};

// A parsed dataset file: JSON lines, one query per line with its candidate
// documents and binary sampling labels.
struct DatasetQuery {
    std::string query_id;
    std::string query;
    std::vector<CandidateDoc> docs;
};

inline std::vector<DatasetQuery> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("dataset file missing: " + path);
    std::vector<DatasetQuery> queries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw MalformedRecord("dataset line " + std::to_string(line_no) +
                                  ": " + e.what());
        }
        DatasetQuery q;
        try {
            q.query_id = j.at("query_id").is_string()
                             ? j.at("query_id").get<std::string>()
                             : std::to_string(j.at("query_id").get<long>());
            q.query = j.at("query").get<std::string>();
            for (const auto& d : j.at("docs")) {
                CandidateDoc doc;
                doc.doc_id = d.at("doc_id").is_string()
                                 ? d.at("doc_id").get<std::string>()
                                 : std::to_string(d.at("doc_id").get<long>());
                doc.text = d.at("text").get<std::string>();
                doc.label = d.at("label").get<int>();
                q.docs.push_back(std::move(doc));
            }
        } catch (const nlohmann::json::exception& e) {
            throw MalformedRecord("dataset line " + std::to_string(line_no) +
                                  ": " + e.what());
        }
        if (q.docs.empty())
            throw MalformedRecord("dataset line " + std::to_string(line_no) +
                                  ": query has no docs");
        queries.push_back(std::move(q));
    }
    return queries;
}

// Sampling protocol: draw `count` queries; for pointwise, the first half get
// one randomly drawn relevant document and the rest one irrelevant document;
// for pairwise every sample gets one of each, with Document A relevant in
// exactly half the samples. Deterministic per seed.
inline std::vector<RankingSample> sample_dataset(
    const std::vector<DatasetQuery>& queries, Mode mode, std::uint64_t seed,
    std::size_t count = 100) {
    if (queries.size() < count)
        throw InsufficientCandidates(
            "dataset has " + std::to_string(queries.size()) +
            " queries, need " + std::to_string(count));
    Rng rng(seed);
    std::vector<std::size_t> picked = rng.sample_indices(queries.size(), count);

    auto draw = [&](const DatasetQuery& q, bool relevant) -> CandidateDoc {
        std::vector<const CandidateDoc*> pool;
        for (const auto& d : q.docs)
            if ((d.label > 0) == relevant) pool.push_back(&d);
        if (pool.empty())
            throw InsufficientCandidates(
                "query " + q.query_id + " lacks " +
                (relevant ? "a relevant" : "an irrelevant") + " document");
        return *pool[rng.next_below(pool.size())];
    };

    std::vector<RankingSample> samples;
    samples.reserve(count);
    const std::size_t half = count / 2;
    for (std::size_t i = 0; i < picked.size(); ++i) {
        const DatasetQuery& q = queries[picked[i]];
        RankingSample s;
        s.query_id = q.query_id;
        s.query = q.query;
        const bool first_half = i < half;
        if (mode == Mode::Pointwise) {
            // 50 samples with relevant documents, 50 with irrelevant ones.
            s.docs.push_back(draw(q, first_half));
        } else {
            // Document A relevant in exactly half the samples, paired with a
            // counter-document of the opposite relevance.
            CandidateDoc a = draw(q, first_half);
            CandidateDoc b = draw(q, !first_half);
            s.docs.push_back(std::move(a));
            s.docs.push_back(std::move(b));
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

inline std::vector<RankingSample> ingest_dataset(const std::string& path,
                                                 Mode mode, std::uint64_t seed,
                                                 std::size_t count = 100) {
    return sample_dataset(load_dataset(path), mode, seed, count);
}

} // namespace rolepatch
