#pragma once

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "palavra/encoder.hpp"
#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"
#include "palavra/rng.hpp"

namespace palavra {

// Sentence templates used to query a concept code during training and
// personalization. Every template carries the "[CONCEPT]" placeholder
// exactly once.
struct PromptBank {
    std::vector<std::string> templates;

    static PromptBank default_bank() {
        PromptBank bank;
        bank.templates = {
            "This is a photo of a [CONCEPT]",
            "This photo contains a [CONCEPT]",
            "A photo of a [CONCEPT]",
            "This is an illustrations of a [CONCEPT]",
            "This illustrations contains a [CONCEPT]",
            "An illustrations of a [CONCEPT]",
            "This is a sketch of a [CONCEPT]",
            "This sketch contains a [CONCEPT]",
            "A sketch of a [CONCEPT]",
            "This is a diagram of a [CONCEPT]",
            "This diagram contains a [CONCEPT]",
            "A diagram of a [CONCEPT]",
            "A [CONCEPT]",
            "We see a [CONCEPT]",
            "[CONCEPT]",
            "We see a [CONCEPT] in this photo",
            "We see a [CONCEPT] in this image",
            "We see a [CONCEPT] in this illustration",
            "We see a [CONCEPT] photo",
            "We see a [CONCEPT] image",
            "We see a [CONCEPT] illustration",
            "[CONCEPT] photo",
            "[CONCEPT] image",
            "[CONCEPT] illustration",
        };
        return bank;
    }

    void validate() const {
        static const std::string kPlaceholder = "[CONCEPT]";
        for (const std::string& t : templates) {
            std::size_t first = t.find(kPlaceholder);
            if (first == std::string::npos)
                throw InputError("template missing [CONCEPT] placeholder: " + t);
            if (t.find(kPlaceholder, first + 1) != std::string::npos)
                throw InputError("template has multiple [CONCEPT] placeholders: " + t);
        }
    }

    const std::string& sample(Rng& rng) const {
        if (templates.empty()) throw PreconditionError("prompt bank is empty");
        return templates[static_cast<std::size_t>(rng.uniform_int(templates.size()))];
    }
};

// A list of concept-type strings with their cached unit-norm text embeddings,
// index-aligned.
struct TypeVocabulary {
    std::vector<std::string> types;
    std::vector<Vec> type_embeddings;

    std::size_t size() const { return types.size(); }

    void build_embeddings(const FrozenEncoderPair& enc) {
        type_embeddings.clear();
        type_embeddings.reserve(types.size());
        for (const std::string& t : types) type_embeddings.push_back(enc.encode_sentence(t));
    }

    // File format: UTF-8, one type per line, no duplicates. Duplicate lines
    // are rejected with both line numbers.
    static TypeVocabulary load(const std::string& path, const FrozenEncoderPair& enc) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open vocabulary file: " + path);
        TypeVocabulary vocab;
        std::set<std::string> seen;
        std::vector<std::size_t> first_line;
        std::string line;
        std::size_t line_no = 0;
        std::vector<std::pair<std::string, std::size_t>> first_seen;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            for (const auto& [prev, prev_line] : first_seen) {
                if (prev == line)
                    throw DataError("vocabulary file " + path + ": duplicate type '" + line +
                                    "' at line " + std::to_string(line_no) + " (first at line " +
                                    std::to_string(prev_line) + ")");
            }
            first_seen.emplace_back(line, line_no);
            vocab.types.push_back(line);
        }
        if (vocab.types.empty()) throw DataError("vocabulary file is empty: " + path);
        vocab.build_embeddings(enc);
        return vocab;
    }
};

// Most similar vocabulary type to src_type by text-embedding cosine; ties
// break toward the lowest vocabulary index.
inline std::size_t nearest_type_index(const std::string& src_type, const TypeVocabulary& vocab,
                                      const FrozenEncoderPair& enc) {
    if (vocab.types.empty()) throw PreconditionError("nearest_type: empty vocabulary");
    if (vocab.type_embeddings.size() != vocab.types.size())
        throw PreconditionError("nearest_type: vocabulary embeddings not built");
    Vec q = enc.encode_sentence(src_type);
    std::size_t best = 0;
    double best_sim = cosine(q, vocab.type_embeddings[0]);
    for (std::size_t i = 1; i < vocab.types.size(); ++i) {
        double sim = cosine(q, vocab.type_embeddings[i]);
        if (sim > best_sim) {
            best_sim = sim;
            best = i;
        }
    }
    return best;
}

inline std::string nearest_type(const std::string& src_type, const TypeVocabulary& vocab,
                                const FrozenEncoderPair& enc) {
    return vocab.types[nearest_type_index(src_type, vocab, enc)];
}

// Uniform draw among the k most similar vocabulary types. k = 1 reduces to
// nearest_type and is the default everywhere.
inline std::string sample_replacement_type(const std::string& src_type, const TypeVocabulary& vocab,
                                           const FrozenEncoderPair& enc, std::size_t top_k,
                                           Rng& rng) {
    if (top_k <= 1) return nearest_type(src_type, vocab, enc);
    if (vocab.type_embeddings.size() != vocab.types.size())
        throw PreconditionError("sample_replacement_type: vocabulary embeddings not built");
    Vec q = enc.encode_sentence(src_type);
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(vocab.types.size());
    for (std::size_t i = 0; i < vocab.types.size(); ++i)
        scored.emplace_back(cosine(q, vocab.type_embeddings[i]), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::size_t k = std::min(top_k, scored.size());
    return vocab.types[scored[static_cast<std::size_t>(rng.uniform_int(k))].second];
}

namespace detail {

inline bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

inline bool ci_equal_at(const std::string& hay, std::size_t pos, const std::string& needle) {
    if (pos + needle.size() > hay.size()) return false;
    for (std::size_t i = 0; i < needle.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(hay[pos + i])) !=
            std::tolower(static_cast<unsigned char>(needle[i])))
            return false;
    }
    return true;
}

}  // namespace detail

// Replaces the first whole-word, case-insensitive occurrence of src_type in
// the caption with the replacement (inserted as given). Throws
// AugmentationMissError when the caption has no such occurrence; callers skip
// the caption.
inline std::string augment_caption(const std::string& caption, const std::string& src_type,
                                   const std::string& replacement) {
    if (src_type.empty()) throw PreconditionError("augment_caption: empty source type");
    for (std::size_t pos = 0; pos + src_type.size() <= caption.size(); ++pos) {
        if (!detail::ci_equal_at(caption, pos, src_type)) continue;
        bool left_ok = pos == 0 || !detail::word_char(caption[pos - 1]);
        std::size_t end = pos + src_type.size();
        bool right_ok = end == caption.size() || !detail::word_char(caption[end]);
        if (left_ok && right_ok)
            return caption.substr(0, pos) + replacement + caption.substr(end);
    }
    throw AugmentationMissError("caption has no whole-word occurrence of '" + src_type +
                                "': " + caption);
}

}  // namespace palavra
