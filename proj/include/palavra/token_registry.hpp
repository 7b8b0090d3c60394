#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "palavra/digest.hpp"
#include "palavra/encoder.hpp"
#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"
#include "palavra/tensor_archive.hpp"

namespace palavra {

// A learned concept token: a bracketed symbol, its concept-type string and
// the learned word embedding, plus how it was produced.
struct PersonalizedToken {
    struct Provenance {
        std::string model_digest;
        std::string config_digest;
        std::size_t shots = 0;
        std::uint64_t seed = 0;
    };

    std::string symbol;  // e.g. "[MY-SKIRT]"
    std::string type_string;
    Vec embedding;
    Provenance provenance;
};

// The few-shot example set of one concept, as cached image embeddings.
struct ConceptExampleSet {
    std::string symbol;
    std::vector<Vec> embeddings;
};

inline bool is_valid_symbol(const std::string& s) {
    if (s.size() < 3 || s.front() != '[' || s.back() != ']') return false;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        char c = s[i];
        if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-')) return false;
    }
    return true;
}

// Add-only registry of personalized tokens for one session.
class TokenRegistry {
public:
    void register_token(PersonalizedToken token) {
        if (!is_valid_symbol(token.symbol))
            throw VocabularyError("invalid concept symbol '" + token.symbol +
                                  "' (expected [A-Z0-9-]+ in brackets)");
        if (tokens_.count(token.symbol))
            throw VocabularyError("symbol '" + token.symbol + "' is already registered");
        tokens_.emplace(token.symbol, std::move(token));
    }

    bool contains(const std::string& symbol) const { return tokens_.count(symbol) != 0; }

    const PersonalizedToken& get(const std::string& symbol) const {
        auto it = tokens_.find(symbol);
        if (it == tokens_.end())
            throw VocabularyError("unregistered concept symbol '" + symbol + "'");
        return it->second;
    }

    std::size_t size() const { return tokens_.size(); }

    const std::map<std::string, PersonalizedToken>& tokens() const { return tokens_; }

    // Token file: tensor archive with one tensor per symbol plus a metadata
    // record per token. Symbols are stored in sorted order, so identical
    // registries serialize to identical bytes.
    TensorArchive to_archive() const {
        TensorArchive ar;
        std::ostringstream meta;
        meta << "{\"tokens\":{";
        bool first = true;
        for (const auto& [symbol, token] : tokens_) {
            ar.add_f64(symbol, {static_cast<std::uint32_t>(token.embedding.size())},
                       token.embedding);
            if (!first) meta << ",";
            first = false;
            meta << "\"" << symbol << "\":{\"config_digest\":\"" << token.provenance.config_digest
                 << "\",\"model_digest\":\"" << token.provenance.model_digest
                 << "\",\"seed\":" << token.provenance.seed
                 << ",\"shots\":" << token.provenance.shots << ",\"type\":\"" << token.type_string
                 << "\"}";
        }
        meta << "}}";
        ar.set_metadata(meta.str());
        return ar;
    }

    void save(const std::string& path) const { to_archive().save(path); }

    // Embeddings reload at float32 precision; provenance strings are parsed
    // back from the metadata record.
    static TokenRegistry load(const std::string& path) {
        TensorArchive ar = TensorArchive::load(path);
        TokenRegistry reg;
        const std::string& meta = ar.metadata();
        for (const std::string& symbol : ar.names()) {
            PersonalizedToken t;
            t.symbol = symbol;
            t.embedding = ar.get_f64(symbol);
            auto grab = [&](const std::string& key) -> std::string {
                std::string want = "\"" + symbol + "\":{";
                std::size_t at = meta.find(want);
                if (at == std::string::npos) return "";
                std::size_t k = meta.find("\"" + key + "\":", at);
                if (k == std::string::npos) return "";
                k += key.size() + 3;
                if (k < meta.size() && meta[k] == '"') {
                    std::size_t end = meta.find('"', k + 1);
                    return meta.substr(k + 1, end - k - 1);
                }
                std::size_t end = meta.find_first_of(",}", k);
                return meta.substr(k, end - k);
            };
            t.type_string = grab("type");
            t.provenance.model_digest = grab("model_digest");
            t.provenance.config_digest = grab("config_digest");
            std::string shots = grab("shots");
            std::string seed = grab("seed");
            if (!shots.empty()) t.provenance.shots = static_cast<std::size_t>(std::stoull(shots));
            if (!seed.empty()) t.provenance.seed = std::stoull(seed);
            reg.register_token(std::move(t));
        }
        return reg;
    }

private:
    std::map<std::string, PersonalizedToken> tokens_;
};

// Splices registered concept symbols into a token-embedding sequence: each
// symbol becomes its raw learned embedding immediately followed by the token
// ids of its concept-type string; all other text tokenizes normally. A
// sentence without symbols expands to exactly the plain tokenization.
inline TokenEmbeddingSequence expand_query(const std::string& sentence, const TokenRegistry& reg,
                                           const FrozenEncoderPair& enc) {
    TokenEmbeddingSequence seq;
    auto add_text = [&](const std::string& text) {
        for (std::int32_t t : enc.tokenize(text)) seq.push_back(SeqElement::from_token(t));
    };

    std::size_t pos = 0;
    std::size_t text_start = 0;
    while (pos < sentence.size()) {
        if (sentence[pos] != '[') {
            ++pos;
            continue;
        }
        std::size_t close = sentence.find(']', pos + 1);
        if (close == std::string::npos) break;
        std::string candidate = sentence.substr(pos, close - pos + 1);
        if (!is_valid_symbol(candidate)) {
            ++pos;
            continue;
        }
        const PersonalizedToken& token = reg.get(candidate);  // unregistered -> VocabularyError
        add_text(sentence.substr(text_start, pos - text_start));
        check_dim(token.embedding, enc.word_dim(), "token embedding");
        seq.push_back(SeqElement::from_raw(token.embedding));
        add_text(token.type_string);
        pos = close + 1;
        text_start = pos;
    }
    add_text(sentence.substr(text_start));

    if (seq.empty()) throw PreconditionError("expand_query: sentence expands to an empty sequence");
    if (seq.size() > enc.context_length())
        throw ContextLengthError("expanded query length " + std::to_string(seq.size()) +
                                 " exceeds context length " + std::to_string(enc.context_length()));
    return seq;
}

inline Vec encode_query(const std::string& sentence, const TokenRegistry& reg,
                        const FrozenEncoderPair& enc) {
    return enc.encode_text(expand_query(sentence, reg, enc));
}

}  // namespace palavra
