#pragma once

#include <cctype>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"

namespace palavra {

// One element of a text-encoder input: either a vocabulary token id or a raw
// word-space vector spliced in place of a token (a learned concept embedding).
struct SeqElement {
    bool is_raw = false;
    std::int32_t token = -1;
    Vec raw;

    static SeqElement from_token(std::int32_t t) {
        SeqElement e;
        e.token = t;
        return e;
    }
    static SeqElement from_raw(Vec v) {
        SeqElement e;
        e.is_raw = true;
        e.raw = std::move(v);
        return e;
    }
};

using TokenEmbeddingSequence = std::vector<SeqElement>;

// Input record for encode_image. The toy encoder consumes a planted-concept
// feature record (canonical caption + keys); the remote client consumes an
// image file reference.
struct ImageRecord {
    std::string caption;               // toy: canonical caption describing the content
    std::uint64_t noise_key = 0;       // toy: per-item noise stream id
    std::uint64_t appearance_key = 0;  // toy: instance-appearance direction id (0 = none)
    std::string path;                  // remote: image file reference
};

// Frozen dual encoder over a shared output space. Implementations are
// immutable after construction, deterministic, and return unit-norm vectors
// from both encode paths.
class FrozenEncoderPair {
public:
    virtual ~FrozenEncoderPair() = default;

    virtual std::size_t output_dim() const = 0;
    virtual std::size_t word_dim() const = 0;
    virtual std::size_t context_length() const = 0;
    virtual std::size_t vocab_size() const = 0;

    virtual std::vector<std::int32_t> tokenize(const std::string& text) const = 0;
    virtual Vec word_embedding(std::int32_t token) const = 0;

    virtual Vec encode_text(const TokenEmbeddingSequence& seq) const = 0;
    virtual Vec encode_image(const ImageRecord& img) const = 0;

    // Vector-Jacobian product of encode_text with respect to the raw vectors
    // in the sequence: given d(loss)/d(output), returns d(loss)/d(raw) for
    // each raw element, in sequence order. Encoders that cannot provide
    // gradients throw NumericError.
    virtual std::vector<Vec> encode_text_vjp(const TokenEmbeddingSequence& seq,
                                             const Vec& out_grad) const {
        (void)seq;
        (void)out_grad;
        throw NumericError("encode_text_vjp: this encoder is not differentiable");
    }

    // Digest of all frozen parameters; used to assert the model is untouched
    // by training and personalization.
    virtual std::string digest() const = 0;

    Vec encode_sentence(const std::string& text) const {
        TokenEmbeddingSequence seq;
        for (std::int32_t t : tokenize(text)) seq.push_back(SeqElement::from_token(t));
        return encode_text(seq);
    }

    void validate_sequence(const TokenEmbeddingSequence& seq) const {
        if (seq.empty()) throw PreconditionError("encode_text: empty sequence");
        if (seq.size() > context_length())
            throw ContextLengthError("sequence length " + std::to_string(seq.size()) +
                                     " exceeds context length " + std::to_string(context_length()));
        for (const SeqElement& e : seq) {
            if (e.is_raw) {
                check_dim(e.raw, word_dim(), "raw sequence element");
            } else if (e.token < 0 || static_cast<std::size_t>(e.token) >= vocab_size()) {
                throw VocabularyError("unknown token id " + std::to_string(e.token));
            }
        }
    }
};

// Splits a prompt template at its "[CONCEPT]" placeholder and splices a raw
// word-space vector where the placeholder sits.
inline TokenEmbeddingSequence instantiate_template(const std::string& tmpl, const Vec& concept_vec,
                                                   const FrozenEncoderPair& enc) {
    static const std::string kPlaceholder = "[CONCEPT]";
    std::size_t pos = tmpl.find(kPlaceholder);
    if (pos == std::string::npos)
        throw PreconditionError("template has no [CONCEPT] placeholder: " + tmpl);

    TokenEmbeddingSequence seq;
    for (std::int32_t t : enc.tokenize(tmpl.substr(0, pos))) seq.push_back(SeqElement::from_token(t));
    seq.push_back(SeqElement::from_raw(concept_vec));
    for (std::int32_t t : enc.tokenize(tmpl.substr(pos + kPlaceholder.size())))
        seq.push_back(SeqElement::from_token(t));
    return seq;
}

}  // namespace palavra
