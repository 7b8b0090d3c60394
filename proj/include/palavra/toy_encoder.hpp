#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palavra/digest.hpp"
#include "palavra/encoder.hpp"
#include "palavra/linalg.hpp"
#include "palavra/rng.hpp"

namespace palavra {

// Fully specifies a toy encoder; equal specs produce functionally identical
// encoders. The toy encoder exists so that ground-truth word embeddings are
// knowable and the whole pipeline can run at desk scale.
//
// Text side:  mean of the word vectors of the sequence, pushed through a
//             fixed random row-orthonormal projection into the output space,
//             then normalized.
// Image side: text embedding of the item's canonical caption, shifted by a
//             fixed gap direction scaled by modality_gap, plus Gaussian
//             noise, then normalized. With modality_gap = 0 and
//             noise_scale = 0 the two modalities coincide exactly.
//
// modality_gap defaults to 0; the toy benchmark enables it to plant the
// systematic text/image offset that real dual encoders exhibit, which is
// what the alignment matrix is for.
struct ToyEncoderSpec {
    std::uint64_t seed = 0;
    std::size_t vocab_size = 32768;
    std::size_t word_dim = 64;
    std::size_t output_dim = 32;
    double noise_scale = 0.0;    // expected L2 perturbation before renormalization
    double modality_gap = 0.0;   // L2 offset applied to every image embedding
    // L2 mass of the per-instance appearance direction mixed into an image
    // embedding when its record carries an appearance_key. Models the visual
    // specifics of an instance that no vocabulary word can express; 0
    // disables it (an image is then fully described by its caption)
    double appearance_scale = 0.0;
    std::size_t context_length = 77;
};

class ToyEncoder final : public FrozenEncoderPair {
public:
    explicit ToyEncoder(const ToyEncoderSpec& spec) : spec_(spec) {
        if (spec.vocab_size == 0 || spec.word_dim == 0 || spec.output_dim == 0)
            throw InputError("toy encoder: dims must be positive");
        if (spec.word_dim < spec.output_dim)
            throw InputError("toy encoder: word_dim must be >= output_dim for a row-orthonormal projection");
        if (spec.noise_scale < 0.0 || spec.modality_gap < 0.0 || spec.appearance_scale < 0.0)
            throw InputError("toy encoder: scale parameters must be non-negative");

        Rng rng(mix64(spec.seed ^ 0x70795f656e636f64ULL));

        double inv_sqrt_wd = 1.0 / std::sqrt(static_cast<double>(spec.word_dim));
        word_table_.resize(spec.vocab_size);
        for (Vec& row : word_table_) {
            row.resize(spec.word_dim);
            for (double& x : row) x = rng.gaussian() * inv_sqrt_wd;
        }

        proj_ = random_row_orthonormal(spec.output_dim, spec.word_dim, rng);

        gap_dir_.resize(spec.output_dim);
        for (double& x : gap_dir_) x = rng.gaussian();
        gap_dir_ = normalized(gap_dir_);

        // With a modality gap, the gap direction is unreachable from the
        // text side (the two modalities occupy distinct regions of the
        // shared space, not just shifted copies).
        if (spec.modality_gap > 0.0) {
            for (std::size_t c = 0; c < proj_.cols; ++c) {
                double d = 0.0;
                for (std::size_t r = 0; r < proj_.rows; ++r) d += proj_.at(r, c) * gap_dir_[r];
                for (std::size_t r = 0; r < proj_.rows; ++r) proj_.at(r, c) -= d * gap_dir_[r];
            }
        }
    }

    std::size_t output_dim() const override { return spec_.output_dim; }
    std::size_t word_dim() const override { return spec_.word_dim; }
    std::size_t context_length() const override { return spec_.context_length; }
    std::size_t vocab_size() const override { return spec_.vocab_size; }
    const ToyEncoderSpec& spec() const { return spec_; }

    // Whitespace split, lowercased, punctuation stripped at word edges, then
    // FNV-hashed into the vocabulary. Total: every word maps to some id.
    std::vector<std::int32_t> tokenize(const std::string& text) const override {
        std::vector<std::int32_t> ids;
        std::string word;
        auto flush = [&]() {
            if (word.empty()) return;
            ids.push_back(static_cast<std::int32_t>(fnv64(word) % spec_.vocab_size));
            word.clear();
        };
        for (char ch : text) {
            unsigned char c = static_cast<unsigned char>(ch);
            if (std::isspace(c)) {
                flush();
            } else if (std::isalnum(c) || ch == '<' || ch == '>' || ch == '-' || ch == '_' ||
                       ch == '[' || ch == ']') {
                word.push_back(static_cast<char>(std::tolower(c)));
            }
            // other punctuation is dropped
        }
        flush();
        return ids;
    }

    Vec word_embedding(std::int32_t token) const override {
        if (token < 0 || static_cast<std::size_t>(token) >= spec_.vocab_size)
            throw VocabularyError("unknown token id " + std::to_string(token));
        return word_table_[static_cast<std::size_t>(token)];
    }

    Vec encode_text(const TokenEmbeddingSequence& seq) const override {
        validate_sequence(seq);
        Vec m(spec_.word_dim, 0.0);
        for (const SeqElement& e : seq) {
            const Vec& w = e.is_raw ? e.raw : word_table_[static_cast<std::size_t>(e.token)];
            axpy(1.0, w, m);
        }
        for (double& x : m) x /= static_cast<double>(seq.size());
        Vec y = matvec(proj_, m);
        return normalized(y);
    }

    std::vector<Vec> encode_text_vjp(const TokenEmbeddingSequence& seq,
                                     const Vec& out_grad) const override {
        validate_sequence(seq);
        check_dim(out_grad, spec_.output_dim, "encode_text_vjp out_grad");

        Vec m(spec_.word_dim, 0.0);
        for (const SeqElement& e : seq) {
            const Vec& w = e.is_raw ? e.raw : word_table_[static_cast<std::size_t>(e.token)];
            axpy(1.0, w, m);
        }
        for (double& x : m) x /= static_cast<double>(seq.size());
        Vec y = matvec(proj_, m);
        double ny = norm(y);
        if (!(ny > 0.0)) throw NumericError("encode_text_vjp: zero-norm projection");
        Vec out = scaled(y, 1.0 / ny);

        // d normalize(y)/dy applied to out_grad: (g - (g.out) out) / |y|
        double g_dot_out = dot(out_grad, out);
        Vec gy(out_grad.size());
        for (std::size_t i = 0; i < gy.size(); ++i)
            gy[i] = (out_grad[i] - g_dot_out * out[i]) / ny;

        Vec base = matvec_t(proj_, gy);
        for (double& x : base) x /= static_cast<double>(seq.size());

        std::vector<Vec> grads;
        for (const SeqElement& e : seq)
            if (e.is_raw) grads.push_back(base);
        return grads;
    }

    Vec encode_image(const ImageRecord& img) const override {
        if (img.caption.empty())
            throw InputError("toy encode_image: record has no canonical caption");
        std::vector<std::int32_t> ids = tokenize(img.caption);
        if (ids.empty()) throw InputError("toy encode_image: caption tokenizes to nothing");
        TokenEmbeddingSequence seq;
        for (std::int32_t t : ids) seq.push_back(SeqElement::from_token(t));
        Vec t = encode_text(seq);

        if (spec_.modality_gap > 0.0) axpy(spec_.modality_gap, gap_dir_, t);
        if (spec_.appearance_scale > 0.0 && img.appearance_key != 0)
            axpy(spec_.appearance_scale, appearance_direction(img.appearance_key), t);
        if (spec_.noise_scale > 0.0) {
            Rng noise(mix64(spec_.seed * 0x9e3779b97f4a7c15ULL ^ mix64(img.noise_key)));
            double s = spec_.noise_scale / std::sqrt(static_cast<double>(spec_.output_dim));
            for (double& x : t) x += s * noise.gaussian();
        }
        return normalized(t);
    }

    std::string digest() const override {
        Fnv64 f;
        f.update_u64(spec_.seed);
        f.update_u64(spec_.vocab_size);
        f.update_u64(spec_.word_dim);
        f.update_u64(spec_.output_dim);
        f.update(&spec_.noise_scale, sizeof(double));
        f.update(&spec_.modality_gap, sizeof(double));
        f.update(&spec_.appearance_scale, sizeof(double));

        for (const Vec& row : word_table_) f.update(row.data(), row.size() * sizeof(double));
        f.update(proj_.a.data(), proj_.a.size() * sizeof(double));
        f.update(gap_dir_.data(), gap_dir_.size() * sizeof(double));
        return f.hex();
    }

private:
    // Fixed unit direction per appearance key, independent of the noise
    // stream. Kept off the gap direction so appearance content stays
    // expressible from the text side.
    Vec appearance_direction(std::uint64_t key) const {
        Rng rng(mix64(spec_.seed * 0xd1b54a32d192ed03ULL ^ mix64(key ^ 0x617070656172ULL)));
        Vec dir(spec_.output_dim);
        for (double& x : dir) x = rng.gaussian();
        if (spec_.modality_gap > 0.0) axpy(-dot(dir, gap_dir_), gap_dir_, dir);
        return normalized(dir);
    }

    static Mat random_row_orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
        Mat m(rows, cols);
        for (double& x : m.a) x = rng.gaussian();
        // modified Gram-Schmidt on rows
        for (std::size_t r = 0; r < rows; ++r) {
            double* row = &m.a[r * cols];
            for (std::size_t p = 0; p < r; ++p) {
                const double* prev = &m.a[p * cols];
                double d = 0.0;
                for (std::size_t c = 0; c < cols; ++c) d += row[c] * prev[c];
                for (std::size_t c = 0; c < cols; ++c) row[c] -= d * prev[c];
            }
            double n2 = 0.0;
            for (std::size_t c = 0; c < cols; ++c) n2 += row[c] * row[c];
            double inv = 1.0 / std::sqrt(n2);
            for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
        }
        return m;
    }

    ToyEncoderSpec spec_;
    std::vector<Vec> word_table_;
    Mat proj_;     // output_dim x word_dim, orthonormal rows (gap-orthogonal when gapped)
    Vec gap_dir_;  // unit vector in output space
};

}  // namespace palavra
