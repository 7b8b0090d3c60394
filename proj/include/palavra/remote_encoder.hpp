#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "palavra/binio.hpp"
#include "palavra/digest.hpp"
#include "palavra/encoder.hpp"
#include "palavra/errors.hpp"

namespace palavra {

// Client for a local inference service wrapping a real dual encoder. Keeps
// the heavyweight model out of this process; the service owns tokenizer,
// word table and both encoders.
//
// Protocol (all vectors are raw float32 little-endian bytes):
//   GET  /info                    -> {"output_dim", "word_dim", "context_length",
//                                     "vocab_size", "digest"}
//   POST /tokenize   text/plain   -> JSON array of token ids
//   GET  /word_embedding?id=N     -> f32 vector (word_dim)
//   POST /encode_text  app/json   -> f32 vector (output_dim); body
//                                    {"elements": [{"token": id} | {"raw": [..]}]}
//   POST /encode_image octet-stream (image bytes) -> f32 vector (output_dim)
struct RemoteEncoderConfig {
    std::string host = "127.0.0.1";
    int port = 8091;
    int attempts = 3;  // per request
    double timeout_seconds = 10.0;
};

class RemoteEncoder final : public FrozenEncoderPair {
public:
    explicit RemoteEncoder(const RemoteEncoderConfig& cfg) : cfg_(cfg) {
        nlohmann::json info = nlohmann::json::parse(
            request([&](httplib::Client& cli) { return cli.Get("/info"); }, "/info"));
        output_dim_ = info.at("output_dim").get<std::size_t>();
        word_dim_ = info.at("word_dim").get<std::size_t>();
        context_length_ = info.value("context_length", std::size_t{77});
        vocab_size_ = info.at("vocab_size").get<std::size_t>();
        digest_ = info.value("digest", std::string());
        if (digest_.empty()) {
            Fnv64 f;
            f.update("remote:" + cfg_.host + ":" + std::to_string(cfg_.port));
            digest_ = f.hex();
        }
    }

    std::size_t output_dim() const override { return output_dim_; }
    std::size_t word_dim() const override { return word_dim_; }
    std::size_t context_length() const override { return context_length_; }
    std::size_t vocab_size() const override { return vocab_size_; }

    std::vector<std::int32_t> tokenize(const std::string& text) const override {
        std::string body = request(
            [&](httplib::Client& cli) { return cli.Post("/tokenize", text, "text/plain"); },
            "/tokenize");
        nlohmann::json j = nlohmann::json::parse(body);
        return j.get<std::vector<std::int32_t>>();
    }

    Vec word_embedding(std::int32_t token) const override {
        if (token < 0 || static_cast<std::size_t>(token) >= vocab_size_)
            throw VocabularyError("unknown token id " + std::to_string(token));
        std::string body = request(
            [&](httplib::Client& cli) {
                return cli.Get("/word_embedding?id=" + std::to_string(token));
            },
            "/word_embedding");
        return decode_f32_vec(body, word_dim_, "/word_embedding");
    }

    Vec encode_text(const TokenEmbeddingSequence& seq) const override {
        validate_sequence(seq);
        nlohmann::json elements = nlohmann::json::array();
        for (const SeqElement& e : seq) {
            if (e.is_raw)
                elements.push_back(nlohmann::json{{"raw", e.raw}});
            else
                elements.push_back(nlohmann::json{{"token", e.token}});
        }
        std::string payload = nlohmann::json{{"elements", elements}}.dump();
        std::string body = request(
            [&](httplib::Client& cli) { return cli.Post("/encode_text", payload, "application/json"); },
            "/encode_text");
        return decode_f32_vec(body, output_dim_, "/encode_text");
    }

    Vec encode_image(const ImageRecord& img) const override {
        if (img.path.empty())
            throw InputError("remote encode_image: record has no image file reference");
        std::string bytes = read_file_bytes(img.path);
        std::string body = request(
            [&](httplib::Client& cli) {
                return cli.Post("/encode_image", bytes, "application/octet-stream");
            },
            "/encode_image");
        return decode_f32_vec(body, output_dim_, "/encode_image");
    }

    std::string digest() const override { return digest_; }

private:
    template <typename F>
    std::string request(F&& send, const std::string& what) const {
        int last_status = 0;
        for (int attempt = 1; attempt <= cfg_.attempts; ++attempt) {
            httplib::Client cli(cfg_.host, cfg_.port);
            cli.set_connection_timeout(static_cast<time_t>(cfg_.timeout_seconds),
                                       static_cast<time_t>((cfg_.timeout_seconds -
                                                            static_cast<time_t>(cfg_.timeout_seconds)) *
                                                           1e6));
            cli.set_read_timeout(static_cast<time_t>(cfg_.timeout_seconds), 0);
            httplib::Result res = send(cli);
            if (res && res->status == 200) return res->body;
            last_status = res ? res->status : 0;
        }
        throw TransportError("encoder service unreachable at " + endpoint() + what + " after " +
                                 std::to_string(cfg_.attempts) + " attempts",
                             endpoint() + what, cfg_.attempts, last_status);
    }

    std::string endpoint() const { return "http://" + cfg_.host + ":" + std::to_string(cfg_.port); }

    static Vec decode_f32_vec(const std::string& body, std::size_t dim, const char* what) {
        if (body.size() != dim * 4)
            throw InputError(std::string(what) + ": expected " + std::to_string(dim * 4) +
                             " payload bytes, got " + std::to_string(body.size()));
        ByteReader r(body);
        Vec v(dim);
        for (std::size_t i = 0; i < dim; ++i) v[i] = r.f32("vector value");
        return v;
    }

    RemoteEncoderConfig cfg_;
    std::size_t output_dim_ = 0;
    std::size_t word_dim_ = 0;
    std::size_t context_length_ = 77;
    std::size_t vocab_size_ = 0;
    std::string digest_;
};

}  // namespace palavra
