#include <doctest.h>

#include <fstream>
#include <thread>

#include <httplib.h>

#include "palavra/remote_encoder.hpp"
#include "palavra/toy_encoder.hpp"

#include "oracles.hpp"

using namespace palavra;

namespace {

// In-process inference service over a toy encoder. Image bytes are
// interpreted as the canonical caption text, which keeps the fake honest
// about the wire format without shipping a real vision model.
class MockService {
public:
    MockService() : enc_(make_spec()) {
        server_.Get("/info", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json j{{"output_dim", enc_.output_dim()},
                             {"word_dim", enc_.word_dim()},
                             {"context_length", enc_.context_length()},
                             {"vocab_size", enc_.vocab_size()},
                             {"digest", enc_.digest()}};
            res.set_content(j.dump(), "application/json");
        });
        server_.Post("/tokenize", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json j = enc_.tokenize(req.body);
            res.set_content(j.dump(), "application/json");
        });
        server_.Get("/word_embedding", [this](const httplib::Request& req, httplib::Response& res) {
            auto id = static_cast<std::int32_t>(std::stol(req.get_param_value("id")));
            res.set_content(to_f32(enc_.word_embedding(id)), "application/octet-stream");
        });
        server_.Post("/encode_text", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json j = nlohmann::json::parse(req.body);
            TokenEmbeddingSequence seq;
            for (const nlohmann::json& e : j.at("elements")) {
                if (e.contains("raw"))
                    seq.push_back(SeqElement::from_raw(e.at("raw").get<Vec>()));
                else
                    seq.push_back(SeqElement::from_token(e.at("token").get<std::int32_t>()));
            }
            res.set_content(to_f32(enc_.encode_text(seq)), "application/octet-stream");
        });
        server_.Post("/encode_image", [this](const httplib::Request& req, httplib::Response& res) {
            ImageRecord rec{req.body, 7, 0, ""};
            res.set_content(to_f32(enc_.encode_image(rec)), "application/octet-stream");
        });

        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockService() {
        server_.stop();
        thread_.join();
    }

    int port() const { return port_; }
    const ToyEncoder& toy() const { return enc_; }

    static ToyEncoderSpec make_spec() {
        ToyEncoderSpec s;
        s.seed = 77;
        s.vocab_size = 2048;
        s.word_dim = 24;
        s.output_dim = 12;
        return s;
    }

private:
    static std::string to_f32(const Vec& v) {
        std::string out;
        for (double x : v) put_f32_le(out, static_cast<float>(x));
        return out;
    }

    ToyEncoder enc_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace

TEST_CASE("remote encoder mirrors the service it fronts") {
    MockService service;
    RemoteEncoderConfig cfg;
    cfg.port = service.port();
    RemoteEncoder remote(cfg);

    const ToyEncoder& toy = service.toy();
    CHECK(remote.output_dim() == toy.output_dim());
    CHECK(remote.word_dim() == toy.word_dim());
    CHECK(remote.vocab_size() == toy.vocab_size());
    CHECK(remote.digest() == toy.digest());

    SUBCASE("tokenize round-trips") {
        CHECK(remote.tokenize("a photo of a kettle") == toy.tokenize("a photo of a kettle"));
    }

    SUBCASE("word embeddings arrive at float32 precision") {
        Vec got = remote.word_embedding(5);
        Vec want = toy.word_embedding(5);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == static_cast<double>(static_cast<float>(want[i])));
    }

    SUBCASE("encode_text carries raw concept vectors over the wire") {
        TokenEmbeddingSequence seq;
        for (std::int32_t t : toy.tokenize("a photo of a")) seq.push_back(SeqElement::from_token(t));
        Vec w(toy.word_dim(), 0.125);
        seq.push_back(SeqElement::from_raw(w));
        Vec got = remote.encode_text(seq);
        Vec want = toy.encode_text(seq);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == static_cast<double>(static_cast<float>(want[i])));
        CHECK(std::abs(norm(got) - 1.0) < 1e-5);
    }

    SUBCASE("encode_image posts the file bytes") {
        std::string dir = oracles::temp_dir("remote_img");
        std::string path = dir + "/img.txt";
        {
            std::ofstream out(path);
            out << "a photo of a lantern";
        }
        Vec got = remote.encode_image({"", 0, 0, path});
        Vec want = service.toy().encode_image({"a photo of a lantern", 7, 0, ""});
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == static_cast<double>(static_cast<float>(want[i])));

        CHECK_THROWS_AS(remote.encode_image({"caption only", 0, 0, ""}), InputError);
    }

    SUBCASE("the remote path has no gradients") {
        TokenEmbeddingSequence seq{SeqElement::from_raw(Vec(toy.word_dim(), 0.1))};
        CHECK_THROWS_AS(remote.encode_text_vjp(seq, Vec(toy.output_dim(), 0.0)), NumericError);
    }
}

TEST_CASE("an unreachable service raises a transport error with retry metadata") {
    RemoteEncoderConfig cfg;
    cfg.port = 1;  // nothing listens here
    cfg.attempts = 2;
    cfg.timeout_seconds = 0.2;
    try {
        RemoteEncoder remote(cfg);
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.attempts == 2);
        CHECK(e.endpoint.find("/info") != std::string::npos);
        CHECK(e.last_status == 0);
    }
}

TEST_CASE("a failing endpoint surfaces its HTTP status") {
    httplib::Server server;
    server.Get("/info", [](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("overloaded", "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteEncoderConfig cfg;
    cfg.port = port;
    cfg.attempts = 2;
    try {
        RemoteEncoder remote(cfg);
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.last_status == 503);
    }
    server.stop();
    t.join();
}
