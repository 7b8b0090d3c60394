#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "palavra/textaug.hpp"
#include "palavra/toy_encoder.hpp"

#include "oracles.hpp"

using namespace palavra;

namespace {

ToyEncoderSpec aug_spec() {
    ToyEncoderSpec s;
    s.seed = 12;
    s.vocab_size = 4096;
    s.word_dim = 32;
    s.output_dim = 16;
    return s;
}

}  // namespace

TEST_CASE("default prompt bank has the 24 fixed templates in order") {
    PromptBank bank = PromptBank::default_bank();
    REQUIRE(bank.templates.size() == 24);
    CHECK(bank.templates.front() == "This is a photo of a [CONCEPT]");
    CHECK(bank.templates[2] == "A photo of a [CONCEPT]");
    CHECK(bank.templates[14] == "[CONCEPT]");
    CHECK(bank.templates.back() == "[CONCEPT] illustration");
    bank.validate();  // placeholder appears exactly once everywhere
}

TEST_CASE("template sampling is uniform within a 3-sigma binomial bound") {
    PromptBank bank = PromptBank::default_bank();
    Rng rng(77);
    const int draws = 24000;
    std::map<std::string, int> counts;
    for (int i = 0; i < draws; ++i) counts[bank.sample(rng)]++;

    double p = 1.0 / 24.0;
    double sigma = std::sqrt(draws * p * (1.0 - p));
    for (const std::string& t : bank.templates) {
        double dev = std::abs(counts[t] - draws * p);
        CHECK(dev <= 3.0 * sigma);
    }
}

TEST_CASE("a single-template bank always returns that template and draws are reproducible") {
    PromptBank bank;
    bank.templates = {"A photo of a [CONCEPT]"};
    Rng rng(1);
    for (int i = 0; i < 5; ++i) CHECK(bank.sample(rng) == "A photo of a [CONCEPT]");

    PromptBank empty;
    Rng r2(1);
    CHECK_THROWS_AS(empty.sample(r2), PreconditionError);

    PromptBank full = PromptBank::default_bank();
    Rng ra(42), rb(42);
    for (int i = 0; i < 50; ++i) CHECK(full.sample(ra) == full.sample(rb));
}

TEST_CASE("nearest type returns the source itself when present") {
    ToyEncoder enc(aug_spec());
    TypeVocabulary vocab;
    vocab.types = {"kettle", "banjo", "raft", "lantern"};
    vocab.build_embeddings(enc);
    CHECK(nearest_type("banjo", vocab, enc) == "banjo");

    TypeVocabulary single;
    single.types = {"drum"};
    single.build_embeddings(enc);
    CHECK(nearest_type("anything", single, enc) == "drum");
}

TEST_CASE("nearest type matches a brute-force scan and breaks ties by index") {
    ToyEncoder enc(aug_spec());
    TypeVocabulary vocab;
    for (int i = 0; i < 100; ++i) vocab.types.push_back("word" + std::to_string(i));
    vocab.build_embeddings(enc);

    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        std::string src = "query" + std::to_string(rng.uniform_int(1000));
        Vec q = enc.encode_sentence(src);
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t i = 0; i < vocab.types.size(); ++i) {
            double sim = oracles::cos_ref(q, vocab.type_embeddings[i]);
            if (sim > best_sim) {  // strict: first index wins ties
                best_sim = sim;
                best = i;
            }
        }
        CHECK(nearest_type(src, vocab, enc) == vocab.types[best]);
    }

    // duplicate entries similarity-tie: lowest index wins
    TypeVocabulary dup;
    dup.types = {"alpha", "kettle", "kettle2"};
    dup.build_embeddings(enc);
    dup.type_embeddings[2] = dup.type_embeddings[1];
    CHECK(nearest_type("kettle", dup, enc) == "kettle");
}

TEST_CASE("caption augmentation replaces the first whole word, case-insensitively") {
    CHECK(augment_caption("a dog on a couch", "dog", "puppy") == "a puppy on a couch");
    CHECK_THROWS_AS(augment_caption("a dogma on a couch", "dog", "puppy"), AugmentationMissError);
    CHECK(augment_caption("a Dog on a couch", "dog", "puppy") == "a puppy on a couch");
    CHECK(augment_caption("dog meets dog", "dog", "puppy") == "puppy meets dog");
    CHECK(augment_caption("the short sleeve top is red", "short sleeve top", "coat") ==
          "the coat is red");
    CHECK(augment_caption("a dog.", "dog", "puppy") == "a puppy.");

    // replacement equal to the source is the identity up to the matched case
    CHECK(augment_caption("a Dog on a couch", "dog", "dog") == "a dog on a couch");
    CHECK(augment_caption("a dog on a couch", "dog", "dog") == "a dog on a couch");
}

TEST_CASE("vocabulary files reject duplicates with both line numbers") {
    std::string dir = oracles::temp_dir("vocab_dup");
    {
        std::ofstream out(dir + "/v.txt");
        out << "kettle\nbanjo\nkettle\n";
    }
    ToyEncoder enc(aug_spec());
    try {
        TypeVocabulary::load(dir + "/v.txt", enc);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("line 1") != std::string::npos);
        CHECK(msg.find("kettle") != std::string::npos);
    }
}

TEST_CASE("vocabulary files load types in order with unit-norm embeddings") {
    std::string dir = oracles::temp_dir("vocab_ok");
    {
        std::ofstream out(dir + "/v.txt");
        out << "kettle\nbanjo\nraft\n";
    }
    ToyEncoder enc(aug_spec());
    TypeVocabulary vocab = TypeVocabulary::load(dir + "/v.txt", enc);
    CHECK(vocab.types == std::vector<std::string>{"kettle", "banjo", "raft"});
    for (const Vec& e : vocab.type_embeddings) CHECK(std::abs(norm(e) - 1.0) < 1e-6);

    CHECK_THROWS_AS(TypeVocabulary::load(dir + "/missing.txt", enc), DataError);
}

TEST_CASE("top-k replacement sampling defaults to the single nearest type") {
    ToyEncoder enc(aug_spec());
    TypeVocabulary vocab;
    for (int i = 0; i < 20; ++i) vocab.types.push_back("word" + std::to_string(i));
    vocab.build_embeddings(enc);
    Rng rng(9);
    CHECK(sample_replacement_type("word7", vocab, enc, 1, rng) == "word7");
    // k > 1 draws among the k nearest; with k = vocabulary size every type is possible
    std::set<std::string> seen;
    for (int i = 0; i < 200; ++i) seen.insert(sample_replacement_type("word7", vocab, enc, 20, rng));
    CHECK(seen.size() > 5);
}
