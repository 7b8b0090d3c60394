#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "palavra/evalkit.hpp"
#include "palavra/toy_benchmark.hpp"

#include "oracles.hpp"

using namespace palavra;

namespace {

Vec random_unit(Rng& rng, std::size_t dim) {
    Vec v(dim);
    for (double& x : v) x = rng.gaussian();
    return normalized(v);
}

// Small toy world with a trained model for the end-to-end evaluation tests.
struct EvalFixture {
    ToyWorldConfig cfg;
    std::unique_ptr<ToyEncoder> enc;
    ToyWorld world;
    InverterModel model;

    EvalFixture() {
        cfg.seed = 123;
        cfg.encoder.seed = 19;
        cfg.encoder.vocab_size = 8192;
        cfg.encoder.word_dim = 32;
        cfg.encoder.output_dim = 16;
        cfg.encoder.noise_scale = 0.25;
        cfg.encoder.modality_gap = 0.8;
        cfg.encoder.appearance_scale = 1.0;
        cfg.train_concepts = 20;
        cfg.train_images_per_concept = 6;
        cfg.train_captions_per_concept = 3;
        cfg.bench_concepts_test = 8;
        cfg.bench_concepts_val = 2;
        cfg.bench_train_images_per_concept = 8;

        world = build_toy_world(cfg);
        enc = std::make_unique<ToyEncoder>(cfg.encoder);

        std::string dir = oracles::temp_dir("eval_fixture");
        EmbeddingCache cache = cache_embeddings(world.train_items, *enc, dir + "/cache.pvlc");
        TypeVocabulary vocab;
        vocab.types = world.vocab_types;
        vocab.build_embeddings(*enc);
        TrainingDataset data(world.train_concepts, std::move(cache), std::move(vocab));

        InverterTrainConfig tcfg;
        tcfg.epochs = 10;
        tcfg.batch_concepts = 8;
        tcfg.examples_per_concept = 4;
        tcfg.hidden_dim = 32;
        tcfg.lr = 1e-3;
        tcfg.seed = 0;
        model = train_inverter(data, *enc, tcfg).model;
    }

    EvalOptions options(QueryRegime regime = QueryRegime::rich) const {
        EvalOptions opts;
        opts.seeds = {0, 1};
        opts.regime = regime;
        opts.shots = 4;
        opts.personalize.tune_epochs = 8;
        InverterModel copy = model;
        opts.load_model = [copy](std::uint64_t) { return copy; };
        return opts;
    }
};

EvalFixture& eval_fixture() {
    static EvalFixture f;
    return f;
}

}  // namespace

TEST_CASE("rank_gallery basics and brute-force agreement") {
    Rng rng(3);
    SUBCASE("a single item ranks first") {
        Vec q = random_unit(rng, 8);
        std::vector<std::pair<std::string, Vec>> gallery = {{"only", random_unit(rng, 8)}};
        CHECK(rank_gallery(q, gallery) == std::vector<std::string>{"only"});
        CHECK_THROWS_AS(rank_gallery(q, {}), PreconditionError);
    }
    SUBCASE("an exact match beats orthogonal items") {
        Vec q(8, 0.0);
        q[0] = 1.0;
        std::vector<std::pair<std::string, Vec>> gallery;
        gallery.emplace_back("match", q);
        for (int i = 1; i < 5; ++i) {
            Vec v(8, 0.0);
            v[static_cast<std::size_t>(i)] = 1.0;
            gallery.emplace_back("other" + std::to_string(i), v);
        }
        CHECK(rank_gallery(q, gallery).front() == "match");
    }
    SUBCASE("100 random items match the full-sort reference") {
        for (int rep = 0; rep < 5; ++rep) {
            Vec q = random_unit(rng, 12);
            std::vector<std::pair<std::string, Vec>> gallery;
            for (int i = 0; i < 100; ++i) {
                std::string id = "it" + std::to_string(100 + i);
                gallery.emplace_back(id, random_unit(rng, 12));
            }
            CHECK(rank_gallery(q, gallery) == oracles::rank_ref(q, gallery));
        }
    }
    SUBCASE("ties break by ascending id") {
        Vec q(4, 0.0);
        q[0] = 1.0;
        std::vector<std::pair<std::string, Vec>> gallery = {{"b", q}, {"a", q}, {"c", q}};
        CHECK(rank_gallery(q, gallery) == std::vector<std::string>{"a", "b", "c"});
    }
}

TEST_CASE("mrr and recall definitions") {
    CHECK(mrr({1, 1, 1}) == 1.0);
    CHECK(mrr({1, 2, 4}) == doctest::Approx(0.5833333333333334).epsilon(1e-12));
    CHECK_THROWS_AS(mrr({}), PreconditionError);
    CHECK_THROWS_AS(mrr({0}), PreconditionError);

    CHECK(recall_at_k({1, 1, 1}, 1) == 1.0);
    CHECK(recall_at_k({1, 1, 1}, 7) == 1.0);
    CHECK(recall_at_k({1, 2, 4}, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(recall_at_k({1, 2, 4}, 5) == 1.0);
    CHECK_THROWS_AS(recall_at_k({1}, 0), PreconditionError);
}

TEST_CASE("metrics match the reference implementations exactly on 1000 random instances") {
    Rng rng(9);
    for (int rep = 0; rep < 1000; ++rep) {
        std::size_t n = 1 + rng.uniform_int(20);
        std::vector<std::size_t> ranks;
        for (std::size_t i = 0; i < n; ++i) ranks.push_back(1 + rng.uniform_int(50));
        CHECK(mrr(ranks) == oracles::mrr_ref(ranks));
        std::size_t k = 1 + rng.uniform_int(10);
        CHECK(recall_at_k(ranks, k) == oracles::recall_at_k_ref(ranks, k));
    }
}

TEST_CASE("metric bounds hold on random rank lists") {
    Rng rng(10);
    for (int rep = 0; rep < 200; ++rep) {
        std::size_t n = 1 + rng.uniform_int(30);
        std::vector<std::size_t> ranks;
        for (std::size_t i = 0; i < n; ++i) ranks.push_back(1 + rng.uniform_int(40));
        double m = mrr(ranks);
        double prev = 0.0;
        for (std::size_t k : {1, 2, 5, 10, 40}) {
            double r = recall_at_k(ranks, k);
            CHECK(r >= prev);  // non-decreasing in K
            CHECK(r >= 0.0);
            CHECK(r <= 1.0);
            prev = r;
        }
        CHECK(m >= recall_at_k(ranks, 1));  // every hit at rank 1 contributes 1
        for (std::size_t k : {1, 2, 5, 10}) {
            double r = recall_at_k(ranks, k);
            // ranks <= k contribute at most 1, ranks > k at most 1/(k+1)
            CHECK(m <= r + (1.0 - r) / static_cast<double>(k + 1) + 1e-12);
        }
    }
}

TEST_CASE("nested subsets are seed-deterministic prefixes") {
    std::vector<std::size_t> five = nested_subset(3, "[C1]", 5, 12);
    std::vector<std::size_t> two = nested_subset(3, "[C1]", 2, 12);
    REQUIRE(five.size() == 5);
    CHECK(std::vector<std::size_t>(five.begin(), five.begin() + 2) == two);
    CHECK(nested_subset(3, "[C1]", 5, 12) == five);
    CHECK(nested_subset(4, "[C1]", 5, 12) != five);
    CHECK_THROWS_AS(nested_subset(3, "[C1]", 13, 12), PreconditionError);
}

TEST_CASE("benchmark manifests round-trip and validate") {
    EvalFixture& f = eval_fixture();
    json j = benchmark_to_json(f.world.bench_test);
    RetrievalBenchmark back = benchmark_from_json(j);
    CHECK(back.digest() == f.world.bench_test.digest());

    SUBCASE("unknown target id") {
        json bad = j;
        bad["queries"][0]["target"] = "nope";
        CHECK_THROWS_AS(benchmark_from_json(bad), DataError);
    }
    SUBCASE("training image leaking into the gallery") {
        json bad = j;
        std::string gal_id = bad["gallery"][0]["id"].get<std::string>();
        std::string symbol = bad["queries"][0]["symbol"].get<std::string>();
        bad["concepts"][symbol]["train_images"][0]["id"] = gal_id;
        CHECK_THROWS_AS(benchmark_from_json(bad), DataError);
    }
    SUBCASE("bad split") {
        json bad = j;
        bad["split"] = "train";
        CHECK_THROWS_AS(benchmark_from_json(bad), DataError);
    }
}

TEST_CASE("the random baseline matches the harmonic-sum expectation") {
    // benchmark with a 34-item gallery: expected MRR = H_34 / 34
    ToyWorldConfig cfg;
    cfg.seed = 5;
    cfg.encoder.seed = 23;
    cfg.encoder.vocab_size = 4096;
    cfg.encoder.word_dim = 32;
    cfg.encoder.output_dim = 16;
    cfg.bench_concepts_test = 17;  // 2 eval images each -> 34
    cfg.bench_concepts_val = 1;
    cfg.train_concepts = 1;
    ToyWorld world = build_toy_world(cfg);
    REQUIRE(world.bench_test.gallery.size() == 34);
    ToyEncoder enc(cfg.encoder);

    EvalOptions opts;
    opts.seeds = {0, 1, 2, 3, 4};
    opts.regime = QueryRegime::rich;
    opts.shots = 2;
    MetricsReport rep = evaluate("random", world.bench_test, enc, opts);

    double hn = 0.0;
    for (int i = 1; i <= 34; ++i) hn += 1.0 / i;
    double expected = hn / 34.0;
    CHECK(expected == doctest::Approx(0.121).epsilon(0.01));
    CHECK(rep.mrr_mean == doctest::Approx(expected).epsilon(0.35));
}

TEST_CASE("text_only ignores the token registry entirely") {
    EvalFixture& f = eval_fixture();
    EvalOptions opts = f.options();
    TokenRegistry empty;
    MetricsReport without = run_baseline("text_only", f.world.bench_test, *f.enc, empty, opts);

    TokenRegistry with;
    PersonalizedToken t;
    t.symbol = "[C000]";
    t.type_string = "anything";
    t.embedding = Vec(f.enc->word_dim(), 0.5);
    with.register_token(t);
    MetricsReport with_rep = run_baseline("text_only", f.world.bench_test, *f.enc, with, opts);

    CHECK(without.mrr_mean == with_rep.mrr_mean);
    for (std::size_t i = 0; i < without.per_seed.size(); ++i)
        CHECK(without.per_seed[i].mrr == with_rep.per_seed[i].mrr);

    CHECK_THROWS_AS(run_baseline("palavra", f.world.bench_test, *f.enc, empty, opts), ConfigError);
}

TEST_CASE("avg_im is regime independent") {
    EvalFixture& f = eval_fixture();
    MetricsReport rich = evaluate("avg_im", f.world.bench_test, *f.enc, f.options(QueryRegime::rich));
    MetricsReport conc =
        evaluate("avg_im", f.world.bench_test, *f.enc, f.options(QueryRegime::concept_only));
    REQUIRE(rich.per_seed.size() == conc.per_seed.size());
    for (std::size_t i = 0; i < rich.per_seed.size(); ++i) {
        CHECK(rich.per_seed[i].mrr == conc.per_seed[i].mrr);
        CHECK(rich.per_seed[i].recall == conc.per_seed[i].recall);
    }
}

TEST_CASE("concept-only scores never depend on the captions") {
    EvalFixture& f = eval_fixture();
    RetrievalBenchmark scrambled = f.world.bench_test;
    Rng rng(77);
    for (BenchmarkQuery& q : scrambled.queries) {
        q.caption = "scrambled nonsense " + std::to_string(rng.uniform_int(1000));
        q.detailed_caption = q.caption;
    }
    for (const char* method : {"text_only", "im_and_text", "avg_im"}) {
        MetricsReport a =
            evaluate(method, f.world.bench_test, *f.enc, f.options(QueryRegime::concept_only));
        MetricsReport b = evaluate(method, scrambled, *f.enc, f.options(QueryRegime::concept_only));
        for (std::size_t i = 0; i < a.per_seed.size(); ++i)
            CHECK(a.per_seed[i].mrr == b.per_seed[i].mrr);
    }
    MetricsReport pa =
        evaluate("palavra", f.world.bench_test, *f.enc, f.options(QueryRegime::concept_only));
    MetricsReport pb = evaluate("palavra", scrambled, *f.enc, f.options(QueryRegime::concept_only));
    for (std::size_t i = 0; i < pa.per_seed.size(); ++i)
        CHECK(pa.per_seed[i].mrr == pb.per_seed[i].mrr);
}

TEST_CASE("a single seed reports SEM exactly zero") {
    EvalFixture& f = eval_fixture();
    EvalOptions opts = f.options();
    opts.seeds = {0};
    MetricsReport rep = evaluate("text_only", f.world.bench_test, *f.enc, opts);
    CHECK(rep.mrr_sem == 0.0);
    for (const auto& [k, v] : rep.recall_sem) CHECK(v == 0.0);
}

TEST_CASE("evaluate writes reports, plots and token files with the scale notice") {
    EvalFixture& f = eval_fixture();
    std::string dir = oracles::temp_dir("eval_files");
    EvalOptions opts = f.options();
    opts.out_dir = dir;
    MetricsReport rep = evaluate("palavra", f.world.bench_test, *f.enc, opts);
    CHECK(!rep.per_seed.empty());

    CHECK(std::filesystem::exists(dir + "/report_palavra_rich.json"));
    CHECK(std::filesystem::exists(dir + "/recall_palavra_rich.svg"));
    CHECK(std::filesystem::exists(dir + "/tokens_palavra_seed0.pvta"));
    CHECK(std::filesystem::exists(dir + "/tokens_palavra_seed1.pvta"));

    std::ifstream in(dir + "/report_palavra_rich.json");
    json j;
    in >> j;
    std::string notice = j.at("notice").get<std::string>();
    CHECK(notice.find("28.4") != std::string::npos);
    CHECK(notice.find("DeepFashion2") != std::string::npos);
    CHECK(notice.find("--real-encoder") != std::string::npos);
    CHECK(j.at("per_seed").size() == 2);

    // token files hold one tensor per concept
    TokenRegistry reg = TokenRegistry::load(dir + "/tokens_palavra_seed0.pvta");
    CHECK(reg.size() == f.world.bench_test.concepts.size());
}

TEST_CASE("palavra evaluation requires a model loader") {
    EvalFixture& f = eval_fixture();
    EvalOptions opts = f.options();
    opts.load_model = nullptr;
    CHECK_THROWS_AS(evaluate("palavra", f.world.bench_test, *f.enc, opts), ConfigError);

    opts = f.options();
    opts.load_model = [](std::uint64_t seed) -> InverterModel {
        throw ConfigError("no checkpoint for seed " + std::to_string(seed));
    };
    try {
        evaluate("palavra", f.world.bench_test, *f.enc, opts);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("seed 0") != std::string::npos);
    }

    CHECK_THROWS_AS(evaluate("not_a_method", f.world.bench_test, *f.enc, f.options()), ConfigError);
}

TEST_CASE("shots sweep of one count equals a single evaluate call and subsets nest") {
    EvalFixture& f = eval_fixture();
    EvalOptions opts = f.options();
    std::vector<MetricsReport> sweep = shots_sweep("avg_im", f.world.bench_test, *f.enc, {4}, opts);
    REQUIRE(sweep.size() == 1);
    MetricsReport single = evaluate("avg_im", f.world.bench_test, *f.enc, opts);
    CHECK(sweep[0].mrr_mean == single.mrr_mean);

    // sweep rejects shot counts beyond the training pool
    CHECK_THROWS_AS(shots_sweep("avg_im", f.world.bench_test, *f.enc, {100}, opts),
                    PreconditionError);

    // nesting: the 2-shot subset ids are a prefix of the 6-shot ids
    for (const auto& [symbol, tc] : f.world.bench_test.concepts) {
        std::vector<std::size_t> small = nested_subset(1, symbol, 2, tc.train_images.size());
        std::vector<std::size_t> large = nested_subset(1, symbol, 6, tc.train_images.size());
        CHECK(std::vector<std::size_t>(large.begin(), large.begin() + 2) == small);
    }
}

TEST_CASE("sweep files include the per-count table and curve") {
    EvalFixture& f = eval_fixture();
    std::string dir = oracles::temp_dir("sweep_files");
    EvalOptions opts = f.options();
    opts.out_dir = dir;
    shots_sweep("avg_im", f.world.bench_test, *f.enc, {2, 4}, opts);
    CHECK(std::filesystem::exists(dir + "/sweep_avg_im_rich.json"));
    CHECK(std::filesystem::exists(dir + "/shots_avg_im_rich.svg"));
    std::ifstream in(dir + "/sweep_avg_im_rich.json");
    json j;
    in >> j;
    CHECK(j.at("sweep").size() == 2);
}

TEST_CASE("evaluation is byte-deterministic across repeated runs") {
    EvalFixture& f = eval_fixture();
    std::string dir1 = oracles::temp_dir("eval_det1");
    std::string dir2 = oracles::temp_dir("eval_det2");
    EvalOptions opts = f.options();
    opts.out_dir = dir1;
    evaluate("palavra", f.world.bench_test, *f.enc, opts);
    opts.out_dir = dir2;
    evaluate("palavra", f.world.bench_test, *f.enc, opts);
    CHECK(read_file_bytes(dir1 + "/report_palavra_rich.json") ==
          read_file_bytes(dir2 + "/report_palavra_rich.json"));
    CHECK(read_file_bytes(dir1 + "/tokens_palavra_seed0.pvta") ==
          read_file_bytes(dir2 + "/tokens_palavra_seed0.pvta"));
    CHECK(read_file_bytes(dir1 + "/recall_palavra_rich.svg") ==
          read_file_bytes(dir2 + "/recall_palavra_rich.svg"));
}
