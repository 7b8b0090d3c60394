#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "palavra/evalkit.hpp"
#include "palavra/toy_encoder.hpp"
#include "palavra/training.hpp"

namespace palavra {

// 200-type sample vocabulary for caption augmentation (the full-scale system
// uses a ~20k external type list; the file format is one type per line).
inline const std::vector<std::string>& toy_vocab_nouns() {
    static const std::vector<std::string> nouns = {
        "aircraft", "alarm", "anchor", "antelope", "apple", "apron", "aquarium", "armchair",
        "avocado", "backpack", "badge", "bagel", "balcony", "balloon", "banana", "banjo",
        "barrel", "basket", "bathtub", "battery", "beaker", "beetle", "bell", "bench",
        "bicycle", "binocular", "blanket", "blender", "boat", "bookcase", "boot", "bottle",
        "bowl", "bracelet", "broccoli", "broom", "bucket", "buffalo", "bulldozer", "burrito",
        "button", "cabbage", "cabinet", "cactus", "camel", "camera", "candle", "canoe",
        "carrot", "cart", "castle", "caterpillar", "cello", "chair", "cheetah", "chisel",
        "clarinet", "cliff", "clock", "coat", "compass", "cookie", "corkscrew", "couch",
        "crab", "cradle", "crayon", "cricket", "crowbar", "crutch", "cucumber", "cupboard",
        "curtain", "cushion", "dolphin", "donkey", "drawer", "dresser", "drill", "drum",
        "dumbbell", "eagle", "easel", "eggplant", "elephant", "envelope", "falcon", "fence",
        "fiddle", "flashlight", "flask", "flute", "fork", "fountain", "fridge", "frisbee",
        "gazebo", "giraffe", "glacier", "glove", "goggles", "gondola", "gorilla", "grape",
        "grill", "guitar", "hammer", "hammock", "harbor", "harmonica", "harp", "hatchet",
        "hedgehog", "helicopter", "helmet", "hippo", "hourglass", "hydrant", "iguana", "jackal",
        "jacket", "jeep", "kangaroo", "kayak", "kettle", "keyboard", "kite", "ladder",
        "ladle", "lantern", "laptop", "lemon", "leopard", "lighthouse", "lizard", "lobster",
        "locomotive", "mailbox", "mango", "marble", "mattress", "microscope", "mirror", "mitten",
        "mosaic", "motorcycle", "muffin", "mushroom", "napkin", "necklace", "obelisk", "octopus",
        "orchid", "ostrich", "otter", "oven", "paddle", "pajamas", "pancake", "panther",
        "parachute", "parrot", "peacock", "pelican", "penguin", "piano", "pickaxe", "pillow",
        "pineapple", "pitcher", "pliers", "plow", "porch", "pretzel", "pumpkin", "puppet",
        "quilt", "raccoon", "radiator", "radish", "raft", "rake", "raspberry", "razor",
        "rhino", "ribbon", "rocket", "rooster", "rudder", "saddle", "sailboat", "sandal",
        "saxophone", "scarf", "scooter", "shovel", "skillet", "sled", "snail", "snorkel",
        "spatula", "sphinx", "squirrel", "stool", "suitcase", "sweater", "telescope", "toaster",
    };
    return nouns;
}

// Knobs of the generated toy world: a set-encoder training corpus plus val
// and test retrieval benchmarks, all over one toy encoder.
struct ToyWorldConfig {
    std::uint64_t seed = 42;  // generation seed (word choices, contexts, noise keys)
    ToyEncoderSpec encoder = default_encoder_spec();

    static ToyEncoderSpec default_encoder_spec() {
        ToyEncoderSpec s;
        s.seed = 7;
        s.vocab_size = 32768;
        s.word_dim = 64;
        s.output_dim = 32;
        s.noise_scale = 0.7;
        s.modality_gap = 2.5;
        s.appearance_scale = 1.5;
        return s;
    }

    std::size_t train_concepts = 200;
    std::size_t train_images_per_concept = 8;
    std::size_t train_captions_per_concept = 4;
    std::size_t train_contexts = 24;
    // fraction of training concepts whose type is a two-word phrase; the
    // ground-truth regularizer anchors to the first word only, so phrase
    // concepts teach the set encoder to carry more than one word of content
    double train_phrase_fraction = 0.5;

    std::size_t bench_concepts_test = 50;
    std::size_t bench_concepts_val = 10;
    std::size_t eval_images_per_concept = 2;
    std::size_t bench_train_images_per_concept = 12;
    std::size_t bench_types = 10;
    std::size_t bench_contexts = 12;
    // words per concept identity
    std::size_t identity_words = 1;
};

// Training hyperparameters sized for the toy world (the published defaults
// in InverterTrainConfig target the full-scale setup and would spend hours
// of CPU here for no extra signal).
inline InverterTrainConfig toy_train_config() {
    InverterTrainConfig cfg;
    cfg.epochs = 100;
    cfg.batch_concepts = 16;
    cfg.batch_size = 64;
    cfg.examples_per_concept = 4;
    cfg.hidden_dim = 128;
    cfg.lr = 1e-3;
    cfg.lambda_gt = 128.0;
    return cfg;
}

struct ToyWorld {
    ToyEncoderSpec encoder_spec;
    std::vector<std::string> vocab_types;
    std::vector<std::pair<std::string, ImageRecord>> train_items;  // inputs of cache_embeddings
    std::vector<TrainingConcept> train_concepts;
    RetrievalBenchmark bench_val;
    RetrievalBenchmark bench_test;
};

namespace detail {

// Pseudo-word generator for concept identities, types and contexts. Words
// are kept token-unique against everything generated before them so every
// concept owns a distinct word embedding.
class WordMint {
public:
    explicit WordMint(const FrozenEncoderPair& enc) : enc_(enc) {}

    void claim(const std::string& word) {
        std::vector<std::int32_t> ids = enc_.tokenize(word);
        if (ids.size() == 1) used_.insert(ids[0]);
    }

    std::string fresh(Rng& rng) {
        static const char* consonants = "bdfgklmnprstvz";
        static const char* vowels = "aeiou";
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::string w;
            for (int s = 0; s < 3; ++s) {
                w.push_back(consonants[rng.uniform_int(14)]);
                w.push_back(vowels[rng.uniform_int(5)]);
            }
            std::vector<std::int32_t> ids = enc_.tokenize(w);
            if (ids.size() != 1) continue;
            if (used_.count(ids[0])) continue;
            used_.insert(ids[0]);
            return w;
        }
        throw DataError("word mint: could not find a fresh word (vocab too small?)");
    }

private:
    const FrozenEncoderPair& enc_;
    std::set<std::int32_t> used_;
};

}  // namespace detail

inline ToyWorld build_toy_world(const ToyWorldConfig& cfg) {
    ToyWorld world;
    world.encoder_spec = cfg.encoder;
    world.vocab_types = toy_vocab_nouns();

    ToyEncoder enc(cfg.encoder);
    // independent streams: benchmark content does not shift when the
    // training corpus is resized
    Rng rng(mix64(cfg.seed ^ 0x746f79776f726c64ULL));
    Rng bench_rng(mix64(cfg.seed ^ 0x62656e63686d6bULL));
    detail::WordMint mint(enc);
    for (const std::string& noun : world.vocab_types) mint.claim(noun);

    std::uint64_t noise_key = 1;

    // ---- set-encoder training corpus: single-noun concepts in varied contexts
    std::vector<std::string> train_ctx;
    for (std::size_t i = 0; i < cfg.train_contexts; ++i) train_ctx.push_back(mint.fresh(rng));

    for (std::size_t i = 0; i < cfg.train_concepts; ++i) {
        TrainingConcept tc;
        tc.id = "tc" + std::to_string(i);
        tc.type = mint.fresh(rng);
        if (rng.uniform() < cfg.train_phrase_fraction) tc.type += " " + mint.fresh(rng);
        for (std::size_t j = 0; j < cfg.train_images_per_concept; ++j) {
            const std::string& ctx = train_ctx[rng.uniform_int(train_ctx.size())];
            std::string item_id = tc.id + "_im" + std::to_string(j);
            // per-image appearance: generic class photos vary in appearance,
            // so the set encoder learns to pass stable appearance content
            // through and average unstable appearance away
            world.train_items.emplace_back(
                item_id, ImageRecord{"a photo of a " + tc.type + " beside a " + ctx,
                                     noise_key++, 900000 + noise_key, ""});
            tc.image_ids.push_back(item_id);
        }
        for (std::size_t j = 0; j < cfg.train_captions_per_concept; ++j) {
            const std::string& ctx = train_ctx[rng.uniform_int(train_ctx.size())];
            tc.captions.push_back("a " + tc.type + " beside a " + ctx);
        }
        world.train_concepts.push_back(std::move(tc));
    }

    // ---- benchmarks: personalized concepts share types, differ by identity
    std::vector<std::string> types;
    for (std::size_t i = 0; i < cfg.bench_types; ++i) types.push_back(mint.fresh(bench_rng));
    // few-shot scenes and evaluation scenes are disjoint: a user's training
    // photos do not come from the evaluation gallery's surroundings.
    // Context objects are two-word phrases
    std::vector<std::string> shot_contexts;
    for (std::size_t i = 0; i < cfg.bench_contexts; ++i)
        shot_contexts.push_back(mint.fresh(bench_rng) + " " + mint.fresh(bench_rng));
    std::vector<std::string> contexts;
    for (std::size_t i = 0; i < cfg.bench_contexts; ++i)
        contexts.push_back(mint.fresh(bench_rng) + " " + mint.fresh(bench_rng));

    std::uint64_t bench_noise_key = 1000000;  // decoupled from the corpus counter
    auto build_bench = [&](const std::string& split, std::size_t n_concepts, std::size_t base) {
        RetrievalBenchmark bench;
        bench.split = split;
        for (std::size_t c = 0; c < n_concepts; ++c) {
            std::size_t cid = base + c;
            std::string num = std::to_string(cid);
            while (num.size() < 3) num = "0" + num;
            std::string symbol = "[C" + num + "]";
            std::string identity = mint.fresh(bench_rng);
            for (std::size_t w = 1; w < cfg.identity_words; ++w) identity += " " + mint.fresh(bench_rng);
            const std::string& type = types[cid % types.size()];

            const std::uint64_t appearance = 5000 + cid;
            BenchmarkConcept tc;
            tc.type = type;
            for (std::size_t j = 0; j < cfg.bench_train_images_per_concept; ++j) {
                const std::string& ctx = shot_contexts[bench_rng.uniform_int(shot_contexts.size())];
                tc.train_image_ids.push_back("c" + num + "_tr" + std::to_string(j));
                tc.train_images.push_back(ImageRecord{
                    "the " + identity + " " + type + " near a " + ctx, bench_noise_key++, appearance, ""});
            }

            std::vector<std::size_t> ctx_order(contexts.size());
            for (std::size_t i = 0; i < ctx_order.size(); ++i) ctx_order[i] = i;
            bench_rng.shuffle(ctx_order);
            // evaluation images of one concept share their secondary context;
            // the queried context is what tells them apart
            const std::string& ctx2 =
                contexts[ctx_order[cfg.eval_images_per_concept % ctx_order.size()]];
            for (std::size_t k = 0; k < cfg.eval_images_per_concept; ++k) {
                const std::string& ctx1 = contexts[ctx_order[k % ctx_order.size()]];
                std::string gid = "g" + num + "_" + std::to_string(k);
                bench.gallery.push_back(GalleryItem{
                    gid, ImageRecord{"the " + identity + " " + type + " near a " + ctx1 +
                                         " and a " + ctx2,
                                     bench_noise_key++, appearance, ""}});
                BenchmarkQuery q;
                q.id = "q" + num + "_" + std::to_string(k);
                q.symbol = symbol;
                q.caption = "the " + symbol + " is near a " + ctx1;
                q.detailed_caption = "the " + symbol + " is near a " + ctx1 + " and a " + ctx2;
                q.target = gid;
                bench.queries.push_back(std::move(q));
            }
            bench.concepts.emplace(symbol, std::move(tc));
        }
        bench.validate();
        return bench;
    };

    world.bench_test = build_bench("test", cfg.bench_concepts_test, 0);
    world.bench_val = build_bench("val", cfg.bench_concepts_val, cfg.bench_concepts_test);
    return world;
}

// ---------------------------------------------------------------------------
// training manifest I/O
//
// Schema: {"concepts": [{"id", "type", "image_ids": [], "captions": []}],
//          "cache": path, "vocab": path, "images": [{"id", caption/path,
//          "noise_key"}], "encoder": {...}}. Paths are relative to the
//          manifest's directory.

struct TrainManifest {
    json encoder;
    std::string cache_path;
    std::string vocab_path;
    std::vector<std::pair<std::string, ImageRecord>> images;
    std::vector<TrainingConcept> concepts;
};

inline json train_manifest_to_json(const TrainManifest& m) {
    json j;
    j["encoder"] = m.encoder;
    j["cache"] = m.cache_path;
    j["vocab"] = m.vocab_path;
    j["images"] = json::array();
    for (const auto& [id, rec] : m.images) {
        json rj = image_record_to_json(rec);
        rj["id"] = id;
        j["images"].push_back(rj);
    }
    j["concepts"] = json::array();
    for (const TrainingConcept& c : m.concepts)
        j["concepts"].push_back(
            json{{"id", c.id}, {"type", c.type}, {"image_ids", c.image_ids}, {"captions", c.captions}});
    return j;
}

inline TrainManifest load_train_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open training manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("training manifest " + path + ": " + e.what());
    }
    TrainManifest m;
    m.encoder = j.value("encoder", json::object());
    m.cache_path = j.at("cache").get<std::string>();
    m.vocab_path = j.at("vocab").get<std::string>();
    if (j.contains("images"))
        for (const json& rj : j["images"])
            m.images.emplace_back(rj.at("id").get<std::string>(), image_record_from_json(rj));
    for (const json& cj : j.at("concepts")) {
        TrainingConcept c;
        c.id = cj.at("id").get<std::string>();
        c.type = cj.at("type").get<std::string>();
        c.image_ids = cj.at("image_ids").get<std::vector<std::string>>();
        c.captions = cj.at("captions").get<std::vector<std::string>>();
        m.concepts.push_back(std::move(c));
    }
    return m;
}

inline std::string resolve_relative(const std::string& manifest_path, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

// Assembles the in-memory dataset behind a manifest: loads the cache and
// builds vocabulary embeddings. The cache must exist (run cache-embeddings
// first).
inline TrainingDataset make_training_dataset(const TrainManifest& m, const std::string& manifest_path,
                                             const FrozenEncoderPair& enc) {
    std::string cache_file = resolve_relative(manifest_path, m.cache_path);
    if (!std::filesystem::exists(cache_file))
        throw DataError("embedding cache not found at " + cache_file +
                        " (run cache-embeddings on this manifest first)");
    EmbeddingCache cache = EmbeddingCache::load(cache_file);
    TypeVocabulary vocab = TypeVocabulary::load(resolve_relative(manifest_path, m.vocab_path), enc);
    return TrainingDataset(m.concepts, std::move(cache), std::move(vocab));
}

// Writes vocab.txt, train_manifest.json and the two benchmark manifests.
// The embedding cache is not written here; cache-embeddings does that.
inline void write_toy_world(const ToyWorld& world, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);

    std::string vocab_text;
    for (const std::string& t : world.vocab_types) {
        vocab_text += t;
        vocab_text += '\n';
    }
    write_file_bytes(out_dir + "/vocab.txt", vocab_text);

    TrainManifest m;
    m.encoder = toy_spec_to_json(world.encoder_spec);
    m.cache_path = "train_cache.pvlc";
    m.vocab_path = "vocab.txt";
    m.images = world.train_items;
    m.concepts = world.train_concepts;
    write_file_bytes(out_dir + "/train_manifest.json", train_manifest_to_json(m).dump(2) + "\n");

    json val = benchmark_to_json(world.bench_val);
    val["encoder"] = toy_spec_to_json(world.encoder_spec);
    write_file_bytes(out_dir + "/benchmark_val.json", val.dump(2) + "\n");
    json test = benchmark_to_json(world.bench_test);
    test["encoder"] = toy_spec_to_json(world.encoder_spec);
    write_file_bytes(out_dir + "/benchmark_test.json", test.dump(2) + "\n");
}

}  // namespace palavra
