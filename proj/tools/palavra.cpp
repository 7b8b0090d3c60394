// palavra command line: toy benchmark generation, embedding caches, set
// encoder training, personalization and retrieval evaluation.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "palavra/evalkit.hpp"
#include "palavra/remote_encoder.hpp"
#include "palavra/toy_benchmark.hpp"

using namespace palavra;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string real_encoder;  // host:port of an encoder service; overrides manifests
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a flat JSON object");
    return j;
}

// Flat dotted keys ("train.epochs": 100). Unknown keys are rejected so typos
// cannot silently fall back to defaults.
InverterTrainConfig train_config_from(const json& cfg, const GlobalOpts& g) {
    InverterTrainConfig c;
    for (const auto& [key, value] : cfg.items()) {
        if (key == "train.epochs") c.epochs = value.get<std::size_t>();
        else if (key == "train.batch_concepts") c.batch_concepts = value.get<std::size_t>();
        else if (key == "train.batch_size") c.batch_size = value.get<std::size_t>();
        else if (key == "train.examples_per_concept") c.examples_per_concept = value.get<std::size_t>();
        else if (key == "train.hidden_dim") c.hidden_dim = value.get<std::size_t>();
        else if (key == "train.dropout_rate") c.dropout_rate = value.get<double>();
        else if (key == "train.lr") c.lr = value.get<double>();
        else if (key == "train.lambda_gt") c.lambda_gt = value.get<double>();
        else if (key == "train.temp") c.temp = value.get<double>();
        else if (key == "train.seed") c.seed = value.get<std::uint64_t>();
        else if (key == "train.text_augment") c.text_augment = value.get<bool>();
        else if (key == "train.cycle_weight") c.cycle_weight = value.get<double>();
        else if (key == "train.train_alignment") c.train_alignment = value.get<bool>();
        else if (key == "train.replacement_top_k") c.replacement_top_k = value.get<std::size_t>();
        else if (key == "train.checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
        else if (key.rfind("personalize.", 0) == 0 || key.rfind("toy.", 0) == 0) continue;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    if (g.seed) c.seed = *g.seed;
    return c;
}

PersonalizeConfig personalize_config_from(const json& cfg, const GlobalOpts& g) {
    PersonalizeConfig c;
    for (const auto& [key, value] : cfg.items()) {
        if (key == "personalize.tune_epochs") c.tune_epochs = value.get<std::size_t>();
        else if (key == "personalize.tune_lr") c.tune_lr = value.get<double>();
        else if (key == "personalize.shots") c.shots = value.get<std::size_t>();
        else if (key == "personalize.temp") c.temp = value.get<double>();
        else if (key == "personalize.seed") c.seed = value.get<std::uint64_t>();
    }
    if (g.seed) c.seed = *g.seed;
    return c;
}

std::unique_ptr<FrozenEncoderPair> make_encoder(const json& spec, const GlobalOpts& g) {
    if (!g.real_encoder.empty()) {
        RemoteEncoderConfig rc;
        std::size_t colon = g.real_encoder.rfind(':');
        if (colon == std::string::npos)
            throw ConfigError("--real-encoder expects HOST:PORT, got '" + g.real_encoder + "'");
        rc.host = g.real_encoder.substr(0, colon);
        rc.port = std::stoi(g.real_encoder.substr(colon + 1));
        return std::make_unique<RemoteEncoder>(rc);
    }
    std::string kind = spec.value("kind", "toy");
    if (kind == "toy") return std::make_unique<ToyEncoder>(toy_spec_from_json(spec));
    if (kind == "remote") {
        RemoteEncoderConfig rc;
        rc.host = spec.value("host", rc.host);
        rc.port = spec.value("port", rc.port);
        return std::make_unique<RemoteEncoder>(rc);
    }
    throw ConfigError("unknown encoder kind '" + kind + "'");
}

json manifest_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest " + path + ": " + e.what());
    }
    return j;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::string tok;
    std::istringstream in(csv);
    while (std::getline(in, tok, ',')) {
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
    }
    if (seeds.empty()) throw ConfigError("no seeds given");
    return seeds;
}

std::string checkpoint_path(const std::string& dir, std::uint64_t seed) {
    return dir + "/inverter_seed" + std::to_string(seed) + ".pvta";
}

std::function<InverterModel(std::uint64_t)> checkpoint_loader(const std::string& dir) {
    return [dir](std::uint64_t seed) {
        std::string path = checkpoint_path(dir, seed);
        if (!std::filesystem::exists(path))
            throw ConfigError("missing checkpoint for seed " + std::to_string(seed) + ": " + path);
        return InverterModel::load(path);
    };
}

void print_report(const MetricsReport& rep) {
    std::cout << rep.method << " (" << rep.regime << ", " << rep.split << " split, "
              << rep.per_seed.size() << " seed" << (rep.per_seed.size() == 1 ? "" : "s")
              << ", shots " << rep.shots << ")\n";
    std::cout << "  MRR       " << 100.0 * rep.mrr_mean << " +- " << 100.0 * rep.mrr_sem << "\n";
    for (const auto& [k, v] : rep.recall_mean)
        std::cout << "  Recall@" << k << (k < 10 ? "  " : " ") << 100.0 * v << " +- "
                  << 100.0 * rep.recall_sem.at(k) << "\n";
    std::cout << rep.notice << "\n";
}

int cmd_build_toy_benchmark(const GlobalOpts& g, const json& cfg) {
    ToyWorldConfig wc;
    if (g.seed) wc.seed = *g.seed;
    for (const auto& [key, value] : cfg.items()) {
        if (key == "toy.seed") wc.seed = value.get<std::uint64_t>();
        else if (key == "toy.train_concepts") wc.train_concepts = value.get<std::size_t>();
        else if (key == "toy.noise_scale") wc.encoder.noise_scale = value.get<double>();
        else if (key == "toy.modality_gap") wc.encoder.modality_gap = value.get<double>();
        else if (key == "toy.appearance_scale") wc.encoder.appearance_scale = value.get<double>();
    }
    ToyWorld world = build_toy_world(wc);
    write_toy_world(world, g.out_dir);

    // calibrated toy-scale settings; the defaults inside the config types
    // target the full-scale setup
    InverterTrainConfig toy = toy_train_config();
    json toy_cfg{{"train.epochs", toy.epochs},
                 {"train.batch_concepts", toy.batch_concepts},
                 {"train.batch_size", toy.batch_size},
                 {"train.examples_per_concept", toy.examples_per_concept},
                 {"train.hidden_dim", toy.hidden_dim},
                 {"train.lr", toy.lr},
                 {"train.lambda_gt", toy.lambda_gt},
                 {"personalize.tune_epochs", 30},
                 {"personalize.tune_lr", 0.01},
                 {"personalize.shots", 5}};
    write_file_bytes(g.out_dir + "/toy_config.json", toy_cfg.dump(2) + "\n");

    std::cout << "toy world written to " << g.out_dir << ": train_manifest.json, "
              << "benchmark_val.json, benchmark_test.json, vocab.txt, toy_config.json\n"
              << "next: palavra cache-embeddings --manifest " << g.out_dir
              << "/train_manifest.json\n";
    return 0;
}

int cmd_cache_embeddings(const GlobalOpts& g, const std::string& manifest_path) {
    TrainManifest m = load_train_manifest(manifest_path);
    std::unique_ptr<FrozenEncoderPair> enc = make_encoder(m.encoder, g);
    std::string cache_file = resolve_relative(manifest_path, m.cache_path);
    EmbeddingCache cache = cache_embeddings(m.images, *enc, cache_file);
    std::cout << "cached " << cache.count() << " embeddings (dim " << cache.dim() << ") at "
              << cache_file << "\n";
    return 0;
}

int cmd_train_inverter(const GlobalOpts& g, const json& cfg, const std::string& manifest_path) {
    TrainManifest m = load_train_manifest(manifest_path);
    std::unique_ptr<FrozenEncoderPair> enc = make_encoder(m.encoder, g);
    TrainingDataset data = make_training_dataset(m, manifest_path, *enc);
    InverterTrainConfig tcfg = train_config_from(cfg, g);
    tcfg.checkpoint_dir = g.out_dir;
    std::filesystem::create_directories(g.out_dir);

    TrainResult result = train_inverter(data, *enc, tcfg);
    std::string path = checkpoint_path(g.out_dir, tcfg.seed);
    result.model.save(path, inverter_metadata(result.model, tcfg));
    std::cout << "trained " << result.batch_log.size() << " batches";
    if (!result.step_losses.empty())
        std::cout << " (loss " << result.step_losses.front() << " -> " << result.step_losses.back()
                  << ")";
    std::cout << "; checkpoint at " << path << "\n";
    return 0;
}

int cmd_personalize(const GlobalOpts& g, const json& cfg, const std::string& checkpoint,
                    const std::string& benchmark_path) {
    json bj = manifest_json(benchmark_path);
    RetrievalBenchmark bench = benchmark_from_json(bj);
    std::unique_ptr<FrozenEncoderPair> enc = make_encoder(bj.value("encoder", json::object()), g);
    if (!std::filesystem::exists(checkpoint))
        throw ConfigError("checkpoint not found: " + checkpoint);
    InverterModel model = InverterModel::load(checkpoint);
    PersonalizeConfig pcfg = personalize_config_from(cfg, g);

    TokenRegistry registry;
    for (const auto& [symbol, tc] : bench.concepts) {
        std::vector<std::size_t> idx =
            nested_subset(pcfg.seed, symbol, pcfg.shots, tc.train_images.size());
        ConceptExampleSet examples{symbol, {}};
        for (std::size_t i : idx)
            examples.embeddings.push_back(enc->encode_image(tc.train_images[i]));
        registry.register_token(personalize(examples, tc.type, model, *enc, pcfg));
    }
    std::filesystem::create_directories(g.out_dir);
    std::string path = g.out_dir + "/tokens_seed" + std::to_string(pcfg.seed) + ".pvta";
    registry.save(path);
    std::cout << "personalized " << registry.size() << " concepts; tokens at " << path << "\n";
    return 0;
}

int cmd_evaluate(const GlobalOpts& g, const json& cfg, const std::string& benchmark_path,
                 const std::string& method, const std::string& checkpoints,
                 const std::string& seeds_csv, const std::string& regime, std::size_t shots) {
    json bj = manifest_json(benchmark_path);
    RetrievalBenchmark bench = benchmark_from_json(bj);
    std::unique_ptr<FrozenEncoderPair> enc = make_encoder(bj.value("encoder", json::object()), g);

    EvalOptions opts;
    opts.seeds = parse_seeds(seeds_csv);
    opts.regime = parse_regime(regime);
    opts.shots = shots;
    opts.personalize = personalize_config_from(cfg, g);
    opts.out_dir = g.out_dir;
    if (method == "palavra" || method == "palavra_no_tuning") {
        if (checkpoints.empty())
            throw ConfigError("method '" + method + "' needs --checkpoints DIR");
        opts.load_model = checkpoint_loader(checkpoints);
    }
    MetricsReport rep = evaluate(method, bench, *enc, opts);
    print_report(rep);
    return 0;
}

int cmd_ablate(const GlobalOpts& g, const json& cfg, const std::string& flag_name,
               const std::string& manifest_path, const std::string& benchmark_path,
               const std::string& seeds_csv, const std::string& regime, std::size_t shots) {
    AblationFlag flag = parse_ablation_flag(flag_name);
    TrainManifest m = load_train_manifest(manifest_path);
    json bj = manifest_json(benchmark_path);
    RetrievalBenchmark bench = benchmark_from_json(bj);
    std::unique_ptr<FrozenEncoderPair> enc = make_encoder(m.encoder, g);
    TrainingDataset data = make_training_dataset(m, manifest_path, *enc);

    EvalOptions opts;
    opts.seeds = parse_seeds(seeds_csv);
    opts.regime = parse_regime(regime);
    opts.shots = shots;
    opts.personalize = personalize_config_from(cfg, g);
    opts.out_dir = g.out_dir;
    InverterTrainConfig tcfg = train_config_from(cfg, g);
    MetricsReport rep = run_ablation(flag, data, bench, *enc, tcfg, opts);
    print_report(rep);
    return 0;
}

int cmd_shots_sweep(const GlobalOpts& g, const json& cfg, const std::string& benchmark_path,
                    const std::string& method, const std::string& checkpoints,
                    const std::string& seeds_csv, const std::string& regime,
                    const std::string& shots_csv) {
    json bj = manifest_json(benchmark_path);
    RetrievalBenchmark bench = benchmark_from_json(bj);
    std::unique_ptr<FrozenEncoderPair> enc = make_encoder(bj.value("encoder", json::object()), g);

    std::vector<std::size_t> counts;
    for (std::uint64_t s : parse_seeds(shots_csv)) counts.push_back(static_cast<std::size_t>(s));

    EvalOptions opts;
    opts.seeds = parse_seeds(seeds_csv);
    opts.regime = parse_regime(regime);
    opts.personalize = personalize_config_from(cfg, g);
    opts.out_dir = g.out_dir;
    if (method == "palavra" || method == "palavra_no_tuning") {
        if (checkpoints.empty())
            throw ConfigError("method '" + method + "' needs --checkpoints DIR");
        opts.load_model = checkpoint_loader(checkpoints);
    }
    std::vector<MetricsReport> reports = shots_sweep(method, bench, *enc, counts, opts);
    for (std::size_t i = 0; i < counts.size(); ++i)
        std::cout << counts[i] << " shots: MRR " << 100.0 * reports[i].mrr_mean << " +- "
                  << 100.0 * reports[i].mrr_sem << "\n";
    std::cout << kScaleNotice << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"palavra: personalized vocabulary expansion for frozen dual encoders"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "flat JSON config file (dotted keys)");
    std::uint64_t seed_value = 0;
    CLI::Option* seed_opt = app.add_option("--seed", seed_value, "seed override");
    app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
    app.add_option("--real-encoder", g.real_encoder,
                   "HOST:PORT of a real encoder service (overrides manifest encoders)");

    auto* build = app.add_subcommand("build-toy-benchmark",
                                     "generate the toy world: manifests, vocabulary, config");

    std::string manifest_path;
    auto* cache = app.add_subcommand("cache-embeddings", "encode a manifest's items into its cache");
    cache->add_option("--manifest", manifest_path, "training manifest")->required();

    auto* train = app.add_subcommand("train-inverter", "train the set encoder and alignment matrix");
    train->add_option("--manifest", manifest_path, "training manifest")->required();

    std::string checkpoint, benchmark_path;
    auto* pers = app.add_subcommand("personalize", "learn tokens for a benchmark's concepts");
    pers->add_option("--checkpoint", checkpoint, "trained inverter checkpoint")->required();
    pers->add_option("--benchmark", benchmark_path, "benchmark manifest")->required();

    std::string method = "palavra", checkpoints_dir, seeds_csv = "0,1,2,3,4", regime = "rich";
    std::size_t shots = 5;
    auto* eval = app.add_subcommand("evaluate", "run a method over a benchmark");
    eval->add_option("--benchmark", benchmark_path, "benchmark manifest")->required();
    eval->add_option("--method", method,
                     "palavra | palavra_no_tuning | text_only | avg_im | im_and_text | random")
        ->capture_default_str();
    eval->add_option("--checkpoints", checkpoints_dir, "directory with inverter_seed<N>.pvta");
    eval->add_option("--seeds", seeds_csv, "comma-separated seeds")->capture_default_str();
    eval->add_option("--regime", regime, "concept_only | rich | detailed")->capture_default_str();
    eval->add_option("--shots", shots, "few-shot images per concept")->capture_default_str();

    std::string flag_name;
    auto* abl = app.add_subcommand("ablate", "train and evaluate one ablation variant");
    abl->add_option("--flag", flag_name,
                    "no_text_augment | only_gt | only_cycle | only_tuning | no_alignment")
        ->required();
    abl->add_option("--manifest", manifest_path, "training manifest")->required();
    abl->add_option("--benchmark", benchmark_path, "benchmark manifest")->required();
    abl->add_option("--seeds", seeds_csv, "comma-separated seeds")->capture_default_str();
    abl->add_option("--regime", regime, "query regime")->capture_default_str();
    abl->add_option("--shots", shots, "few-shot images per concept")->capture_default_str();

    std::string shots_csv = "2,5,10";
    auto* sweep = app.add_subcommand("shots-sweep", "evaluate across shot counts (nested subsets)");
    sweep->add_option("--benchmark", benchmark_path, "benchmark manifest")->required();
    sweep->add_option("--method", method, "method to sweep")->capture_default_str();
    sweep->add_option("--checkpoints", checkpoints_dir, "directory with inverter_seed<N>.pvta");
    sweep->add_option("--seeds", seeds_csv, "comma-separated seeds")->capture_default_str();
    sweep->add_option("--regime", regime, "query regime")->capture_default_str();
    sweep->add_option("--shots", shots_csv, "comma-separated shot counts")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    if (*seed_opt) g.seed = seed_value;

    try {
        json cfg = load_config(g.config_path);
        if (build->parsed()) return cmd_build_toy_benchmark(g, cfg);
        if (cache->parsed()) return cmd_cache_embeddings(g, manifest_path);
        if (train->parsed()) return cmd_train_inverter(g, cfg, manifest_path);
        if (pers->parsed()) return cmd_personalize(g, cfg, checkpoint, benchmark_path);
        if (eval->parsed())
            return cmd_evaluate(g, cfg, benchmark_path, method, checkpoints_dir, seeds_csv, regime,
                                shots);
        if (abl->parsed())
            return cmd_ablate(g, cfg, flag_name, manifest_path, benchmark_path, seeds_csv, regime,
                              shots);
        if (sweep->parsed())
            return cmd_shots_sweep(g, cfg, benchmark_path, method, checkpoints_dir, seeds_csv,
                                   regime, shots_csv);
        throw ConfigError("no subcommand selected");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
