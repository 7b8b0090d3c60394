#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "palavra/encoder.hpp"
#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"
#include "palavra/textaug.hpp"
#include "palavra/token_registry.hpp"
#include "palavra/toy_encoder.hpp"
#include "palavra/training.hpp"

namespace palavra {

using json = nlohmann::json;

// Notice attached to every toy-scale report: desk-scale numbers are
// direction-level only.
inline const char* kScaleNotice =
    "NOTICE: toy-scale run. Absolute numbers from the published full-scale evaluation "
    "(e.g. retrieval MRR 28.4 on DeepFashion2, 61.2 on YTVOS) require the original "
    "web-scale encoder and the licensed benchmark datasets and are NOT reproducible "
    "here; toy results mirror orderings only. To attempt full-scale numbers, point "
    "the CLI at a real encoder service via --real-encoder (outside the test suite).";

enum class QueryRegime { concept_only, rich, detailed };

inline QueryRegime parse_regime(const std::string& s) {
    if (s == "concept_only") return QueryRegime::concept_only;
    if (s == "rich") return QueryRegime::rich;
    if (s == "detailed") return QueryRegime::detailed;
    throw ConfigError("unknown query regime '" + s + "'");
}

inline std::string regime_name(QueryRegime r) {
    switch (r) {
        case QueryRegime::concept_only: return "concept_only";
        case QueryRegime::rich: return "rich";
        case QueryRegime::detailed: return "detailed";
    }
    throw ConfigError("unknown query regime");
}

struct GalleryItem {
    std::string id;
    ImageRecord image;
};

struct BenchmarkQuery {
    std::string id;
    std::string symbol;
    std::string caption;           // rich (short) query text, contains the symbol
    std::string detailed_caption;  // optional second caption column
    std::string target;            // gallery item id
};

struct BenchmarkConcept {
    std::string type;
    std::vector<std::string> train_image_ids;
    std::vector<ImageRecord> train_images;
};

struct RetrievalBenchmark {
    std::string split;  // "val" | "test"
    std::vector<GalleryItem> gallery;
    std::vector<BenchmarkQuery> queries;
    std::map<std::string, BenchmarkConcept> concepts;

    void validate() const {
        if (split != "val" && split != "test")
            throw DataError("benchmark: split must be 'val' or 'test', got '" + split + "'");
        std::map<std::string, bool> gallery_ids;
        for (const GalleryItem& g : gallery) {
            if (gallery_ids.count(g.id)) throw DataError("benchmark: duplicate gallery id " + g.id);
            gallery_ids[g.id] = true;
        }
        for (const BenchmarkQuery& q : queries) {
            if (!gallery_ids.count(q.target))
                throw DataError("benchmark: query " + q.id + " targets unknown gallery id " + q.target);
            if (!concepts.count(q.symbol))
                throw DataError("benchmark: query " + q.id + " uses unknown symbol " + q.symbol);
        }
        for (const auto& [symbol, c] : concepts) {
            if (!is_valid_symbol(symbol))
                throw DataError("benchmark: bad concept symbol " + symbol);
            for (const std::string& id : c.train_image_ids)
                if (gallery_ids.count(id))
                    throw DataError("benchmark: training image " + id + " of " + symbol +
                                    " also appears in the gallery");
        }
    }

    std::string digest() const {
        Fnv64 f;
        f.update(split);
        for (const GalleryItem& g : gallery) {
            f.update(g.id);
            f.update(g.image.caption);
            f.update_u64(g.image.noise_key);
            f.update_u64(g.image.appearance_key);
        }
        for (const BenchmarkQuery& q : queries) {
            f.update(q.id);
            f.update(q.symbol);
            f.update(q.caption);
            f.update(q.detailed_caption);
            f.update(q.target);
        }
        for (const auto& [symbol, c] : concepts) {
            f.update(symbol);
            f.update(c.type);
            for (const ImageRecord& r : c.train_images) {
                f.update(r.caption);
                f.update_u64(r.noise_key);
                f.update_u64(r.appearance_key);
            }
        }
        return f.hex();
    }
};

// ---------------------------------------------------------------------------
// manifest (de)serialization

inline json image_record_to_json(const ImageRecord& r) {
    json j;
    if (!r.caption.empty()) j["caption"] = r.caption;
    if (!r.path.empty()) j["path"] = r.path;
    j["noise_key"] = r.noise_key;
    if (r.appearance_key != 0) j["appearance_key"] = r.appearance_key;
    return j;
}

inline ImageRecord image_record_from_json(const json& j) {
    ImageRecord r;
    r.caption = j.value("caption", "");
    r.path = j.value("path", "");
    r.noise_key = j.value("noise_key", 0ULL);
    r.appearance_key = j.value("appearance_key", 0ULL);
    return r;
}

inline json toy_spec_to_json(const ToyEncoderSpec& s) {
    return json{{"kind", "toy"},
                {"seed", s.seed},
                {"vocab_size", s.vocab_size},
                {"word_dim", s.word_dim},
                {"output_dim", s.output_dim},
                {"noise_scale", s.noise_scale},
                {"modality_gap", s.modality_gap},
                {"appearance_scale", s.appearance_scale},
                {"context_length", s.context_length}};
}

inline ToyEncoderSpec toy_spec_from_json(const json& j) {
    ToyEncoderSpec s;
    s.seed = j.value("seed", 0ULL);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.word_dim = j.value("word_dim", s.word_dim);
    s.output_dim = j.value("output_dim", s.output_dim);
    s.noise_scale = j.value("noise_scale", 0.0);
    s.modality_gap = j.value("modality_gap", 0.0);
    s.appearance_scale = j.value("appearance_scale", 0.0);
    s.context_length = j.value("context_length", s.context_length);
    return s;
}

inline json benchmark_to_json(const RetrievalBenchmark& b) {
    json j;
    j["split"] = b.split;
    j["gallery"] = json::array();
    for (const GalleryItem& g : b.gallery)
        j["gallery"].push_back(json{{"id", g.id}, {"image", image_record_to_json(g.image)}});
    j["queries"] = json::array();
    for (const BenchmarkQuery& q : b.queries) {
        json qj{{"id", q.id}, {"symbol", q.symbol}, {"caption", q.caption}, {"target", q.target}};
        if (!q.detailed_caption.empty()) qj["detailed_caption"] = q.detailed_caption;
        j["queries"].push_back(qj);
    }
    j["concepts"] = json::object();
    for (const auto& [symbol, c] : b.concepts) {
        json cj;
        cj["type"] = c.type;
        cj["train_images"] = json::array();
        for (std::size_t i = 0; i < c.train_images.size(); ++i) {
            json rj = image_record_to_json(c.train_images[i]);
            if (i < c.train_image_ids.size()) rj["id"] = c.train_image_ids[i];
            cj["train_images"].push_back(rj);
        }
        j["concepts"][symbol] = cj;
    }
    return j;
}

inline RetrievalBenchmark benchmark_from_json(const json& j) {
    RetrievalBenchmark b;
    b.split = j.value("split", "test");
    for (const json& gj : j.at("gallery"))
        b.gallery.push_back(GalleryItem{gj.at("id").get<std::string>(),
                                        image_record_from_json(gj.at("image"))});
    for (const json& qj : j.at("queries")) {
        BenchmarkQuery q;
        q.id = qj.at("id").get<std::string>();
        q.symbol = qj.at("symbol").get<std::string>();
        q.caption = qj.at("caption").get<std::string>();
        q.detailed_caption = qj.value("detailed_caption", "");
        q.target = qj.at("target").get<std::string>();
        b.queries.push_back(std::move(q));
    }
    for (const auto& [symbol, cj] : j.at("concepts").items()) {
        BenchmarkConcept c;
        c.type = cj.at("type").get<std::string>();
        for (const json& rj : cj.at("train_images")) {
            c.train_images.push_back(image_record_from_json(rj));
            if (rj.contains("id")) c.train_image_ids.push_back(rj.at("id").get<std::string>());
        }
        b.concepts.emplace(symbol, std::move(c));
    }
    b.validate();
    return b;
}

inline RetrievalBenchmark load_benchmark(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open benchmark manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("benchmark manifest " + path + ": " + e.what());
    }
    return benchmark_from_json(j);
}

// ---------------------------------------------------------------------------
// ranking and metrics

// Descending cosine similarity, ties broken by ascending item id.
inline std::vector<std::string> rank_gallery(const Vec& q,
                                             const std::vector<std::pair<std::string, Vec>>& gallery) {
    if (gallery.empty()) throw PreconditionError("rank_gallery: empty gallery");
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(gallery.size());
    for (const auto& [id, v] : gallery) scored.emplace_back(cosine(q, v), &id);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });
    std::vector<std::string> out;
    out.reserve(scored.size());
    for (const auto& [s, id] : scored) out.push_back(*id);
    return out;
}

inline std::size_t rank_of(const std::vector<std::string>& ranking, const std::string& target) {
    for (std::size_t i = 0; i < ranking.size(); ++i)
        if (ranking[i] == target) return i + 1;
    throw DataError("rank_of: target '" + target + "' not in ranking");
}

inline double mrr(const std::vector<std::size_t>& ranks) {
    if (ranks.empty()) throw PreconditionError("mrr: empty rank list");
    double s = 0.0;
    for (std::size_t r : ranks) {
        if (r < 1) throw PreconditionError("mrr: ranks are 1-based");
        s += 1.0 / static_cast<double>(r);
    }
    return s / static_cast<double>(ranks.size());
}

inline double recall_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw PreconditionError("recall_at_k: empty rank list");
    if (k < 1) throw PreconditionError("recall_at_k: k must be >= 1");
    std::size_t hit = 0;
    for (std::size_t r : ranks) {
        if (r < 1) throw PreconditionError("recall_at_k: ranks are 1-based");
        if (r <= k) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

struct SeedMetrics {
    std::uint64_t seed = 0;
    double mrr = 0.0;
    std::map<std::size_t, double> recall;  // K -> recall@K
};

struct MetricsReport {
    std::string method;
    std::string regime;
    std::string split;
    std::size_t shots = 0;
    std::vector<SeedMetrics> per_seed;
    double mrr_mean = 0.0;
    double mrr_sem = 0.0;
    std::map<std::size_t, double> recall_mean;
    std::map<std::size_t, double> recall_sem;
    std::string benchmark_digest;
    std::string config_digest;
    std::string notice = kScaleNotice;
};

inline std::pair<double, double> mean_and_sem(const std::vector<double>& xs) {
    std::size_t n = xs.size();
    if (n == 0) throw PreconditionError("mean_and_sem: empty sample");
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
    if (n == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return {mean, sd / std::sqrt(static_cast<double>(n))};
}

inline void finalize_report(MetricsReport& rep) {
    std::vector<double> mrrs;
    for (const SeedMetrics& s : rep.per_seed) mrrs.push_back(s.mrr);
    auto [m, sem] = mean_and_sem(mrrs);
    rep.mrr_mean = m;
    rep.mrr_sem = sem;
    rep.recall_mean.clear();
    rep.recall_sem.clear();
    if (!rep.per_seed.empty()) {
        for (const auto& [k, unused] : rep.per_seed[0].recall) {
            (void)unused;
            std::vector<double> vals;
            for (const SeedMetrics& s : rep.per_seed) vals.push_back(s.recall.at(k));
            auto [rm, rs] = mean_and_sem(vals);
            rep.recall_mean[k] = rm;
            rep.recall_sem[k] = rs;
        }
    }
}

inline json report_to_json(const MetricsReport& rep) {
    json j;
    j["method"] = rep.method;
    j["regime"] = rep.regime;
    j["split"] = rep.split;
    j["shots"] = rep.shots;
    j["benchmark_digest"] = rep.benchmark_digest;
    j["config_digest"] = rep.config_digest;
    j["notice"] = rep.notice;
    j["per_seed"] = json::array();
    for (const SeedMetrics& s : rep.per_seed) {
        json sj{{"seed", s.seed}, {"mrr", s.mrr}};
        for (const auto& [k, v] : s.recall) sj["recall@" + std::to_string(k)] = v;
        j["per_seed"].push_back(sj);
    }
    j["mean"]["mrr"] = rep.mrr_mean;
    j["sem"]["mrr"] = rep.mrr_sem;
    for (const auto& [k, v] : rep.recall_mean) j["mean"]["recall@" + std::to_string(k)] = v;
    for (const auto& [k, v] : rep.recall_sem) j["sem"]["recall@" + std::to_string(k)] = v;
    return j;
}

// ---------------------------------------------------------------------------
// plots (dependency-free SVG line charts)

struct PlotSeries {
    std::string name;
    std::vector<double> ys;
};

inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::string& y_label, const std::vector<double>& xs,
                                  const std::vector<PlotSeries>& series) {
    const int W = 640, H = 420, ML = 70, MR = 30, MT = 50, MB = 60;
    double xmin = xs.front(), xmax = xs.back();
    if (xmax == xmin) xmax = xmin + 1.0;
    double ymin = 0.0, ymax = 0.0;
    for (const PlotSeries& s : series)
        for (double y : s.ys) ymax = std::max(ymax, y);
    if (ymax <= ymin) ymax = 1.0;
    ymax *= 1.05;

    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return std::string(buf);
    };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
    s << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
      << H - MB << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double y = ymin + (ymax - ymin) * i / 4.0;
        s << "<text x=\"" << ML - 8 << "\" y=\"" << py(y) + 4
          << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
        s << "<line x1=\"" << ML << "\" y1=\"" << py(y) << "\" x2=\"" << W - MR << "\" y2=\""
          << py(y) << "\" stroke=\"#dddddd\"/>\n";
    }
    for (double x : xs) {
        s << "<text x=\"" << px(x) << "\" y=\"" << H - MB + 18 << "\" text-anchor=\"middle\">"
          << fmt(x) << "</text>\n";
    }
    s << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 16
      << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    s << "<text x=\"18\" y=\"" << (MT + H - MB) / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << (MT + H - MB) / 2 << ")\">"
      << y_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = colors[k % 7];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < xs.size() && i < series[k].ys.size(); ++i)
            s << px(xs[i]) << "," << py(series[k].ys[i]) << " ";
        s << "\"/>\n";
        for (std::size_t i = 0; i < xs.size() && i < series[k].ys.size(); ++i)
            s << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(series[k].ys[i])
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        s << "<text x=\"" << W - MR - 6 << "\" y=\"" << MT + 16 * (static_cast<int>(k) + 1)
          << "\" text-anchor=\"end\" fill=\"" << color << "\">" << series[k].name << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// evaluation protocol

// Seed-matched few-shot subset: a deterministic permutation of a concept's
// training pool that depends only on (seed, symbol), truncated to the shot
// count. Smaller subsets are prefixes of larger ones.
inline std::vector<std::size_t> nested_subset(std::uint64_t seed, const std::string& symbol,
                                              std::size_t shots, std::size_t pool) {
    if (shots == 0) throw PreconditionError("nested_subset: shots must be >= 1");
    if (shots > pool)
        throw PreconditionError("nested_subset: " + std::to_string(shots) + " shots requested, " +
                                std::to_string(pool) + " available for " + symbol);
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix64(seed ^ fnv64("subset:" + symbol)));
    rng.shuffle(idx);
    idx.resize(shots);
    return idx;
}

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> methods = {"palavra",   "palavra_no_tuning", "text_only",
                                                     "avg_im",    "im_and_text",       "random"};
    return methods;
}

inline void check_method(const std::string& method) {
    const auto& ms = known_methods();
    if (std::find(ms.begin(), ms.end(), method) == ms.end())
        throw ConfigError("unknown method '" + method + "'");
}

struct EvalOptions {
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    QueryRegime regime = QueryRegime::rich;
    std::size_t shots = 5;
    PersonalizeConfig personalize;  // seed field is overridden per evaluation seed
    PersonalizeInit init = PersonalizeInit::set_encoder;
    // Supplies the trained model for a seed; required for palavra methods.
    std::function<InverterModel(std::uint64_t seed)> load_model;
    std::string out_dir;       // empty: no files written
    std::string method_label;  // report name override (used by ablation runs)
};

namespace detail {

inline std::string query_text(const BenchmarkQuery& q, QueryRegime regime) {
    switch (regime) {
        case QueryRegime::concept_only: return "A photo of a " + q.symbol;
        case QueryRegime::rich: return q.caption;
        case QueryRegime::detailed:
            if (q.detailed_caption.empty())
                throw DataError("query " + q.id + " has no detailed caption");
            return q.detailed_caption;
    }
    throw ConfigError("unknown query regime");
}

inline std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

}  // namespace detail

// Runs one method over the benchmark: per seed, the few-shot subsets are the
// same for every method, palavra methods personalize from the seed's trained
// model, and queries are ranked against the full gallery by cosine. Writes a
// report document, a recall curve and (for palavra methods) token files when
// out_dir is set.
inline MetricsReport evaluate(const std::string& method, const RetrievalBenchmark& bench,
                              const FrozenEncoderPair& enc, const EvalOptions& opts) {
    check_method(method);
    bench.validate();
    if (bench.queries.empty()) throw DataError("evaluate: benchmark has no queries");
    if (opts.seeds.empty()) throw ConfigError("evaluate: no seeds given");

    const bool is_palavra = method == "palavra" || method == "palavra_no_tuning";
    const bool needs_images = method == "avg_im" || method == "im_and_text" || is_palavra;

    std::vector<std::pair<std::string, Vec>> gallery;
    gallery.reserve(bench.gallery.size());
    for (const GalleryItem& g : bench.gallery) gallery.emplace_back(g.id, enc.encode_image(g.image));

    const std::vector<std::size_t> ks = {1, 5, 10};

    MetricsReport rep;
    rep.method = opts.method_label.empty() ? method : opts.method_label;
    rep.regime = regime_name(opts.regime);
    rep.split = bench.split;
    rep.shots = opts.shots;
    rep.benchmark_digest = bench.digest();
    rep.config_digest = opts.personalize.digest();

    for (std::uint64_t seed : opts.seeds) {
        // seed-matched few-shot embeddings per concept (identical across methods)
        std::map<std::string, std::vector<Vec>> shot_embeddings;
        if (needs_images) {
            for (const auto& [symbol, tc] : bench.concepts) {
                if (tc.train_images.empty())
                    throw ConfigError("method '" + method + "' needs training images, but concept " +
                                      symbol + " has none");
                std::vector<std::size_t> idx =
                    nested_subset(seed, symbol, opts.shots, tc.train_images.size());
                std::vector<Vec> embs;
                embs.reserve(idx.size());
                for (std::size_t i : idx) embs.push_back(enc.encode_image(tc.train_images[i]));
                shot_embeddings.emplace(symbol, std::move(embs));
            }
        }

        TokenRegistry registry;
        if (is_palavra) {
            if (!opts.load_model)
                throw ConfigError("method '" + method + "' requires a trained checkpoint per seed");
            InverterModel model = opts.load_model(seed);
            PersonalizeConfig pcfg = opts.personalize;
            pcfg.seed = seed;
            if (method == "palavra_no_tuning") pcfg.tune_epochs = 0;
            for (const auto& [symbol, tc] : bench.concepts) {
                ConceptExampleSet examples{symbol, shot_embeddings.at(symbol)};
                registry.register_token(
                    personalize(examples, tc.type, model, enc, pcfg, opts.init));
            }
            if (!opts.out_dir.empty()) {
                std::filesystem::create_directories(opts.out_dir);
                registry.save(opts.out_dir + "/tokens_" + rep.method + "_seed" +
                              std::to_string(seed) + ".pvta");
            }
        }

        std::vector<std::size_t> ranks;
        ranks.reserve(bench.queries.size());
        for (const BenchmarkQuery& q : bench.queries) {
            if (method == "random") {
                Rng rng(mix64(seed ^ fnv64("random:" + q.id)));
                std::vector<std::size_t> order(gallery.size());
                std::iota(order.begin(), order.end(), 0);
                rng.shuffle(order);
                for (std::size_t i = 0; i < order.size(); ++i) {
                    if (bench.gallery[order[i]].id == q.target) {
                        ranks.push_back(i + 1);
                        break;
                    }
                }
                continue;
            }

            const std::string& type = bench.concepts.at(q.symbol).type;
            Vec qv;
            if (is_palavra) {
                qv = encode_query(detail::query_text(q, opts.regime), registry, enc);
            } else if (method == "text_only") {
                std::string text = detail::replace_all(detail::query_text(q, opts.regime), q.symbol, type);
                qv = enc.encode_sentence(text);
            } else if (method == "avg_im") {
                qv = normalized(mean_of(shot_embeddings.at(q.symbol)));
            } else {  // im_and_text: normalized mean of the two unit query vectors
                std::string text = detail::replace_all(detail::query_text(q, opts.regime), q.symbol, type);
                Vec t = enc.encode_sentence(text);
                Vec a = normalized(mean_of(shot_embeddings.at(q.symbol)));
                Vec m(t.size());
                for (std::size_t i = 0; i < t.size(); ++i) m[i] = 0.5 * (t[i] + a[i]);
                qv = normalized(m);
            }
            ranks.push_back(rank_of(rank_gallery(qv, gallery), q.target));
        }

        SeedMetrics sm;
        sm.seed = seed;
        sm.mrr = mrr(ranks);
        for (std::size_t k : ks) sm.recall[k] = recall_at_k(ranks, k);
        rep.per_seed.push_back(std::move(sm));
    }

    finalize_report(rep);

    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        std::ofstream out(opts.out_dir + "/report_" + rep.method + "_" + rep.regime + ".json");
        out << report_to_json(rep).dump(2) << "\n";

        std::vector<double> xs;
        PlotSeries series{rep.method, {}};
        for (std::size_t k : ks) {
            xs.push_back(static_cast<double>(k));
            series.ys.push_back(rep.recall_mean.at(k));
        }
        std::ofstream svg(opts.out_dir + "/recall_" + rep.method + "_" + rep.regime + ".svg");
        svg << svg_line_chart("Recall at K (" + rep.method + ", " + rep.regime + ", " + rep.split + ")",
                              "K", "recall", xs, {series});
    }
    return rep;
}

// Convenience wrapper matching the baseline contract: baselines never touch
// the token registry (asserted by tests), so the registry parameter only
// documents that intent.
inline MetricsReport run_baseline(const std::string& name, const RetrievalBenchmark& bench,
                                  const FrozenEncoderPair& enc, const TokenRegistry& reg,
                                  const EvalOptions& opts) {
    (void)reg;
    if (name == "palavra" || name == "palavra_no_tuning")
        throw ConfigError("run_baseline: '" + name + "' is not a baseline");
    return evaluate(name, bench, enc, opts);
}

// One evaluate run per shot count, sharing the nested subsets (a smaller
// count uses a prefix of a larger count's images).
inline std::vector<MetricsReport> shots_sweep(const std::string& method,
                                              const RetrievalBenchmark& bench,
                                              const FrozenEncoderPair& enc,
                                              const std::vector<std::size_t>& shot_counts,
                                              const EvalOptions& base_opts) {
    if (shot_counts.empty()) throw ConfigError("shots_sweep: no shot counts");
    std::size_t max_count = *std::max_element(shot_counts.begin(), shot_counts.end());
    for (const auto& [symbol, c] : bench.concepts)
        if (c.train_images.size() < max_count)
            throw PreconditionError("shots_sweep: concept " + symbol + " has only " +
                                    std::to_string(c.train_images.size()) + " training images, " +
                                    std::to_string(max_count) + " shots requested");

    std::vector<MetricsReport> reports;
    for (std::size_t shots : shot_counts) {
        EvalOptions opts = base_opts;
        opts.shots = shots;
        opts.out_dir.clear();  // only the sweep summary is written
        reports.push_back(evaluate(method, bench, enc, opts));
    }

    if (!base_opts.out_dir.empty()) {
        std::filesystem::create_directories(base_opts.out_dir);
        json j;
        j["method"] = reports.front().method;
        j["regime"] = reports.front().regime;
        j["split"] = reports.front().split;
        j["notice"] = kScaleNotice;
        j["sweep"] = json::array();
        for (std::size_t i = 0; i < shot_counts.size(); ++i) {
            json r = report_to_json(reports[i]);
            r["shots"] = shot_counts[i];
            j["sweep"].push_back(r);
        }
        std::ofstream out(base_opts.out_dir + "/sweep_" + reports.front().method + "_" +
                          reports.front().regime + ".json");
        out << j.dump(2) << "\n";

        std::vector<double> xs;
        PlotSeries series{reports.front().method, {}};
        for (std::size_t i = 0; i < shot_counts.size(); ++i) {
            xs.push_back(static_cast<double>(shot_counts[i]));
            series.ys.push_back(reports[i].mrr_mean);
        }
        std::ofstream svg(base_opts.out_dir + "/shots_" + reports.front().method + "_" +
                          reports.front().regime + ".svg");
        svg << svg_line_chart("MRR vs shots (" + reports.front().method + ")", "shots", "MRR", xs,
                              {series});
    }
    return reports;
}

// Trains the flagged pipeline variant per seed and evaluates it. only_tuning
// reuses the unmodified training config but personalizes from a random draw.
inline MetricsReport run_ablation(AblationFlag flag, const TrainingDataset& data,
                                  const RetrievalBenchmark& bench, const FrozenEncoderPair& enc,
                                  const InverterTrainConfig& base_cfg, const EvalOptions& base_opts) {
    InverterTrainConfig cfg = base_cfg;
    PersonalizeInit init = apply_ablation(flag, cfg);

    auto models = std::make_shared<std::map<std::uint64_t, InverterModel>>();
    for (std::uint64_t seed : base_opts.seeds) {
        InverterTrainConfig seed_cfg = cfg;
        seed_cfg.seed = seed;
        models->emplace(seed, train_inverter(data, enc, seed_cfg).model);
    }

    EvalOptions opts = base_opts;
    opts.init = init;
    opts.method_label = "ablate_" + ablation_flag_name(flag);
    opts.load_model = [models](std::uint64_t seed) {
        auto it = models->find(seed);
        if (it == models->end())
            throw ConfigError("no trained model for seed " + std::to_string(seed));
        return it->second;
    };
    return evaluate("palavra", bench, enc, opts);
}

}  // namespace palavra
