#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "palavra/embedding_cache.hpp"
#include "palavra/encoder.hpp"
#include "palavra/errors.hpp"
#include "palavra/inverter.hpp"
#include "palavra/objectives.hpp"
#include "palavra/textaug.hpp"
#include "palavra/token_registry.hpp"

namespace palavra {

// Hyperparameters of set-encoder training. Defaults are the published
// operating point; toy-scale runs override dims and epoch counts.
struct InverterTrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_concepts = 32;       // C, concepts drawn per batch
    std::size_t batch_size = 256;          // C * examples_per_concept on image batches
    std::size_t examples_per_concept = 8;  // K
    std::size_t hidden_dim = 4096;
    double dropout_rate = 0.25;
    double lr = 1e-4;
    double lambda_gt = 512.0;
    double temp = 0.25;
    std::uint64_t seed = 0;

    // ablation switches
    bool text_augment = true;     // off: text batches use the original captions
    double cycle_weight = 1.0;    // 0: train on the ground-truth regularizer only
    bool train_alignment = true;  // off: A stays frozen at the identity

    std::size_t replacement_top_k = 1;  // >1: sample uniformly among k nearest types

    std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
    std::string checkpoint_dir;

    std::string canonical_string() const {
        std::ostringstream os;
        os << "epochs=" << epochs << ";batch_concepts=" << batch_concepts
           << ";batch_size=" << batch_size << ";examples_per_concept=" << examples_per_concept
           << ";hidden_dim=" << hidden_dim << ";dropout_rate=" << dropout_rate << ";lr=" << lr
           << ";lambda_gt=" << lambda_gt << ";temp=" << temp << ";seed=" << seed
           << ";text_augment=" << text_augment << ";cycle_weight=" << cycle_weight
           << ";train_alignment=" << train_alignment << ";replacement_top_k=" << replacement_top_k;
        return os.str();
    }

    std::string digest() const {
        Fnv64 f;
        f.update(canonical_string());
        return f.hex();
    }

    void validate() const {
        if (batch_concepts == 0 || batch_size == 0 || examples_per_concept == 0 || hidden_dim == 0)
            throw ConfigError("train config: sizes must be positive");
        if (!(lr > 0.0) || !(temp > 0.0)) throw ConfigError("train config: lr and temp must be positive");
        if (lambda_gt < 0.0) throw ConfigError("train config: lambda_gt must be non-negative");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("train config: dropout_rate must be in [0, 1)");
    }
};

// Hyperparameters of per-concept personalization.
struct PersonalizeConfig {
    std::size_t tune_epochs = 30;
    double tune_lr = 0.01;
    std::size_t shots = 5;  // N_c; 10 is the published segmentation setting
    double temp = 0.25;
    std::uint64_t seed = 0;

    std::string canonical_string() const {
        std::ostringstream os;
        os << "tune_epochs=" << tune_epochs << ";tune_lr=" << tune_lr << ";shots=" << shots
           << ";temp=" << temp << ";seed=" << seed;
        return os.str();
    }

    std::string digest() const {
        Fnv64 f;
        f.update(canonical_string());
        return f.hex();
    }
};

struct TrainingConcept {
    std::string id;
    std::string type;
    std::vector<std::string> image_ids;
    std::vector<std::string> captions;
};

// Set-encoder training data: per-concept image embedding ids (resolved in the
// cache) and captions carrying the concept type, plus the expanded type
// vocabulary used for caption augmentation.
struct TrainingDataset {
    std::vector<TrainingConcept> concepts;
    EmbeddingCache cache;
    TypeVocabulary vocab;

    TrainingDataset(std::vector<TrainingConcept> cs, EmbeddingCache c, TypeVocabulary v)
        : concepts(std::move(cs)), cache(std::move(c)), vocab(std::move(v)) {}
};

// Ground-truth word embedding for a concept type: the word vector of the
// type's first word.
inline Vec gt_embedding_for_type(const std::string& type, const FrozenEncoderPair& enc) {
    std::istringstream in(type);
    std::string first;
    in >> first;
    if (first.empty()) throw InputError("empty concept type string");
    std::vector<std::int32_t> ids = enc.tokenize(first);
    if (ids.empty()) throw InputError("concept type tokenizes to nothing: " + type);
    return enc.word_embedding(ids[0]);
}

// Adam over a flat list of parameter views. Zero gradients produce exactly
// zero updates, so frozen tensors stay bitwise unchanged.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<std::pair<double*, std::size_t>>& params,
              const std::vector<std::pair<const double*, std::size_t>>& grads) {
        std::size_t total = 0;
        for (const auto& [p, n] : params) total += n;
        if (m_.empty()) {
            m_.assign(total, 0.0);
            v_.assign(total, 0.0);
        }
        if (m_.size() != total) throw InputError("adam: parameter count changed between steps");
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        std::size_t off = 0;
        for (std::size_t k = 0; k < params.size(); ++k) {
            double* p = params[k].first;
            const double* g = grads[k].first;
            std::size_t n = params[k].second;
            for (std::size_t i = 0; i < n; ++i) {
                double gi = g[i];
                m_[off + i] = beta1_ * m_[off + i] + (1.0 - beta1_) * gi;
                v_[off + i] = beta2_ * v_[off + i] + (1.0 - beta2_) * gi * gi;
                double mh = m_[off + i] / bc1;
                double vh = v_[off + i] / bc2;
                double upd = lr_ * mh / (std::sqrt(vh) + eps_);
                if (upd != 0.0) p[i] -= upd;
            }
            off += n;
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    Vec m_, v_;
};

inline std::vector<std::pair<double*, std::size_t>> param_views(InverterModel& m) {
    return {
        {m.phi.l1.w.a.data(), m.phi.l1.w.a.size()}, {m.phi.l1.b.data(), m.phi.l1.b.size()},
        {m.phi.l2.w.a.data(), m.phi.l2.w.a.size()}, {m.phi.l2.b.data(), m.phi.l2.b.size()},
        {m.rho.l1.w.a.data(), m.rho.l1.w.a.size()}, {m.rho.l1.b.data(), m.rho.l1.b.size()},
        {m.rho.l2.w.a.data(), m.rho.l2.w.a.size()}, {m.rho.l2.b.data(), m.rho.l2.b.size()},
        {m.A.a.data(), m.A.a.size()},
    };
}

inline std::vector<std::pair<const double*, std::size_t>> grad_views(const InverterGrads& g) {
    return {
        {g.phi_l1.w.a.data(), g.phi_l1.w.a.size()}, {g.phi_l1.b.data(), g.phi_l1.b.size()},
        {g.phi_l2.w.a.data(), g.phi_l2.w.a.size()}, {g.phi_l2.b.data(), g.phi_l2.b.size()},
        {g.rho_l1.w.a.data(), g.rho_l1.w.a.size()}, {g.rho_l1.b.data(), g.rho_l1.b.size()},
        {g.rho_l2.w.a.data(), g.rho_l2.w.a.size()}, {g.rho_l2.b.data(), g.rho_l2.b.size()},
        {g.A.a.data(), g.A.a.size()},
    };
}

enum class BatchKind { image, text };

inline std::string inverter_metadata(const InverterModel& m, const InverterTrainConfig& cfg) {
    std::ostringstream os;
    os << "{\"config_digest\":\"" << cfg.digest() << "\",\"dims\":{\"hidden\":" << m.hidden_dim
       << ",\"output\":" << m.output_dim << ",\"word\":" << m.word_dim
       << "},\"dropout_rate\":" << m.dropout_rate << ",\"kind\":\"inverter\",\"seed\":" << cfg.seed
       << "}";
    return os.str();
}

struct TrainResult {
    InverterModel model;
    std::vector<BatchKind> batch_log;
    std::vector<double> step_losses;
    std::size_t skipped_concepts = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, const InverterModel& model)>;

namespace detail {

struct TextConceptBatchItem {
    std::vector<Vec> caption_embeddings;  // u_k, before alignment
    Vec g;                                // ground-truth word embedding of the batch label
    std::size_t concept_index;            // into dataset.concepts
};

}  // namespace detail

// Trains the set encoder and the alignment matrix with strictly alternating
// image/text batches. Image batches draw C concepts and K cached image
// embeddings each; text batches draw captions, augment their concept type
// from the expanded vocabulary, and route the embeddings through A. A also
// receives an L2 alignment term pairing original captions with images of the
// same concept.
inline TrainResult train_inverter(const TrainingDataset& data, const FrozenEncoderPair& enc,
                                  const InverterTrainConfig& cfg,
                                  const EpochCallback& on_epoch = nullptr) {
    cfg.validate();
    if (data.concepts.empty()) throw DataError("train_inverter: dataset has no concepts");
    if (data.cache.dim() != enc.output_dim())
        throw DataError("train_inverter: cache dim does not match encoder output dim");

    const std::size_t K = cfg.examples_per_concept;

    std::vector<std::size_t> image_concepts;  // >= K resolvable embeddings
    std::vector<std::size_t> text_concepts;   // >= 1 caption
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < data.concepts.size(); ++i) {
        const TrainingConcept& c = data.concepts[i];
        for (const std::string& id : c.image_ids)
            if (!data.cache.contains(id))
                throw DataError("train_inverter: embedding id '" + id + "' of concept '" + c.id +
                                "' is not in the cache");
        if (c.image_ids.size() >= K) {
            image_concepts.push_back(i);
        } else {
            ++skipped;
            std::cerr << "[train] warning: concept '" << c.id << "' has " << c.image_ids.size()
                      << " examples, needs " << K << "; skipped\n";
        }
        if (!c.captions.empty()) text_concepts.push_back(i);
    }
    if (image_concepts.empty()) throw DataError("train_inverter: all concepts skipped");
    if (text_concepts.empty()) throw DataError("train_inverter: no concept has captions");

    TrainResult result{InverterModel(enc.output_dim(), enc.word_dim(), cfg.hidden_dim,
                                     cfg.dropout_rate, cfg.seed),
                       {}, {}, skipped};
    InverterModel& model = result.model;
    if (cfg.epochs == 0) return result;

    PromptBank bank = PromptBank::default_bank();
    Rng rng(mix64(cfg.seed ^ 0x747261696e5f6976ULL));
    Adam adam(cfg.lr);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::string tmpl = bank.sample(rng);
        std::vector<std::size_t> order = image_concepts;
        rng.shuffle(order);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_concepts) {
            std::size_t end = std::min(order.size(), start + cfg.batch_concepts);
            std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));

            // ---- image batch ----
            {
                const std::size_t C = chunk.size();
                ConceptBatch batch;
                batch.temp = cfg.temp;
                std::vector<Vec> w0s(C), gs(C);
                std::vector<InverterModel::Masks> masks(C);
                std::vector<InverterModel::Trace> traces(C);
                std::vector<TokenEmbeddingSequence> seqs(C);

                for (std::size_t c = 0; c < C; ++c) {
                    const TrainingConcept& tc = data.concepts[chunk[c]];
                    std::vector<std::size_t> idx(tc.image_ids.size());
                    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                    rng.shuffle(idx);
                    std::vector<Vec> zs;
                    zs.reserve(K);
                    for (std::size_t i = 0; i < K; ++i)
                        zs.push_back(data.cache.get(tc.image_ids[idx[i]]));
                    batch.zbar.push_back(normalized(mean_of(zs)));
                    masks[c] = model.draw_masks(zs.size(), rng);
                    w0s[c] = model.invert_set_traced(zs, &masks[c], &traces[c]);
                    seqs[c] = instantiate_template(tmpl, w0s[c], enc);
                    batch.zhat.push_back(enc.encode_text(seqs[c]));
                    gs[c] = gt_embedding_for_type(tc.type, enc);
                }

                std::vector<Vec> gzhat, gw0;
                double loss = total_inverter_loss(batch, w0s, gs, cfg.lambda_gt, nullptr, &gzhat,
                                                  &gw0, cfg.cycle_weight);

                InverterGrads grads(model);
                for (std::size_t c = 0; c < C; ++c) {
                    std::vector<Vec> raw = enc.encode_text_vjp(seqs[c], gzhat[c]);
                    Vec gw = gw0[c];
                    if (!raw.empty()) axpy(1.0, raw[0], gw);
                    model.invert_set_backward(traces[c], &masks[c], gw, grads);
                }
                // A has no gradient path on image batches; grads.A stays zero
                adam.step(param_views(model), grad_views(grads));
                result.batch_log.push_back(BatchKind::image);
                result.step_losses.push_back(loss);
            }

            // ---- text batch ----
            {
                std::vector<std::size_t> candidates;
                for (std::size_t i : chunk)
                    if (!data.concepts[i].captions.empty()) candidates.push_back(i);
                while (candidates.size() < std::min<std::size_t>(chunk.size(), text_concepts.size()) &&
                       candidates.size() < chunk.size()) {
                    std::size_t pick = text_concepts[static_cast<std::size_t>(
                        rng.uniform_int(text_concepts.size()))];
                    if (std::find(candidates.begin(), candidates.end(), pick) == candidates.end())
                        candidates.push_back(pick);
                }

                ConceptBatch batch;
                batch.temp = cfg.temp;
                std::vector<Vec> w0s, gs;
                std::vector<InverterModel::Masks> masks;
                std::vector<InverterModel::Trace> traces;
                std::vector<TokenEmbeddingSequence> seqs;
                std::vector<std::pair<Vec, Vec>> align_pairs;

                for (std::size_t ci : candidates) {
                    const TrainingConcept& tc = data.concepts[ci];
                    std::vector<std::size_t> idx(tc.captions.size());
                    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                    rng.shuffle(idx);

                    std::string label_type = tc.type;
                    if (cfg.text_augment)
                        label_type = sample_replacement_type(tc.type, data.vocab, enc,
                                                             cfg.replacement_top_k, rng);

                    std::vector<Vec> cap_embs;
                    std::vector<std::size_t> used_captions;
                    for (std::size_t i : idx) {
                        if (cap_embs.size() >= K) break;
                        const std::string& caption = tc.captions[i];
                        try {
                            std::string text = cfg.text_augment
                                                   ? augment_caption(caption, tc.type, label_type)
                                                   : caption;
                            cap_embs.push_back(enc.encode_sentence(text));
                            used_captions.push_back(i);
                        } catch (const AugmentationMissError&) {
                            std::cerr << "[train] warning: caption of concept '" << tc.id
                                      << "' does not contain its type; skipped\n";
                        }
                    }
                    if (cap_embs.empty()) continue;

                    std::vector<Vec> xs;
                    xs.reserve(cap_embs.size());
                    for (const Vec& u : cap_embs) xs.push_back(model.align(u));
                    batch.zbar.push_back(normalized(mean_of(xs)));

                    InverterModel::Masks mk = model.draw_masks(xs.size(), rng);
                    InverterModel::Trace tr;
                    Vec w0 = model.invert_set_traced(xs, &mk, &tr);
                    seqs.push_back(instantiate_template(tmpl, w0, enc));
                    batch.zhat.push_back(enc.encode_text(seqs.back()));
                    masks.push_back(std::move(mk));
                    traces.push_back(std::move(tr));
                    w0s.push_back(std::move(w0));
                    gs.push_back(gt_embedding_for_type(label_type, enc));

                    if (!tc.image_ids.empty()) {
                        for (std::size_t i : used_captions) {
                            Vec u0 = enc.encode_sentence(tc.captions[i]);
                            const std::string& img_id = tc.image_ids[static_cast<std::size_t>(
                                rng.uniform_int(tc.image_ids.size()))];
                            align_pairs.emplace_back(data.cache.get(img_id), std::move(u0));
                        }
                    }
                }

                if (batch.size() == 0) {
                    // still log the slot so the alternation contract holds
                    result.batch_log.push_back(BatchKind::text);
                    result.step_losses.push_back(0.0);
                    continue;
                }

                std::vector<Vec> gzhat, gw0;
                double loss = total_inverter_loss(batch, w0s, gs, cfg.lambda_gt, nullptr, &gzhat,
                                                  &gw0, cfg.cycle_weight);

                // A is trained by the alignment objective alone; the
                // contrastive path treats it as fixed within the step so the
                // map keeps its documented text-to-image meaning
                InverterGrads grads(model);
                Mat align_grad;
                if (cfg.train_alignment && !align_pairs.empty()) {
                    loss += alignment_loss(align_pairs, model.A, &align_grad);
                    for (std::size_t i = 0; i < grads.A.a.size(); ++i)
                        grads.A.a[i] = align_grad.a[i];
                }

                for (std::size_t c = 0; c < batch.size(); ++c) {
                    std::vector<Vec> raw = enc.encode_text_vjp(seqs[c], gzhat[c]);
                    Vec gw = gw0[c];
                    if (!raw.empty()) axpy(1.0, raw[0], gw);
                    model.invert_set_backward(traces[c], &masks[c], gw, grads);
                }
                adam.step(param_views(model), grad_views(grads));
                result.batch_log.push_back(BatchKind::text);
                result.step_losses.push_back(loss);
            }
        }

        if (on_epoch) on_epoch(epoch, model);
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
            model.save(cfg.checkpoint_dir + "/inverter_epoch" + std::to_string(epoch + 1) + ".pvta",
                       inverter_metadata(model, cfg));
        }
    }
    return result;
}

enum class PersonalizeInit { set_encoder, random_word };

// Learns the word embedding of one personalized concept: predict an initial
// code with the sealed set encoder, then tune the code alone under the
// personalization objective. The model and encoders receive no updates.
inline PersonalizedToken personalize(const ConceptExampleSet& examples,
                                     const std::string& type_string, const InverterModel& model,
                                     const FrozenEncoderPair& enc, const PersonalizeConfig& cfg,
                                     PersonalizeInit init = PersonalizeInit::set_encoder,
                                     std::vector<double>* loss_log = nullptr) {
    if (examples.embeddings.empty())
        throw PreconditionError("personalize: empty example set for '" + examples.symbol + "'");
    if (!(cfg.tune_lr > 0.0) || !(cfg.temp > 0.0))
        throw ConfigError("personalize: tune_lr and temp must be positive");

    Rng rng(mix64(cfg.seed ^ fnv64(examples.symbol)));

    Vec w;
    if (init == PersonalizeInit::set_encoder) {
        w = model.invert_set(examples.embeddings, InvertMode::eval);
    } else {
        // random draw from the word-table row distribution (per-dim moments
        // over an evenly strided row sample)
        const std::size_t sample = std::min<std::size_t>(enc.vocab_size(), 4096);
        const std::size_t stride = std::max<std::size_t>(1, enc.vocab_size() / sample);
        std::vector<Vec> rows;
        for (std::size_t i = 0; i < sample; ++i)
            rows.push_back(enc.word_embedding(static_cast<std::int32_t>(i * stride)));
        Vec mu(enc.word_dim(), 0.0), sd(enc.word_dim(), 0.0);
        for (const Vec& r : rows) axpy(1.0, r, mu);
        for (double& x : mu) x /= static_cast<double>(rows.size());
        for (const Vec& r : rows)
            for (std::size_t d = 0; d < sd.size(); ++d) sd[d] += (r[d] - mu[d]) * (r[d] - mu[d]);
        for (double& x : sd) x = std::sqrt(x / static_cast<double>(rows.size()));
        w.resize(enc.word_dim());
        for (std::size_t d = 0; d < w.size(); ++d) w[d] = mu[d] + sd[d] * rng.gaussian();
    }

    PersonalizationTriple triple;
    triple.temp = cfg.temp;
    triple.zbar = normalized(mean_of(examples.embeddings));
    triple.eta = model.align(enc.encode_sentence(type_string));

    PromptBank bank = PromptBank::default_bank();
    Adam adam(cfg.tune_lr);
    for (std::size_t epoch = 0; epoch < cfg.tune_epochs; ++epoch) {
        const std::string& tmpl = bank.sample(rng);
        TokenEmbeddingSequence seq = instantiate_template(tmpl, w, enc);
        triple.zhat = enc.encode_text(seq);
        Vec gzhat;
        double loss = personalization_loss(triple, &gzhat);
        if (loss_log) loss_log->push_back(loss);
        std::vector<Vec> raw = enc.encode_text_vjp(seq, gzhat);
        if (raw.empty()) throw NumericError("personalize: template lost its concept slot");
        adam.step({{w.data(), w.size()}}, {{raw[0].data(), raw[0].size()}});
    }

    PersonalizedToken token;
    token.symbol = examples.symbol;
    token.type_string = type_string;
    token.embedding = std::move(w);
    token.provenance.model_digest = model.digest();
    token.provenance.config_digest = cfg.digest();
    token.provenance.shots = examples.embeddings.size();
    token.provenance.seed = cfg.seed;
    return token;
}

// The five ablation switches. Each flips exactly one documented part of the
// pipeline; everything else stays identical.
enum class AblationFlag { no_text_augment, only_gt, only_cycle, only_tuning, no_alignment };

inline AblationFlag parse_ablation_flag(const std::string& name) {
    if (name == "no_text_augment") return AblationFlag::no_text_augment;
    if (name == "only_gt") return AblationFlag::only_gt;
    if (name == "only_cycle") return AblationFlag::only_cycle;
    if (name == "only_tuning") return AblationFlag::only_tuning;
    if (name == "no_alignment") return AblationFlag::no_alignment;
    throw ConfigError("unknown ablation flag '" + name + "'");
}

inline std::string ablation_flag_name(AblationFlag f) {
    switch (f) {
        case AblationFlag::no_text_augment: return "no_text_augment";
        case AblationFlag::only_gt: return "only_gt";
        case AblationFlag::only_cycle: return "only_cycle";
        case AblationFlag::only_tuning: return "only_tuning";
        case AblationFlag::no_alignment: return "no_alignment";
    }
    throw ConfigError("unknown ablation flag");
}

// Applies a flag to the training config; returns the personalization init to
// use (only_tuning replaces the set-encoder prediction with a random draw).
inline PersonalizeInit apply_ablation(AblationFlag flag, InverterTrainConfig& cfg) {
    switch (flag) {
        case AblationFlag::no_text_augment: cfg.text_augment = false; break;
        case AblationFlag::only_gt: cfg.cycle_weight = 0.0; break;
        case AblationFlag::only_cycle: cfg.lambda_gt = 0.0; break;
        case AblationFlag::no_alignment: cfg.train_alignment = false; break;
        case AblationFlag::only_tuning: return PersonalizeInit::random_word;
    }
    return PersonalizeInit::set_encoder;
}

}  // namespace palavra
