#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"

namespace palavra {

// One training batch for the cycle objective: per concept, the normalized
// mean image embedding and the embedding of a template sentence carrying the
// predicted concept code.
struct ConceptBatch {
    std::vector<Vec> zbar;  // mean image embedding per concept, unit-normalized after averaging
    std::vector<Vec> zhat;  // template-sentence embedding per concept
    double temp = 0.25;

    std::size_t size() const { return zbar.size(); }

    void validate() const {
        if (zbar.empty()) throw PreconditionError("concept batch: no concepts");
        if (zbar.size() != zhat.size())
            throw InputError("concept batch: zbar/zhat count mismatch");
        if (!(temp > 0.0)) throw InputError("concept batch: temp must be positive");
        for (const Vec& v : zbar)
            if (!all_finite(v)) throw NumericError("concept batch: non-finite zbar");
        for (const Vec& v : zhat)
            if (!all_finite(v)) throw NumericError("concept batch: non-finite zhat");
    }
};

// Inputs of the per-concept personalization objective.
struct PersonalizationTriple {
    Vec zhat;  // template embedding carrying the candidate concept code
    Vec zbar;  // normalized mean of the example embeddings
    Vec eta;   // aligned concept-type embedding, used as-is (not renormalized)
    double temp = 0.25;
};

namespace detail {

// log(sum exp(v)) with the usual max shift.
inline double log_sum_exp(const std::vector<double>& v) {
    double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace detail

// Symmetric contrastive cycle objective, averaged over the concepts of the
// batch. For concept c the two terms are
//   -log e^{s(zbar_c,zhat_c)/T} / (sum_j e^{s(zbar_c,zhat_j)/T} + sum_{j!=c} e^{s(zhat_c,zhat_j)/T})
//   -log e^{s(zbar_c,zhat_c)/T} / (sum_j e^{s(zhat_c,zbar_j)/T} + sum_{j!=c} e^{s(zbar_c,zbar_j)/T})
// where s is cosine similarity and T the temperature. Evaluated through a
// log-sum-exp shift so similarities of +-1 at T = 0.25 stay stable.
//
// If grad_zbar/grad_zhat are non-null they receive d(loss)/d(input); the
// gradients are what the training loop chains into the set encoder and the
// alignment matrix.
inline double cycle_loss(const ConceptBatch& batch, std::vector<Vec>* grad_zbar = nullptr,
                         std::vector<Vec>* grad_zhat = nullptr) {
    batch.validate();
    const std::size_t C = batch.size();
    const double T = batch.temp;

    // similarity matrices: sab[i][j] = cos(zbar_i, zhat_j), etc.
    std::vector<std::vector<double>> sab(C, std::vector<double>(C));
    std::vector<std::vector<double>> sbb(C, std::vector<double>(C));
    std::vector<std::vector<double>> saa(C, std::vector<double>(C));
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) {
            sab[i][j] = cosine(batch.zbar[i], batch.zhat[j]);
            sbb[i][j] = cosine(batch.zhat[i], batch.zhat[j]);
            saa[i][j] = cosine(batch.zbar[i], batch.zbar[j]);
        }

    // weight accumulators: dL/ds for each similarity entry
    std::vector<std::vector<double>> wab(C, std::vector<double>(C, 0.0));
    std::vector<std::vector<double>> wbb(C, std::vector<double>(C, 0.0));
    std::vector<std::vector<double>> waa(C, std::vector<double>(C, 0.0));

    double total = 0.0;
    const double inv_c = 1.0 / static_cast<double>(C);
    for (std::size_t i = 0; i < C; ++i) {
        // term 1: negatives are zhat_j against zbar_i, plus zhat_j against zhat_i
        std::vector<double> logits1;
        logits1.reserve(2 * C - 1);
        for (std::size_t j = 0; j < C; ++j) logits1.push_back(sab[i][j] / T);
        for (std::size_t j = 0; j < C; ++j)
            if (j != i) logits1.push_back(sbb[i][j] / T);
        double lse1 = detail::log_sum_exp(logits1);
        total += inv_c * (lse1 - sab[i][i] / T);

        // term 2: negatives are zbar_j against zhat_i, plus zbar_j against zbar_i
        std::vector<double> logits2;
        logits2.reserve(2 * C - 1);
        for (std::size_t j = 0; j < C; ++j) logits2.push_back(sab[j][i] / T);
        for (std::size_t j = 0; j < C; ++j)
            if (j != i) logits2.push_back(saa[i][j] / T);
        double lse2 = detail::log_sum_exp(logits2);
        total += inv_c * (lse2 - sab[i][i] / T);

        if (grad_zbar || grad_zhat) {
            // term 1 softmax weights
            {
                std::size_t k = 0;
                for (std::size_t j = 0; j < C; ++j, ++k)
                    wab[i][j] += inv_c * std::exp(logits1[k] - lse1) / T;
                for (std::size_t j = 0; j < C; ++j)
                    if (j != i) wbb[i][j] += inv_c * std::exp(logits1[k++] - lse1) / T;
                wab[i][i] -= inv_c / T;
            }
            // term 2 softmax weights
            {
                std::size_t k = 0;
                for (std::size_t j = 0; j < C; ++j, ++k)
                    wab[j][i] += inv_c * std::exp(logits2[k] - lse2) / T;
                for (std::size_t j = 0; j < C; ++j)
                    if (j != i) waa[i][j] += inv_c * std::exp(logits2[k++] - lse2) / T;
                wab[i][i] -= inv_c / T;
            }
        }
    }

    if (grad_zbar || grad_zhat) {
        std::vector<Vec> ga(C), gb(C);
        for (std::size_t i = 0; i < C; ++i) {
            ga[i].assign(batch.zbar[i].size(), 0.0);
            gb[i].assign(batch.zhat[i].size(), 0.0);
        }
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                if (wab[i][j] != 0.0) {
                    axpy(wab[i][j], cosine_grad_x(batch.zbar[i], batch.zhat[j]), ga[i]);
                    axpy(wab[i][j], cosine_grad_x(batch.zhat[j], batch.zbar[i]), gb[j]);
                }
                if (i != j && wbb[i][j] != 0.0) {
                    axpy(wbb[i][j], cosine_grad_x(batch.zhat[i], batch.zhat[j]), gb[i]);
                    axpy(wbb[i][j], cosine_grad_x(batch.zhat[j], batch.zhat[i]), gb[j]);
                }
                if (i != j && waa[i][j] != 0.0) {
                    axpy(waa[i][j], cosine_grad_x(batch.zbar[i], batch.zbar[j]), ga[i]);
                    axpy(waa[i][j], cosine_grad_x(batch.zbar[j], batch.zbar[i]), ga[j]);
                }
            }
        if (grad_zbar) *grad_zbar = std::move(ga);
        if (grad_zhat) *grad_zhat = std::move(gb);
    }

    return total;
}

// Regularizer keeping a predicted concept code near its ground-truth word
// embedding: -cos(w0, g). Optional gradient with respect to w0.
inline double gt_regularizer(const Vec& w0, const Vec& g, Vec* grad_w0 = nullptr) {
    if (norm(w0) == 0.0 || norm(g) == 0.0)
        throw NumericError("gt_regularizer: zero vector");
    if (grad_w0) {
        *grad_w0 = cosine_grad_x(w0, g);
        for (double& x : *grad_w0) x = -x;
    }
    return -cosine(w0, g);
}

// cycle_loss + lambda_gt * mean gt_regularizer, one (w0, g) pair per concept.
inline double total_inverter_loss(const ConceptBatch& batch, const std::vector<Vec>& w0s,
                                  const std::vector<Vec>& gs, double lambda_gt,
                                  std::vector<Vec>* grad_zbar = nullptr,
                                  std::vector<Vec>* grad_zhat = nullptr,
                                  std::vector<Vec>* grad_w0s = nullptr,
                                  double cycle_weight = 1.0) {
    if (w0s.size() != batch.size() || gs.size() != batch.size())
        throw PreconditionError("total_inverter_loss: need one (w0, g) pair per concept");
    if (lambda_gt < 0.0) throw InputError("total_inverter_loss: lambda_gt must be non-negative");

    double loss = 0.0;
    if (cycle_weight != 0.0) {
        loss = cycle_weight * cycle_loss(batch, grad_zbar, grad_zhat);
        if (cycle_weight != 1.0) {
            if (grad_zbar)
                for (Vec& g : *grad_zbar)
                    for (double& x : g) x *= cycle_weight;
            if (grad_zhat)
                for (Vec& g : *grad_zhat)
                    for (double& x : g) x *= cycle_weight;
        }
    } else {
        batch.validate();
        if (grad_zbar) grad_zbar->assign(batch.size(), Vec(batch.zbar[0].size(), 0.0));
        if (grad_zhat) grad_zhat->assign(batch.size(), Vec(batch.zhat[0].size(), 0.0));
    }

    const double w = lambda_gt / static_cast<double>(batch.size());
    if (grad_w0s) grad_w0s->resize(batch.size());
    double gt_sum = 0.0;
    for (std::size_t c = 0; c < batch.size(); ++c) {
        Vec gw;
        gt_sum += gt_regularizer(w0s[c], gs[c], grad_w0s ? &gw : nullptr);
        if (grad_w0s) {
            for (double& x : gw) x *= w;
            (*grad_w0s)[c] = std::move(gw);
        }
    }
    return loss + w * gt_sum;
}

// Personalization objective: match the template embedding to the mean of the
// example images while contrasting against the (aligned) concept type,
//   -log e^{s(zbar,zhat)/T} / (e^{s(zbar,zhat)/T} + 2 e^{s(eta,zhat)/T}).
// The factor 2 accounts for the type acting as both a visual and a textual
// negative. Optional gradient with respect to zhat (the only input that the
// tuned word embedding reaches).
inline double personalization_loss(const PersonalizationTriple& t, Vec* grad_zhat = nullptr) {
    if (!(t.temp > 0.0)) throw InputError("personalization_loss: temp must be positive");
    if (!all_finite(t.zhat) || !all_finite(t.zbar) || !all_finite(t.eta))
        throw NumericError("personalization_loss: non-finite input");

    const double x = cosine(t.zbar, t.zhat) / t.temp;
    const double y = cosine(t.eta, t.zhat) / t.temp;
    // loss = log(e^x + 2 e^y) - x, stabilized
    const double m = std::max(x, y);
    const double ex = std::exp(x - m);
    const double ey2 = 2.0 * std::exp(y - m);
    const double loss = m + std::log(ex + ey2) - x;

    if (grad_zhat) {
        const double px = ex / (ex + ey2);
        const double dx = (px - 1.0) / t.temp;  // d loss / d cos(zbar, zhat)
        const double dy = (1.0 - px) / t.temp;  // d loss / d cos(eta, zhat)
        Vec g(t.zhat.size(), 0.0);
        axpy(dx, cosine_grad_x(t.zhat, t.zbar), g);
        axpy(dy, cosine_grad_x(t.zhat, t.eta), g);
        *grad_zhat = std::move(g);
    }
    return loss;
}

// Mean squared alignment error over (image, text) pairs: mean |v - A u|^2.
// Optional gradient with respect to A.
inline double alignment_loss(const std::vector<std::pair<Vec, Vec>>& pairs, const Mat& A,
                             Mat* grad_A = nullptr) {
    if (pairs.empty()) throw PreconditionError("alignment_loss: empty pair list");
    if (grad_A) *grad_A = Mat(A.rows, A.cols);

    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    for (const auto& [v, u] : pairs) {
        check_dim(u, A.cols, "alignment text vector");
        check_dim(v, A.rows, "alignment image vector");
        Vec au = matvec(A, u);
        Vec r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) r[i] = au[i] - v[i];
        total += inv_n * dot(r, r);
        if (grad_A) add_outer(*grad_A, 2.0 * inv_n, r, u);
    }
    return total;
}

}  // namespace palavra
