#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palavra/digest.hpp"
#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"
#include "palavra/rng.hpp"
#include "palavra/tensor_archive.hpp"

namespace palavra {

enum class InvertMode { train, eval };

struct Linear {
    Mat w;  // out x in
    Vec b;  // out

    Linear() = default;
    Linear(std::size_t out, std::size_t in) : w(out, in), b(out, 0.0) {}

    Vec forward(const Vec& x) const {
        Vec y = matvec(w, x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
        return y;
    }
};

struct LinearGrads {
    Mat w;
    Vec b;

    LinearGrads() = default;
    LinearGrads(std::size_t out, std::size_t in) : w(out, in), b(out, 0.0) {}
};

// Two-layer feed-forward map: linear -> relu -> dropout -> linear. The
// dropout mask (inverted-dropout scale, i.e. 0 or 1/(1-p) per hidden unit)
// is drawn by the caller so training steps are replayable.
struct TwoLayerMlp {
    Linear l1, l2;

    TwoLayerMlp() = default;
    TwoLayerMlp(std::size_t in, std::size_t hidden, std::size_t out)
        : l1(hidden, in), l2(out, hidden) {}

    std::size_t in_dim() const { return l1.w.cols; }
    std::size_t hidden_dim() const { return l1.w.rows; }
    std::size_t out_dim() const { return l2.w.rows; }

    struct Trace {
        Vec x;       // input
        Vec h_pre;   // pre-activation hidden
        Vec h_post;  // after relu and dropout
    };

    Vec forward(const Vec& x, const Vec* mask, Trace* trace) const {
        check_dim(x, in_dim(), "mlp input");
        Vec h = l1.forward(x);
        Vec hp(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) {
            double a = h[i] > 0.0 ? h[i] : 0.0;
            hp[i] = mask ? a * (*mask)[i] : a;
        }
        Vec y = l2.forward(hp);
        if (trace) {
            trace->x = x;
            trace->h_pre = std::move(h);
            trace->h_post = hp;
        }
        return y;
    }

    // Accumulates parameter gradients into g and returns d(loss)/d(input).
    Vec backward(const Trace& t, const Vec* mask, const Vec& gy, LinearGrads& g1,
                 LinearGrads& g2) const {
        // second layer
        for (std::size_t i = 0; i < gy.size(); ++i) g2.b[i] += gy[i];
        add_outer(g2.w, 1.0, gy, t.h_post);
        Vec gh = matvec_t(l2.w, gy);
        // dropout + relu
        for (std::size_t i = 0; i < gh.size(); ++i) {
            if (mask) gh[i] *= (*mask)[i];
            if (t.h_pre[i] <= 0.0) gh[i] = 0.0;
        }
        // first layer
        for (std::size_t i = 0; i < gh.size(); ++i) g1.b[i] += gh[i];
        add_outer(g1.w, 1.0, gh, t.x);
        return matvec_t(l1.w, gh);
    }
};

// The inversion model: a Deep-Sets style encoder mapping a set of image
// embeddings to a word embedding (per-element map phi, mean pool, readout
// rho) plus the text-to-image alignment matrix A. A starts as the identity
// and is only trained when alignment is enabled.
struct InverterModel {
    std::size_t output_dim = 0;
    std::size_t word_dim = 0;
    std::size_t hidden_dim = 4096;
    double dropout_rate = 0.25;

    TwoLayerMlp phi;  // output_dim -> hidden_dim
    TwoLayerMlp rho;  // hidden_dim -> word_dim
    Mat A;            // output_dim x output_dim

    InverterModel() = default;

    InverterModel(std::size_t out_dim, std::size_t w_dim, std::size_t hidden, double dropout,
                  std::uint64_t seed)
        : output_dim(out_dim),
          word_dim(w_dim),
          hidden_dim(hidden),
          dropout_rate(dropout),
          phi(out_dim, hidden, hidden),
          rho(hidden, hidden, w_dim),
          A(Mat::identity(out_dim)) {
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw InputError("inverter: dropout_rate must be in [0, 1)");
        Rng rng(mix64(seed ^ 0x696e766572746572ULL));
        init_linear(phi.l1, rng);
        init_linear(phi.l2, rng);
        init_linear(rho.l1, rng);
        init_linear(rho.l2, rng);
    }

    // Dropout masks for one traced application of the set encoder.
    struct Masks {
        std::vector<Vec> phi_masks;  // one per set element
        Vec rho_mask;
    };

    Masks draw_masks(std::size_t set_size, Rng& rng) const {
        Masks m;
        m.phi_masks.resize(set_size);
        for (Vec& mask : m.phi_masks) mask = draw_mask(rng);
        m.rho_mask = draw_mask(rng);
        return m;
    }

    struct Trace {
        std::vector<TwoLayerMlp::Trace> phi_traces;
        Vec pooled;
        TwoLayerMlp::Trace rho_trace;
    };

    // Traced forward pass used by training; masks may be null (eval mode).
    Vec invert_set_traced(const std::vector<Vec>& zs, const Masks* masks, Trace* trace) const {
        if (zs.empty()) throw PreconditionError("invert_set: empty set");
        if (masks && masks->phi_masks.size() != zs.size())
            throw InputError("invert_set: mask count does not match set size");
        Vec pooled(hidden_dim, 0.0);
        if (trace) trace->phi_traces.resize(zs.size());
        for (std::size_t k = 0; k < zs.size(); ++k) {
            check_dim(zs[k], output_dim, "invert_set element");
            Vec h = phi.forward(zs[k], masks ? &masks->phi_masks[k] : nullptr,
                                trace ? &trace->phi_traces[k] : nullptr);
            axpy(1.0, h, pooled);
        }
        for (double& x : pooled) x /= static_cast<double>(zs.size());
        if (trace) trace->pooled = pooled;
        return rho.forward(pooled, masks ? &masks->rho_mask : nullptr,
                           trace ? &trace->rho_trace : nullptr);
    }

    Vec invert_set(const std::vector<Vec>& zs, InvertMode mode, Rng* rng = nullptr) const {
        if (mode == InvertMode::eval) return invert_set_traced(zs, nullptr, nullptr);
        if (!rng) throw PreconditionError("invert_set: train mode requires an rng");
        Masks masks = draw_masks(zs.size(), *rng);
        return invert_set_traced(zs, &masks, nullptr);
    }

    // d(loss)/d(each set element), with parameter gradients accumulated.
    std::vector<Vec> invert_set_backward(const Trace& trace, const Masks* masks, const Vec& gw,
                                         struct InverterGrads& grads) const;

    Vec align(const Vec& u) const {
        check_dim(u, output_dim, "align input");
        return matvec(A, u);
    }

    // Serialized float32 view; the basis for checkpoints and digests.
    TensorArchive to_archive() const {
        TensorArchive ar;
        auto dims = [](const Mat& m) {
            return std::vector<std::uint32_t>{static_cast<std::uint32_t>(m.rows),
                                              static_cast<std::uint32_t>(m.cols)};
        };
        ar.add_f64("phi.l1.w", dims(phi.l1.w), phi.l1.w.a);
        ar.add_f64("phi.l1.b", {static_cast<std::uint32_t>(phi.l1.b.size())}, phi.l1.b);
        ar.add_f64("phi.l2.w", dims(phi.l2.w), phi.l2.w.a);
        ar.add_f64("phi.l2.b", {static_cast<std::uint32_t>(phi.l2.b.size())}, phi.l2.b);
        ar.add_f64("rho.l1.w", dims(rho.l1.w), rho.l1.w.a);
        ar.add_f64("rho.l1.b", {static_cast<std::uint32_t>(rho.l1.b.size())}, rho.l1.b);
        ar.add_f64("rho.l2.w", dims(rho.l2.w), rho.l2.w.a);
        ar.add_f64("rho.l2.b", {static_cast<std::uint32_t>(rho.l2.b.size())}, rho.l2.b);
        ar.add_f64("A", dims(A), A.a);
        return ar;
    }

    void save(const std::string& path, const std::string& metadata) const {
        TensorArchive ar = to_archive();
        ar.set_metadata(metadata);
        ar.save(path);
    }

    static InverterModel from_archive(const TensorArchive& ar) {
        InverterModel m;
        auto load_mat = [&](const char* name) {
            const TensorArchive::Tensor& t = ar.get(name);
            if (t.dims.size() != 2) throw InputError(std::string("checkpoint tensor ") + name + " is not 2-d");
            Mat out(t.dims[0], t.dims[1]);
            out.a.assign(t.data.begin(), t.data.end());
            return out;
        };
        auto load_vec = [&](const char* name) { return ar.get_f64(name); };
        m.phi.l1.w = load_mat("phi.l1.w");
        m.phi.l1.b = load_vec("phi.l1.b");
        m.phi.l2.w = load_mat("phi.l2.w");
        m.phi.l2.b = load_vec("phi.l2.b");
        m.rho.l1.w = load_mat("rho.l1.w");
        m.rho.l1.b = load_vec("rho.l1.b");
        m.rho.l2.w = load_mat("rho.l2.w");
        m.rho.l2.b = load_vec("rho.l2.b");
        m.A = load_mat("A");
        m.output_dim = m.phi.l1.w.cols;
        m.hidden_dim = m.phi.l1.w.rows;
        m.word_dim = m.rho.l2.w.rows;
        return m;
    }

    static InverterModel load(const std::string& path, std::string* metadata = nullptr) {
        TensorArchive ar = TensorArchive::load(path);
        InverterModel m = from_archive(ar);
        if (metadata) *metadata = ar.metadata();
        return m;
    }

    std::string digest() const {
        TensorArchive ar = to_archive();
        std::string bytes = ar.serialize();
        Fnv64 f;
        f.update(bytes.data(), bytes.size());
        return f.hex();
    }

private:
    Vec draw_mask(Rng& rng) const {
        Vec mask(hidden_dim, 1.0);
        if (dropout_rate > 0.0) {
            double keep = 1.0 - dropout_rate;
            for (double& x : mask) x = rng.uniform() < dropout_rate ? 0.0 : 1.0 / keep;
        }
        return mask;
    }

    static void init_linear(Linear& l, Rng& rng) {
        double scale = std::sqrt(2.0 / static_cast<double>(l.w.cols));
        for (double& x : l.w.a) x = rng.gaussian() * scale;
        // biases stay zero
    }
};

// Gradient buffers matching the model's parameters.
struct InverterGrads {
    LinearGrads phi_l1, phi_l2, rho_l1, rho_l2;
    Mat A;

    explicit InverterGrads(const InverterModel& m)
        : phi_l1(m.phi.l1.w.rows, m.phi.l1.w.cols),
          phi_l2(m.phi.l2.w.rows, m.phi.l2.w.cols),
          rho_l1(m.rho.l1.w.rows, m.rho.l1.w.cols),
          rho_l2(m.rho.l2.w.rows, m.rho.l2.w.cols),
          A(m.A.rows, m.A.cols) {}
};

inline std::vector<Vec> InverterModel::invert_set_backward(const Trace& trace, const Masks* masks,
                                                           const Vec& gw,
                                                           InverterGrads& grads) const {
    Vec gp = rho.backward(trace.rho_trace, masks ? &masks->rho_mask : nullptr, gw, grads.rho_l1,
                          grads.rho_l2);
    const std::size_t K = trace.phi_traces.size();
    for (double& x : gp) x /= static_cast<double>(K);
    std::vector<Vec> gz(K);
    for (std::size_t k = 0; k < K; ++k)
        gz[k] = phi.backward(trace.phi_traces[k], masks ? &masks->phi_masks[k] : nullptr, gp,
                             grads.phi_l1, grads.phi_l2);
    return gz;
}

}  // namespace palavra
