#include <doctest.h>

#include "palavra/inverter.hpp"

#include "oracles.hpp"

using namespace palavra;

namespace {

InverterModel small_model(std::uint64_t seed = 1) {
    return InverterModel(/*out_dim=*/12, /*w_dim=*/10, /*hidden=*/24, /*dropout=*/0.25, seed);
}

std::vector<Vec> random_set(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<Vec> zs;
    for (std::size_t i = 0; i < n; ++i) {
        Vec v(dim);
        for (double& x : v) x = rng.gaussian();
        zs.push_back(normalized(v));
    }
    return zs;
}

}  // namespace

TEST_CASE("invert_set is permutation invariant in eval mode") {
    InverterModel m = small_model();
    Rng rng(5);
    for (std::size_t n : {1, 2, 7, 33, 64}) {
        std::vector<Vec> zs = random_set(rng, n, m.output_dim);
        Vec base = m.invert_set(zs, InvertMode::eval);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<Vec> shuffled = zs;
            rng.shuffle(shuffled);
            Vec out = m.invert_set(shuffled, InvertMode::eval);
            double dev = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i)
                dev = std::max(dev, std::abs(out[i] - base[i]));
            CHECK(dev <= 1e-6);
        }
    }
}

TEST_CASE("pooling over a singleton is the identity: output equals rho(phi(z))") {
    InverterModel m = small_model(2);
    Rng rng(6);
    Vec z = random_set(rng, 1, m.output_dim)[0];
    Vec via_set = m.invert_set({z}, InvertMode::eval);
    Vec direct = m.rho.forward(m.phi.forward(z, nullptr, nullptr), nullptr, nullptr);
    REQUIRE(via_set.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i)
        CHECK(via_set[i] == doctest::Approx(direct[i]).epsilon(1e-12));
}

TEST_CASE("eval mode is deterministic, train mode needs an rng") {
    InverterModel m = small_model(3);
    Rng rng(7);
    std::vector<Vec> zs = random_set(rng, 5, m.output_dim);
    Vec a = m.invert_set(zs, InvertMode::eval);
    Vec b = m.invert_set(zs, InvertMode::eval);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK_THROWS_AS(m.invert_set(zs, InvertMode::train), PreconditionError);
    CHECK_THROWS_AS(m.invert_set({}, InvertMode::eval), PreconditionError);
    CHECK_THROWS_AS(m.invert_set({Vec(3, 0.0)}, InvertMode::eval), InputError);
}

TEST_CASE("a fresh model has the identity alignment and align applies A") {
    InverterModel m = small_model(4);
    CHECK(m.A.is_identity());
    Rng rng(8);
    Vec u = random_set(rng, 1, m.output_dim)[0];
    Vec au = m.align(u);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(au[i] == u[i]);

    Vec zero(m.output_dim, 0.0);
    Vec az = m.align(zero);
    for (double x : az) CHECK(x == 0.0);

    CHECK_THROWS_AS(m.align(Vec(5, 1.0)), InputError);

    // a non-trivial A actually multiplies
    m.A.at(0, 1) = 2.0;
    Vec v(m.output_dim, 0.0);
    v[1] = 3.0;
    CHECK(m.align(v)[0] == doctest::Approx(6.0));
}

TEST_CASE("same seed builds the same model") {
    CHECK(small_model(9).digest() == small_model(9).digest());
    CHECK(small_model(9).digest() != small_model(10).digest());
}

TEST_CASE("checkpoints round-trip parameters and metadata") {
    std::string dir = oracles::temp_dir("inverter_ckpt");
    InverterModel m = small_model(11);
    m.A.at(2, 3) = 0.75;
    std::string path = dir + "/model.pvta";
    m.save(path, "{\"note\":\"fixture\"}");

    std::string meta;
    InverterModel back = InverterModel::load(path, &meta);
    CHECK(meta == "{\"note\":\"fixture\"}");
    CHECK(back.output_dim == m.output_dim);
    CHECK(back.word_dim == m.word_dim);
    CHECK(back.hidden_dim == m.hidden_dim);
    // values survive at float32 precision
    for (std::size_t i = 0; i < m.phi.l1.w.a.size(); ++i)
        CHECK(back.phi.l1.w.a[i] == static_cast<double>(static_cast<float>(m.phi.l1.w.a[i])));
    CHECK(back.A.at(2, 3) == doctest::Approx(0.75));

    // saving the loaded model again is byte-identical (f32 fixed point)
    back.save(dir + "/model2.pvta", meta);
    InverterModel twice = InverterModel::load(dir + "/model2.pvta");
    CHECK(twice.digest() == back.digest());
}

TEST_CASE("backward pass matches finite differences through a linear probe") {
    InverterModel m = small_model(13);
    m.dropout_rate = 0.0;  // deterministic masks for the probe
    Rng rng(14);
    std::vector<Vec> zs = random_set(rng, 4, m.output_dim);
    Vec probe(m.word_dim);
    for (double& x : probe) x = rng.gaussian();

    auto loss_with = [&](InverterModel& model) {
        return dot(model.invert_set(zs, InvertMode::eval), probe);
    };

    InverterModel::Trace trace;
    Vec out = m.invert_set_traced(zs, nullptr, &trace);
    (void)out;
    InverterGrads grads(m);
    m.invert_set_backward(trace, nullptr, probe, grads);

    const double h = 1e-4;
    auto check_param = [&](double* p, double g) {
        double keep = *p;
        *p = keep + h;
        double up = loss_with(m);
        *p = keep - h;
        double down = loss_with(m);
        *p = keep;
        double fd = (up - down) / (2.0 * h);
        if (std::abs(g) > 1e-6) CHECK(std::abs(g - fd) / std::abs(g) < 1e-4);
    };

    for (std::size_t i = 0; i < m.phi.l1.w.a.size(); i += 37)
        check_param(&m.phi.l1.w.a[i], grads.phi_l1.w.a[i]);
    for (std::size_t i = 0; i < m.rho.l2.w.a.size(); i += 29)
        check_param(&m.rho.l2.w.a[i], grads.rho_l2.w.a[i]);
    for (std::size_t i = 0; i < m.phi.l2.b.size(); i += 5)
        check_param(&m.phi.l2.b[i], grads.phi_l2.b[i]);
}

TEST_CASE("dropout masks scale kept units and zero dropped ones") {
    InverterModel m = small_model(15);
    Rng rng(16);
    InverterModel::Masks masks = m.draw_masks(3, rng);
    CHECK(masks.phi_masks.size() == 3);
    double keep = 1.0 / (1.0 - m.dropout_rate);
    std::size_t zeros = 0;
    for (double x : masks.rho_mask) {
        CHECK((x == 0.0 || x == doctest::Approx(keep)));
        zeros += (x == 0.0);
    }
    CHECK(zeros > 0);  // 24 units at rate 0.25: all-kept is vanishingly unlikely
}
