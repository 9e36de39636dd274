#include "doctest.h"

#include <cmath>
#include <numeric>

#include "mfb/errors.hpp"
#include "mfb/loss.hpp"
#include "mfb/rng.hpp"

using namespace mfb;

namespace {

bool close(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

MfModel model_for(const PdeProblem& prob, uint64_t seed) {
    return init_params(default_specs(prob.coord_dim(), prob.out_dim, Preset::Mini),
                       domain_normalization(prob), seed);
}

Dataset synth_dataset(const PdeProblem& prob, int n, uint64_t seed,
                      double label_value = 0.0) {
    auto cs = sample_points(prob, n, 0, 0, 0, Sampling::Uniform, seed);
    Dataset ds;
    ds.points = cs.interior;
    ds.out_dim = prob.out_dim;
    ds.labels.assign(size_t(n) * prob.out_dim, label_value);
    for (int a = 0; a < prob.coord_dim(); ++a) ds.coord_names.push_back("c");
    for (int k = 0; k < prob.out_dim; ++k) ds.label_names.push_back("u");
    return ds;
}

MfModel zero_model(const PdeProblem& prob) {
    MfModel m = model_for(prob, 1);
    std::fill(m.params.begin(), m.params.end(), 0.0);
    return m;
}

} // namespace

TEST_CASE("lf loss reproduces hand-computed mean squared errors") {
    PdeProblem prob = PdeProblem::from_name("heat");
    // all-zero parameters give the zero function
    MfModel m = zero_model(prob);
    Dataset ones = synth_dataset(prob, 10, 3, 1.0);
    CHECK(close(loss_lf(m, ones), 1.0, 1e-15));

    Dataset zeros = synth_dataset(prob, 10, 3, 0.0);
    CHECK(loss_lf(m, zeros) == 0.0);

    // random model against an independent recomputation
    MfModel r = model_for(prob, 9);
    double want = 0;
    for (int i = 0; i < ones.size(); ++i) {
        const double u = forward_lf(r, ones.points[i])[0];
        want += (u - 1.0) * (u - 1.0) / ones.size();
    }
    CHECK(close(loss_lf(r, ones), want, 1e-15));

    Dataset empty;
    empty.points.dim = 3;
    empty.out_dim = 1;
    CHECK_THROWS_AS(loss_lf(m, empty), ContractError);
}

TEST_CASE("hf loss goes through the composite output") {
    PdeProblem prob = PdeProblem::from_name("heat");
    MfModel m = zero_model(prob);
    // last LF bias sets u_lf = 2; zero correctors leave u_mf = u_lf
    m.lf_params().back() = 2.0;
    Dataset one = synth_dataset(prob, 1, 5, 0.0);
    CHECK(loss_hf(m, one) == 4.0);

    m.lf_params().back() = 0.0;
    CHECK(loss_hf(m, one) == 0.0);

    MfModel r = model_for(prob, 31);
    Dataset ds = synth_dataset(prob, 20, 6, 0.25);
    double want = 0;
    for (int i = 0; i < ds.size(); ++i) {
        const double u = forward_mf(r, ds.points[i]).u_mf[0];
        want += (u - 0.25) * (u - 0.25) / ds.size();
    }
    CHECK(close(loss_hf(r, ds), want, 1e-15));

    // vector-valued case averages over samples and components
    PdeProblem tg = PdeProblem::from_name("taylor_green");
    MfModel mt = model_for(tg, 8);
    Dataset dt = synth_dataset(tg, 7, 2, 0.1);
    double want3 = 0;
    for (int i = 0; i < dt.size(); ++i) {
        auto u = forward_mf(mt, dt.points[i]).u_mf;
        for (int k = 0; k < 3; ++k) want3 += (u[k] - 0.1) * (u[k] - 0.1) / (7.0 * 3.0);
    }
    CHECK(close(loss_hf(mt, dt), want3, 1e-15));
}

TEST_CASE("residual loss vanishes for the zero field on burgers") {
    PdeProblem prob = PdeProblem::from_name("burgers");
    MfModel m = zero_model(prob);
    auto cs = sample_points(prob, 40, 0, 0, 0, Sampling::Uniform, 7);
    CHECK(loss_residual(m, cs, prob) == 0.0);
}

TEST_CASE("residual loss of the zero field on heat equals the mean squared source") {
    PdeProblem prob = PdeProblem::from_name("heat");
    MfModel m = zero_model(prob);
    auto cs = sample_points(prob, 60, 0, 0, 0, Sampling::Uniform, 11);
    double want = 0;
    for (int i = 0; i < cs.interior.size(); ++i) {
        auto row = cs.interior[i];
        const double f = heat_source_term(row[0], row[1], row[2]);
        want += f * f / cs.interior.size();
    }
    CHECK(close(loss_residual(m, cs, prob), want, 1e-13));
}

TEST_CASE("residual loss at an oracle-fitted heat checkpoint is tiny") {
    PdeProblem prob = PdeProblem::from_name("heat");
    MfModel fitted = read_checkpoint(std::string(MFB_TEST_DATA) + "/heat_prefit.json");

    CollocationSet cs;
    cs.interior.dim = 3;
    Rng rng(101);
    for (int i = 0; i < 800; ++i) {
        double row[3] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), 1.0};
        cs.interior.push(row);
    }

    const double at_fit = loss_residual(fitted, cs, prob);
    CHECK(at_fit <= 1e-4);
    MfModel fresh = init_params(fitted.specs, fitted.norm, 1234);
    CHECK(loss_residual(fresh, cs, prob) >= 100.0 * at_fit);
}

TEST_CASE("residual loss constrains the composite, not the LF head alone") {
    PdeProblem prob = PdeProblem::from_name("heat");
    MfModel full = model_for(prob, 17);
    auto cs = sample_points(prob, 30, 0, 0, 0, Sampling::Uniform, 3);

    MfModel lf_only = full;
    auto blocks = lf_only.blocks();
    for (size_t i = blocks[1].first; i < blocks[2].first + blocks[2].second; ++i)
        lf_only.params[i] = 0.0; // zero the two correctors, keep LF and gate
    const double r_full = loss_residual(full, cs, prob);
    const double r_lf = loss_residual(lf_only, cs, prob);
    CHECK(r_full != r_lf);

    CollocationSet none;
    none.interior.dim = 3;
    CHECK_THROWS_AS(loss_residual(full, none, prob), ContractError);
}

TEST_CASE("composite total recomposes from its terms for random models") {
    PdeProblem prob = PdeProblem::from_name("burgers");
    auto cs = sample_points(prob, 12, 8, 6, 0, Sampling::Uniform, 19);
    Dataset lf = synth_dataset(prob, 15, 1, 0.3);
    Dataset hf = synth_dataset(prob, 5, 2, -0.2);
    LossWeights w;
    w.lambda_hf = 3.5;
    w.lambda_r = 0.7;
    w.lambda_b = 12.0;
    w.lambda_ic = 4.0;

    for (uint64_t seed : {1, 2, 3, 4, 5}) {
        MfModel m = model_for(prob, seed);
        auto bd = composite_loss(m, prob, &lf, &hf, &cs, w);
        CHECK(bd.has_lf);
        CHECK(bd.has_hf);
        CHECK(bd.has_residual);
        CHECK(bd.has_bc);
        CHECK(bd.has_ic);
        CHECK(bd.l_lf >= 0);
        CHECK(bd.l_hf >= 0);
        CHECK(bd.l_residual >= 0);
        CHECK(bd.l_bc >= 0);
        CHECK(bd.l_ic >= 0);
        const double recomposed = bd.l_lf + w.lambda_hf * bd.l_hf + w.lambda_r * bd.l_residual +
                                  w.lambda_b * bd.l_bc + w.lambda_ic * bd.l_ic;
        CHECK(close(bd.total, recomposed, 1e-15));

        // terms agree with the standalone operations
        CHECK(close(bd.l_lf, loss_lf(m, lf), 1e-14));
        CHECK(close(bd.l_hf, loss_hf(m, hf), 1e-14));
        CHECK(close(bd.l_residual, loss_residual(m, cs, prob), 1e-14));
    }
}

TEST_CASE("composite gradient is the weighted sum of per-term gradients") {
    PdeProblem prob = PdeProblem::from_name("burgers");
    auto cs = sample_points(prob, 8, 6, 4, 0, Sampling::Uniform, 23);
    Dataset lf = synth_dataset(prob, 10, 4, 0.2);
    Dataset hf = synth_dataset(prob, 4, 5, -0.1);
    LossWeights w;
    w.lambda_hf = 2.0;
    w.lambda_r = 0.5;
    w.lambda_b = 7.0;
    w.lambda_ic = 3.0;

    MfModel m = model_for(prob, 41);
    const size_t np = m.n_params();
    std::vector<double> g_total(np), g_lf(np), g_hf(np), g_res(np), g_bc(np), g_ic(np);

    auto bd = composite_loss(m, prob, &lf, &hf, &cs, w, g_total);

    LossWeights unit; // per-term runs use weight 1 and scale manually
    unit.lambda_hf = unit.lambda_r = unit.lambda_b = unit.lambda_ic = 1.0;
    composite_loss(m, prob, &lf, nullptr, nullptr, unit, g_lf);
    composite_loss(m, prob, nullptr, &hf, nullptr, unit, g_hf);

    CollocationSet only_r = cs, only_b = cs, only_i = cs;
    only_r.boundary = Points{cs.boundary.dim, {}};
    only_r.boundary_targets.clear();
    only_r.initial = Points{cs.initial.dim, {}};
    only_r.initial_targets.clear();
    only_b.interior = Points{cs.interior.dim, {}};
    only_b.initial = Points{cs.initial.dim, {}};
    only_b.initial_targets.clear();
    only_i.interior = Points{cs.interior.dim, {}};
    only_i.boundary = Points{cs.boundary.dim, {}};
    only_i.boundary_targets.clear();
    composite_loss(m, prob, nullptr, nullptr, &only_r, unit, g_res);
    composite_loss(m, prob, nullptr, nullptr, &only_b, unit, g_bc);
    composite_loss(m, prob, nullptr, nullptr, &only_i, unit, g_ic);

    double worst = 0;
    for (size_t p = 0; p < np; ++p) {
        const double want = g_lf[p] + w.lambda_hf * g_hf[p] + w.lambda_r * g_res[p] +
                            w.lambda_b * g_bc[p] + w.lambda_ic * g_ic[p];
        worst = std::max(worst, std::abs(g_total[p] - want));
    }
    CHECK(worst < 1e-12);

    // weighted norm fields match the isolated gradients
    auto norm = [](const std::vector<double>& v) {
        return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    };
    CHECK(close(bd.g_lf, norm(g_lf), 1e-12));
    CHECK(close(bd.g_hf, w.lambda_hf * norm(g_hf), 1e-12));
    CHECK(close(bd.g_r, w.lambda_r * norm(g_res), 1e-12));
    CHECK(close(bd.g_bc, w.lambda_b * norm(g_bc), 1e-12));
    CHECK(close(bd.g_ic, w.lambda_ic * norm(g_ic), 1e-12));
}

TEST_CASE("composite gradient matches finite differences of the total") {
    PdeProblem prob = PdeProblem::from_name("heat");
    auto cs = sample_points(prob, 6, 6, 0, 0, Sampling::Uniform, 29);
    Dataset lf = synth_dataset(prob, 8, 7, 0.1);
    Dataset hf = synth_dataset(prob, 3, 8, 0.4);
    LossWeights w;

    MfModel m = model_for(prob, 53);
    std::vector<double> g(m.n_params());
    composite_loss(m, prob, &lf, &hf, &cs, w, g);

    Rng rng(97, 0);
    const double h = 1e-6;
    for (int probe = 0; probe < 12; ++probe) {
        const int p = rng.uniform_int(int(m.n_params()));
        MfModel mp = m, mm = m;
        mp.params[p] += h;
        mm.params[p] -= h;
        const double fp = composite_loss(mp, prob, &lf, &hf, &cs, w).total;
        const double fm = composite_loss(mm, prob, &lf, &hf, &cs, w).total;
        const double fd = (fp - fm) / (2 * h);
        CHECK(close(g[p], fd, 5e-5));
    }
}

TEST_CASE("absent inputs drop their terms") {
    PdeProblem heat = PdeProblem::from_name("heat");
    MfModel m = model_for(heat, 3);
    auto cs = sample_points(heat, 10, 8, 0, 0, Sampling::Uniform, 13);
    LossWeights w;

    auto bd = composite_loss(m, heat, nullptr, nullptr, &cs, w);
    CHECK(!bd.has_lf);
    CHECK(!bd.has_hf);
    CHECK(bd.has_residual);
    CHECK(bd.has_bc);
    CHECK(!bd.has_ic); // steady problem: no initial manifold
    CHECK(bd.total == w.lambda_r * bd.l_residual + w.lambda_b * bd.l_bc);

    auto no_r = composite_loss(m, heat, nullptr, nullptr, &cs, w, {}, false);
    CHECK(!no_r.has_residual);
    CHECK(no_r.l_residual == 0.0);
    CHECK(no_r.has_bc);

    std::vector<double> wrong(3);
    CHECK_THROWS_AS(composite_loss(m, heat, nullptr, nullptr, &cs, w, wrong), ContractError);

    LossWeights bad;
    bad.lambda_r = 0.0;
    CHECK_THROWS_AS(composite_loss(m, heat, nullptr, nullptr, &cs, bad), ConfigError);
}

TEST_CASE("weight balancing is a fixed point at equal weighted norms") {
    LossWeights w;
    w.lambda_hf = 4.0;
    w.lambda_r = 0.3;
    w.lambda_b = 11.0;
    w.lambda_ic = 2.0;
    LossBreakdown bd;
    bd.has_lf = bd.has_hf = bd.has_residual = bd.has_bc = bd.has_ic = true;
    bd.g_lf = bd.g_hf = bd.g_r = bd.g_bc = bd.g_ic = 0.7;

    auto next = balance_weights({&bd, 1}, w);
    CHECK(next.lambda_hf == w.lambda_hf);
    CHECK(next.lambda_r == w.lambda_r);
    CHECK(next.lambda_b == w.lambda_b);
    CHECK(next.lambda_ic == w.lambda_ic);
}

TEST_CASE("a dominating term's weight shrinks monotonically") {
    // fixed raw gradient norms; the residual term is 100x the others
    const double raw_lf = 1.0, raw_hf = 1.0, raw_r = 100.0, raw_b = 1.0, raw_ic = 1.0;
    LossWeights w; // lambda_r starts at 1
    double prev = w.lambda_r;
    for (int it = 0; it < 25; ++it) {
        LossBreakdown bd;
        bd.has_lf = bd.has_hf = bd.has_residual = bd.has_bc = bd.has_ic = true;
        bd.g_lf = raw_lf;
        bd.g_hf = w.lambda_hf * raw_hf;
        bd.g_r = w.lambda_r * raw_r;
        bd.g_bc = w.lambda_b * raw_b;
        bd.g_ic = w.lambda_ic * raw_ic;
        w = balance_weights({&bd, 1}, w);
        CHECK(w.lambda_r < prev);
        prev = w.lambda_r;
    }
    // heading toward the equilibrium 31/400 where its weighted norm meets the mean
    CHECK(w.lambda_r < 0.3);
}

TEST_CASE("weight balancing guards and clipping") {
    LossWeights w;
    LossBreakdown bd;
    bd.has_lf = bd.has_hf = bd.has_residual = bd.has_bc = true;
    bd.g_lf = 0.5;
    bd.g_hf = 0.5;
    bd.g_r = 1e-15; // dead term freezes the update
    bd.g_bc = 0.5;
    auto frozen = balance_weights({&bd, 1}, w);
    CHECK(frozen.lambda_hf == w.lambda_hf);
    CHECK(frozen.lambda_r == w.lambda_r);

    // a huge raw norm under a tiny weight hits the lower clip bound
    LossWeights wl = w;
    wl.lambda_r = 1e-3;
    bd.g_r = 1e9;
    auto clipped = balance_weights({&bd, 1}, wl);
    CHECK(close(clipped.lambda_r, 0.9 * 1e-3 + 0.1 * 1e-2, 1e-12));

    // a starved term hits the upper clip bound
    LossBreakdown hungry = bd;
    hungry.g_r = 0.5;
    hungry.g_hf = 1e-6;
    auto boosted = balance_weights({&hungry, 1}, w);
    CHECK(close(boosted.lambda_hf, 0.9 * w.lambda_hf + 0.1 * 1e3, 1e-12));

    // absent terms never move
    LossBreakdown steady;
    steady.has_lf = steady.has_residual = steady.has_bc = true;
    steady.g_lf = steady.g_r = steady.g_bc = 1.0;
    steady.g_hf = 0.0;
    auto s = balance_weights({&steady, 1}, w);
    CHECK(s.lambda_hf == w.lambda_hf);
    CHECK(s.lambda_ic == w.lambda_ic);

    CHECK_THROWS_AS(balance_weights({}, w), ContractError);
}

TEST_CASE("subset helpers slice datasets and collocation sets") {
    PdeProblem prob = PdeProblem::from_name("burgers");
    Dataset ds = synth_dataset(prob, 10, 2, 0.5);
    const int idx[] = {7, 0, 3};
    Dataset sub = subset_dataset(ds, idx);
    CHECK(sub.size() == 3);
    CHECK(std::equal(sub.points[0].begin(), sub.points[0].end(), ds.points[7].begin()));
    CHECK(sub.labels[1] == ds.labels[0]);
    const int bad[] = {10};
    CHECK_THROWS_AS(subset_dataset(ds, bad), ContractError);

    auto cs = sample_points(prob, 9, 6, 4, 0, Sampling::Uniform, 31);
    const int ii[] = {1, 8};
    const int bi[] = {5};
    const int ni[] = {0, 3};
    auto sc = subset_collocation(cs, ii, bi, ni);
    CHECK(sc.interior.size() == 2);
    CHECK(sc.boundary.size() == 1);
    CHECK(sc.initial.size() == 2);
    CHECK(std::equal(sc.boundary[0].begin(), sc.boundary[0].end(), cs.boundary[5].begin()));
    CHECK(sc.boundary_targets[0] == cs.boundary_targets[5]);
    CHECK(sc.initial_targets[1] == cs.initial_targets[3]);
}
