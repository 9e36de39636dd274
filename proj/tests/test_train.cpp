#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mfb/io.hpp"
#include "mfb/rng.hpp"
#include "mfb/train.hpp"

using namespace mfb;

namespace {

bool blocks_equal(const MfModel& a, const MfModel& b, int first, int last) {
    for (int blk = first; blk <= last; ++blk) {
        auto sa = const_cast<MfModel&>(a).block_span(blk);
        auto sb = const_cast<MfModel&>(b).block_span(blk);
        if (sa.size() != sb.size()) return false;
        if (std::memcmp(sa.data(), sb.data(), sa.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

Dataset linear_lf_dataset(const PdeProblem& prob, int n, uint64_t seed) {
    Dataset ds;
    ds.coord_names = {"x", "t"};
    ds.label_names = {"u"};
    ds.points.dim = prob.point_dim();
    ds.out_dim = 1;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform(prob.lo[0], prob.hi[0]);
        const double t = rng.uniform(0.0, prob.t_end);
        const double mu = rng.uniform(prob.mu_lo, prob.mu_hi);
        const double row[3] = {x, t, mu};
        ds.points.push(row);
        ds.labels.push_back(2.0 * x);
    }
    return ds;
}

MfModel mini_model(const PdeProblem& prob, uint64_t seed,
                   ModelKind kind = ModelKind::Full) {
    if (kind == ModelKind::SingleNet) {
        MfSpecs specs;
        specs.lf = single_net_spec(prob.coord_dim(), prob.out_dim, Preset::Mini);
        return init_params(specs, domain_normalization(prob), seed, GateMode::Learned, kind);
    }
    return init_params(default_specs(prob.coord_dim(), prob.out_dim, Preset::Mini),
                       domain_normalization(prob), seed);
}

} // namespace

TEST_CASE("adam first step matches the hand-computed bias-corrected update") {
    std::vector<double> p = {1.0, 2.0};
    const std::vector<double> g = {0.5, -1.0};
    AdamState st(2);
    adam_step(p, g, st, 0.1);
    CHECK(p[0] == doctest::Approx(0.900000002).epsilon(1e-13));
    CHECK(p[1] == doctest::Approx(2.099999999).epsilon(1e-13));
    CHECK(st.t == 1);
}

TEST_CASE("adam with zero gradient leaves params bitwise unchanged") {
    std::vector<double> p = {0.3, -1.7, 0.0};
    const std::vector<double> before = p;
    const std::vector<double> g = {0.0, 0.0, 0.0};
    AdamState st(3);
    adam_step(p, g, st, 1e-2);
    adam_step(p, g, st, 1e-2);
    CHECK(std::memcmp(p.data(), before.data(), p.size() * sizeof(double)) == 0);
}

TEST_CASE("adam is deterministic from identical state") {
    std::vector<double> p1 = {0.4, -0.9}, p2 = p1;
    const std::vector<double> g = {1.3, 0.2};
    AdamState s1(2), s2(2);
    for (int i = 0; i < 5; ++i) {
        adam_step(p1, g, s1, 3e-3);
        adam_step(p2, g, s2, 3e-3);
    }
    CHECK(p1[0] == p2[0]);
    CHECK(p1[1] == p2[1]);
    CHECK(s1.m[0] == s2.m[0]);
    CHECK(s1.v[1] == s2.v[1]);
}

TEST_CASE("adam lr_scale freezes and rescales per parameter") {
    std::vector<double> p = {1.0, 1.0}, ref = {1.0, 1.0};
    const std::vector<double> g = {0.7, 0.7};
    const std::vector<double> scale = {0.0, 0.1};
    AdamState st(2), st_ref(2);
    adam_step(p, g, st, 0.05, scale);
    adam_step(ref, g, st_ref, 0.05);
    CHECK(p[0] == 1.0); // frozen entry untouched
    CHECK(1.0 - p[1] == doctest::Approx(0.1 * (1.0 - ref[1])).epsilon(1e-12));
}

TEST_CASE("adam rejects mismatched buffers") {
    std::vector<double> p = {1.0, 2.0};
    const std::vector<double> g = {1.0};
    AdamState st(2);
    CHECK_THROWS_AS(adam_step(p, g, st, 0.1), ContractError);
    AdamState bad(3);
    const std::vector<double> g2 = {1.0, 1.0};
    CHECK_THROWS_AS(adam_step(p, g2, bad, 0.1), ContractError);
}

TEST_CASE("lbfgs drives a 10-dim quadratic to tiny gradient within 30 iterations") {
    const int n = 10;
    std::vector<double> c(n), x0(n, 0.0);
    for (int i = 0; i < n; ++i) c[i] = 0.3 * (i + 1) - 1.0;
    ObjectiveFn f = [&](std::span<const double> x, std::span<double> g) {
        double v = 0;
        for (int i = 0; i < n; ++i) {
            const double d = x[i] - c[i];
            v += (i + 1) * d * d;
            g[i] = 2.0 * (i + 1) * d;
        }
        return v;
    };
    const auto res = lbfgs_refine(x0, f, 100, 10);
    CHECK(res.converged);
    CHECK(res.iters <= 30);
    CHECK(res.grad_norm <= 1e-8);
    for (int i = 0; i < n; ++i) CHECK(res.params[i] == doctest::Approx(c[i]).epsilon(1e-7));
}

TEST_CASE("lbfgs started at the minimizer does not move") {
    std::vector<double> x0 = {2.0, -3.0};
    ObjectiveFn f = [&](std::span<const double> x, std::span<double> g) {
        const double a = x[0] - 2.0, b = x[1] + 3.0;
        g[0] = 2 * a;
        g[1] = 2 * b;
        return a * a + b * b;
    };
    const auto res = lbfgs_refine(x0, f, 50, 5);
    CHECK(res.converged);
    CHECK(res.iters == 0);
    CHECK(res.params[0] == 2.0);
    CHECK(res.params[1] == -3.0);
}

TEST_CASE("lbfgs solves Rosenbrock from the classical start") {
    std::vector<double> x0 = {-1.2, 1.0};
    std::vector<double> trace;
    ObjectiveFn f = [](std::span<const double> x, std::span<double> g) {
        const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    const auto res = lbfgs_refine(x0, f, 500, 10,
                                  [&](int, double fv, double) { trace.push_back(fv); });
    CHECK(res.converged);
    CHECK(std::abs(res.params[0] - 1.0) <= 1e-5);
    CHECK(std::abs(res.params[1] - 1.0) <= 1e-5);
    // accepted iterates are monotone non-increasing under strong Wolfe
    for (size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-14);
}

TEST_CASE("lbfgs line-search failure returns best-so-far with the warning flag") {
    std::vector<double> x0 = {0.0};
    ObjectiveFn f = [](std::span<const double>, std::span<double> g) {
        g[0] = 1.0; // constant loss with a lying gradient: no step can satisfy Armijo
        return 5.0;
    };
    const auto res = lbfgs_refine(x0, f, 20, 5);
    CHECK(res.line_search_failed);
    CHECK_FALSE(res.converged);
    CHECK(res.loss == 5.0);
    CHECK(res.params[0] == 0.0);
}

TEST_CASE("pretrain_lf with zero epochs changes nothing") {
    const auto prob = PdeProblem::make(ProblemKind::Burgers);
    MfModel model = mini_model(prob, 3);
    const MfModel before = model;
    TrainConfig cfg;
    cfg.lf_stage.epochs = 0;
    const auto ds = linear_lf_dataset(prob, 64, 11);
    const auto rep = pretrain_lf(model, ds, cfg);
    CHECK(rep.history.empty());
    CHECK(blocks_equal(model, before, 0, 3));
}

TEST_CASE("pretrain_lf learns a linear target and freezes the correlators") {
    const auto prob = PdeProblem::make(ProblemKind::Burgers);
    MfModel model = mini_model(prob, 5);
    const MfModel before = model;
    const auto ds = linear_lf_dataset(prob, 512, 17);

    TrainConfig cfg;
    cfg.lf_stage = {2000, 3e-3};
    cfg.batch_lf = 128;
    cfg.seed = 9;
    const auto rep = pretrain_lf(model, ds, cfg);

    CHECK(int(rep.history.size()) == 2000);
    CHECK(loss_lf(model, ds) <= 1e-4);
    // everything but the LF block is bitwise untouched
    CHECK(blocks_equal(model, before, 1, 3));
    CHECK_FALSE(blocks_equal(model, before, 0, 0));
    CHECK(rep.lf_time_s > 0);
}

TEST_CASE("pretrain_lf reports divergence with the last finite epoch") {
    const auto prob = PdeProblem::make(ProblemKind::Burgers);
    MfModel model = mini_model(prob, 5);
    auto ds = linear_lf_dataset(prob, 16, 17);
    for (auto& v : ds.labels) v = 1e200; // squared error overflows immediately
    TrainConfig cfg;
    cfg.lf_stage = {10, 1e-3};
    try {
        pretrain_lf(model, ds, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& err) {
        CHECK(err.last_finite_epoch == -1);
    }
}

TEST_CASE("train_mf is deterministic per seed") {
    const auto prob = PdeProblem::make(ProblemKind::Heat);
    const auto lf_grid = solve_heat_fd(1.0, 32);
    const auto hf_grid = solve_heat_fd(1.0, 64);
    const auto lf = sample_interpolated(lf_grid, 128, 0.0, 21);
    const auto hf = sample_dataset(hf_grid, 64, 0.0, 22);

    TrainConfig cfg;
    cfg.lf_stage = {40, 1e-3};
    cfg.mf_stage = {60, 1e-3};
    cfg.lbfgs_iters = 5;
    cfg.batch_lf = 32;
    cfg.batch_interior = 32;
    cfg.batch_boundary = 16;
    cfg.n_interior = 64;
    cfg.n_boundary = 32;
    cfg.n_initial = 0;
    cfg.resample_every = 25;
    cfg.seed = 77;

    MfModel m1 = mini_model(prob, 13);
    MfModel m2 = mini_model(prob, 13);
    const auto r1 = train_mf(m1, prob, &lf, &hf, cfg);
    const auto r2 = train_mf(m2, prob, &lf, &hf, cfg);

    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i)
        CHECK(r1.history[i].total == r2.history[i].total);
    REQUIRE(r1.final_params.size() == r2.final_params.size());
    CHECK(std::memcmp(r1.final_params.data(), r2.final_params.data(),
                      r1.final_params.size() * sizeof(double)) == 0);
    CHECK(r1.final_mre == r2.final_mre);
    CHECK(r1.stage_names == std::vector<std::string>{"lf", "adam", "lbfgs"});
    CHECK(r1.stage_params.size() == 3);
}

TEST_CASE("train_mf drops the residual term under the ablation flag") {
    const auto prob = PdeProblem::make(ProblemKind::Heat);
    const auto hf = sample_dataset(solve_heat_fd(1.0, 32), 48, 0.0, 5);

    TrainConfig cfg;
    cfg.lf_stage.epochs = 0;
    cfg.mf_stage = {20, 1e-3};
    cfg.lbfgs_iters = 0;
    cfg.n_interior = 32;
    cfg.n_boundary = 16;
    cfg.n_initial = 0;
    cfg.batch_interior = 16;
    cfg.batch_boundary = 8;
    cfg.no_residual = true;

    MfModel model = mini_model(prob, 2);
    const auto rep = train_mf(model, prob, nullptr, &hf, cfg);
    REQUIRE(!rep.history.empty());
    for (const auto& bd : rep.history) {
        CHECK_FALSE(bd.has_residual);
        CHECK(bd.has_bc); // boundary supervision stays on
    }
}

TEST_CASE("train_mf runs residual-adaptive resampling and reduces the loss") {
    const auto prob = PdeProblem::make(ProblemKind::Burgers);
    const auto lf = sample_interpolated(solve_burgers_fd(0.05, 32), 96, 0.0, 31);

    TrainConfig cfg;
    cfg.lf_stage = {30, 1e-3};
    cfg.mf_stage = {60, 2e-3};
    cfg.lbfgs_iters = 0;
    cfg.batch_lf = 32;
    cfg.n_interior = 48;
    cfg.n_boundary = 16;
    cfg.n_initial = 16;
    cfg.batch_interior = 24;
    cfg.batch_boundary = 8;
    cfg.batch_initial = 8;
    cfg.sampling = Sampling::ResidualAdaptive;
    cfg.resample_every = 20;
    cfg.seed = 4;

    MfModel model = mini_model(prob, 8);
    const auto rep = train_mf(model, prob, &lf, nullptr, cfg);
    REQUIRE(int(rep.history.size()) == 90);
    const int adam0 = rep.stage_starts[1];
    CHECK(rep.history.back().total < rep.history[adam0].total);
    CHECK(std::isfinite(rep.final_mre));
}

TEST_CASE("train_mf single-net baseline trains on HF data alone") {
    const auto prob = PdeProblem::make(ProblemKind::Heat);
    const auto hf = sample_dataset(solve_heat_fd(1.0, 64), 64, 0.0, 9);

    TrainConfig cfg;
    cfg.mf_stage = {40, 1e-3};
    cfg.lbfgs_iters = 3;
    cfg.n_interior = 32;
    cfg.n_boundary = 16;
    cfg.n_initial = 0;
    cfg.batch_interior = 16;
    cfg.batch_boundary = 8;

    MfModel model = mini_model(prob, 6, ModelKind::SingleNet);
    const auto rep = train_mf(model, prob, nullptr, &hf, cfg);
    CHECK(rep.stage_names == std::vector<std::string>{"adam", "lbfgs"});
    CHECK(std::isfinite(rep.final_mre));
    for (const auto& bd : rep.history) CHECK_FALSE(bd.has_lf);
}

TEST_CASE("train_mf surfaces divergence as TrainingError") {
    const auto prob = PdeProblem::make(ProblemKind::Heat);
    auto hf = sample_dataset(solve_heat_fd(1.0, 32), 16, 0.0, 3);
    for (auto& v : hf.labels) v = 1e200;
    TrainConfig cfg;
    cfg.lf_stage.epochs = 0;
    cfg.mf_stage = {10, 1e-3};
    cfg.lbfgs_iters = 0;
    cfg.n_interior = 0;
    cfg.n_boundary = 0;
    cfg.n_initial = 0;
    MfModel model = mini_model(prob, 1);
    CHECK_THROWS_AS(train_mf(model, prob, nullptr, &hf, cfg), TrainingError);
}

TEST_CASE("evaluate_mre of the zero model matches a direct computation") {
    const auto prob = PdeProblem::make(ProblemKind::Heat);
    MfModel model = mini_model(prob, 7);
    std::fill(model.params.begin(), model.params.end(), 0.0);

    double sum = 0, amax = 0;
    for (int i = 0; i < 101; ++i)
        for (int j = 0; j < 101; ++j) {
            const double u = heat_exact(i / 100.0, j / 100.0);
            sum += std::abs(u);
            amax = std::max(amax, std::abs(u));
        }
    const double want = sum / (101.0 * 101.0 * (amax + 1e-12));
    CHECK(evaluate_mre(model, prob, 1.0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("training log is columnar with one row per step") {
    const auto prob = PdeProblem::make(ProblemKind::Burgers);
    MfModel model = mini_model(prob, 5);
    const auto ds = linear_lf_dataset(prob, 32, 2);
    TrainConfig cfg;
    cfg.lf_stage = {5, 1e-3};
    cfg.batch_lf = 16;
    const auto rep = pretrain_lf(model, ds, cfg);

    const std::string path = "train_log_test.txt";
    write_training_log(rep, path);
    const std::string text = read_file(path);
    size_t lines = 0;
    for (char ch : text)
        if (ch == '\n') ++lines;
    CHECK(lines == 6); // header + 5 epochs
    CHECK(text.rfind("epoch stage lr total", 0) == 0);
    std::remove(path.c_str());
}

TEST_CASE("config validation rejects bad schedules") {
    TrainConfig cfg;
    cfg.mf_stage.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    TrainConfig cfg2;
    cfg2.lbfgs_memory = 0;
    CHECK_THROWS_AS(cfg2.validate(), ConfigError);
    TrainConfig cfg3;
    cfg3.lf_stage.epochs = -1;
    CHECK_THROWS_AS(cfg3.validate(), ConfigError);
}
