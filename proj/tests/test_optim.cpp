#include <catch2/catch_amalgamated.hpp>

#include <gatenet/optim.hpp>
#include <gatenet/losses.hpp>

#include <cmath>

using namespace gatenet;

namespace {

// Smallest possible routed model: y = m * sigma(w) * x with m in the main
// group and w in the attention group.
class ToyModel : public Model {
public:
    ToyModel()
        : m_(Tensor::param("m", {1.0}, {1})),
          w_(Tensor::param("w", {0.0}, {1}, Group::att)) {}

    Tensor forward(const Tensor& x) override { return mul(mul(m_, sigmoid(w_)), x); }
    ParamList params() const override { return {m_, w_}; }
    std::vector<GatePlacement> gates() const override { return {}; }
    const ModelConfig& config() const override { return cfg_; }

    Tensor m_, w_;

private:
    ModelConfig cfg_;
};

LossFn squared_loss() {
    return [](const Tensor& preds) { return sum(mul(preds, preds)); };
}

OptimConfig sgd(double lr) {
    OptimConfig c;
    c.lr = lr;
    c.weight_decay = 0.0;
    c.clip_threshold = 1e9;
    c.plain_sgd = true;
    return c;
}

} // namespace

TEST_CASE("global norm clipping", "[optim]") {
    GradientMap g{{"a", {3.0, 4.0}}};

    SECTION("at or below the threshold nothing moves") {
        auto c = clip_gradients(g, 5.0);
        REQUIRE(c.at("a") == std::vector<double>{3.0, 4.0});
        auto c2 = clip_gradients(g, 128.0);
        REQUIRE(c2.at("a") == std::vector<double>{3.0, 4.0});
    }

    SECTION("above the threshold scales onto the sphere") {
        GradientMap big{{"a", {6.0, 8.0}}};
        auto c = clip_gradients(big, 5.0);
        REQUIRE(std::abs(c.at("a")[0] - 3.0) < 1e-15);
        REQUIRE(std::abs(c.at("a")[1] - 4.0) < 1e-15);
        REQUIRE(std::abs(grad_global_norm(c) - 5.0) < 1e-12);
    }

    SECTION("the norm is joint across entries") {
        GradientMap two{{"a", {3.0}}, {"b", {4.0}}};
        REQUIRE(grad_global_norm(two) == 5.0);
        auto c = clip_gradients(two, 1.0);
        REQUIRE(std::abs(c.at("a")[0] - 0.6) < 1e-15);
        REQUIRE(std::abs(c.at("b")[0] - 0.8) < 1e-15);
    }

    SECTION("clipping preserves direction") {
        GradientMap big{{"a", {1.0, -2.0, 3.0}}, {"b", {-4.0, 5.0}}};
        auto c = clip_gradients(big, 0.5);
        double dot = 0, na = 0, nc = 0;
        for (const auto& [k, v] : big)
            for (std::size_t i = 0; i < v.size(); ++i) {
                dot += v[i] * c.at(k)[i];
                na += v[i] * v[i];
                nc += c.at(k)[i] * c.at(k)[i];
            }
        REQUIRE(std::abs(dot / std::sqrt(na * nc) - 1.0) < 1e-12);
    }

    SECTION("non-positive thresholds are rejected") {
        REQUIRE_THROWS_AS(clip_gradients(g, 0.0), std::invalid_argument);
        REQUIRE_THROWS_AS(clip_gradients(g, -3.0), std::invalid_argument);
    }
}

TEST_CASE("cosine warm restarts", "[optim]") {
    ScheduleState s;
    s.eta_min = 0.1;
    s.eta_max = 1.0;
    s.T_i = 4;

    SECTION("endpoints and midpoint") {
        s.T_cur = 0;
        REQUIRE(cosine_warm_restart_lr(s) == 1.0);
        s.T_cur = 2;
        REQUIRE(std::abs(cosine_warm_restart_lr(s) - 0.55) < 1e-15);
        s.T_cur = 4;
        REQUIRE(std::abs(cosine_warm_restart_lr(s) - 0.1) < 1e-15);
    }

    SECTION("three cycles match the closed form") {
        std::vector<double> seen;
        for (int step = 0; step < 4 + 1 + 8 + 1 + 16 + 1; ++step) {
            seen.push_back(cosine_warm_restart_lr(s));
            schedule_advance(s);
        }
        std::size_t idx = 0;
        long Ti = 4;
        for (int cycle = 0; cycle < 3; ++cycle) {
            for (long k = 0; k <= Ti; ++k, ++idx) {
                double want = 0.1 + 0.45 * (1.0 + std::cos(M_PI * static_cast<double>(k) /
                                                           static_cast<double>(Ti)));
                REQUIRE(std::abs(seen[idx] - want) < 1e-12);
            }
            Ti *= 2;
        }
        REQUIRE(s.T_i == 32); // restarted twice past the third cycle
    }

    SECTION("range violations are rejected") {
        s.T_cur = 5;
        REQUIRE_THROWS_AS(cosine_warm_restart_lr(s), std::invalid_argument);
        s.T_cur = -1;
        REQUIRE_THROWS_AS(cosine_warm_restart_lr(s), std::invalid_argument);
    }
}

TEST_CASE("adam hand steps", "[optim]") {
    OptimConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    cfg.clip_threshold = 1e9;

    SECTION("first two identical gradients move the same distance") {
        auto p = Tensor::param("p", {0.0}, {1});
        ParamGroup g("g", {p}, cfg);
        GradientMap grads{{"p", {0.5}}};

        g.apply(grads);
        double d1 = p.data()[0];
        REQUIRE(std::abs(d1 + 0.1) < 1e-7); // bias correction cancels on step one

        g.apply(grads);
        double d2 = p.data()[0] - d1;
        REQUIRE(std::abs(d2 - d1) < 1e-12);
        REQUIRE(g.step_count() == 2);
    }

    SECTION("zero gradient leaves parameters untouched") {
        auto p = Tensor::param("p", {0.7, -0.3}, {2});
        ParamGroup g("g", {p}, cfg);
        g.apply(GradientMap{{"p", {0.0, 0.0}}});
        REQUIRE(p.data() == std::vector<double>{0.7, -0.3});
    }

    SECTION("weight decay is decoupled from the gradient path") {
        OptimConfig wd = cfg;
        wd.weight_decay = 0.5;
        auto p = Tensor::param("p", {2.0}, {1});
        ParamGroup g("g", {p}, wd);
        g.apply(GradientMap{{"p", {0.0}}});
        // theta <- theta * (1 - lr*wd), no gradient contribution
        REQUIRE(std::abs(p.data()[0] - 2.0 * 0.95) < 1e-15);
    }

    SECTION("plain sgd mode") {
        auto p = Tensor::param("p", {1.0}, {1});
        ParamGroup g("g", {p}, sgd(0.1));
        g.apply(GradientMap{{"p", {0.25}}});
        REQUIRE(p.data()[0] == 1.0 - 0.1 * 0.25);
    }

    SECTION("missing names restrict to zero gradients") {
        auto p = Tensor::param("p", {1.0}, {1});
        auto q = Tensor::param("q", {1.0}, {1});
        ParamGroup g("g", {p, q}, sgd(0.1));
        auto mine = g.restrict(GradientMap{{"p", {1.0}}, {"other", {9.0}}});
        REQUIRE(mine.size() == 2);
        REQUIRE(mine.at("q") == std::vector<double>{0.0});
        REQUIRE(mine.count("other") == 0);
    }
}

TEST_CASE("scheduled group walks its own lr trace", "[optim]") {
    OptimConfig cfg;
    cfg.lr = 1.0;
    cfg.weight_decay = 0.0;
    cfg.plain_sgd = true;
    cfg.use_schedule = true;
    cfg.eta_min = 0.0;
    cfg.schedule_T0 = 2;
    cfg.schedule_t_mult = 2;
    auto p = Tensor::param("p", {0.0}, {1});
    ParamGroup g("g", {p}, cfg);

    // lrs along T0=2: 1, 0.5, 0 then restart with T_i=4
    REQUIRE(g.current_lr() == 1.0);
    auto a0 = g.apply(GradientMap{{"p", {1.0}}});
    REQUIRE(a0.lr == 1.0);
    auto a1 = g.apply(GradientMap{{"p", {1.0}}});
    REQUIRE(std::abs(a1.lr - 0.5) < 1e-15);
    auto a2 = g.apply(GradientMap{{"p", {1.0}}});
    REQUIRE(a2.lr == 0.0);
    auto a3 = g.apply(GradientMap{{"p", {1.0}}});
    REQUIRE(a3.lr == 1.0); // restarted
    REQUIRE(g.schedule().T_i == 4);
}

TEST_CASE("routed toy trajectory", "[optim]") {
    ToyModel model;
    ParamGroup att("att", model.params_in(Group::att), sgd(0.1));
    ParamGroup main_g("main", model.params_in(Group::main), sgd(0.1));
    auto x = Tensor::from({1.0}, {1});

    auto rep = gr_train_step(model, x, att, main_g, squared_loss(), squared_loss());

    // phase A: dL/dw at (m=1, w=0) is 2*y*m*x*sigma'(0) = 0.25
    REQUIRE(std::abs(model.w_.data()[0] - (-0.025)) < 1e-15);
    // phase B sees the fresh gate sigma(-0.025)
    REQUIRE(std::abs(model.m_.data()[0] - 0.951242123213632120) < 1e-9);
    REQUIRE(std::abs(model.m_.data()[0] - 0.951237) < 1e-5);

    // losses came from the two distinct forward passes
    REQUIRE(std::abs(rep.loss_att - 0.25) < 1e-15);
    double f1 = 1.0 / (1.0 + std::exp(0.025));
    REQUIRE(std::abs(rep.loss_main - f1 * f1) < 1e-12);

    SECTION("reversed phase order lands on a different m") {
        ToyModel rev;
        ParamGroup att2("att", rev.params_in(Group::att), sgd(0.1));
        ParamGroup main2("main", rev.params_in(Group::main), sgd(0.1));
        auto loss = squared_loss();

        // main first, then attention on a fresh forward
        zero_grads(rev.params());
        auto gm = backward(loss(rev.forward(x)));
        main2.apply(gm);
        zero_grads(rev.params());
        auto ga = backward(loss(rev.forward(x)));
        att2.apply(ga);

        REQUIRE(std::abs(rev.m_.data()[0] - 0.95) < 1e-15);
        REQUIRE(std::abs(rev.m_.data()[0] - model.m_.data()[0]) > 1e-4);
    }
}

TEST_CASE("routing keeps the groups isolated", "[optim]") {
    ModelConfig cfg;
    cfg.arch = "gated_mlp";
    cfg.in_dim = 4;
    cfg.hidden = 6;
    Rng rng(9);
    std::vector<double> xv(8);
    for (auto& v : xv) v = rng.normal();
    auto x = Tensor::from(xv, {2, 4});
    auto loss = squared_loss();

    SECTION("frozen main group is bitwise untouched by the att phase") {
        auto m = model_build(cfg, 31);
        OptimConfig frozen = sgd(0.0);
        ParamGroup att("att", m->params_in(Group::att), sgd(0.01));
        ParamGroup main_g("main", m->params_in(Group::main), frozen);
        auto before_main = m->params_in(Group::main);
        std::vector<std::vector<double>> snap;
        for (const auto& p : before_main) snap.push_back(p.data());
        auto before_att = m->params_in(Group::att)[0].data();

        gr_train_step(*m, x, att, main_g, loss, loss);

        for (std::size_t i = 0; i < snap.size(); ++i)
            REQUIRE(m->params_in(Group::main)[i].data() == snap[i]);
        REQUIRE(m->params_in(Group::att)[0].data() != before_att);
    }

    SECTION("frozen att group is bitwise untouched by the main phase") {
        auto m = model_build(cfg, 31);
        ParamGroup att("att", m->params_in(Group::att), sgd(0.0));
        ParamGroup main_g("main", m->params_in(Group::main), sgd(0.01));
        auto before_att = m->params_in(Group::att)[0].data();
        auto before_fc1 = m->params_in(Group::main)[0].data();

        gr_train_step(*m, x, att, main_g, loss, loss);

        REQUIRE(m->params_in(Group::att)[0].data() == before_att);
        REQUIRE(m->params_in(Group::main)[0].data() != before_fc1);
    }

    SECTION("empty att group is rejected with a pointer to the baseline step") {
        cfg.use_hag = false;
        auto m = model_build(cfg, 31);
        ParamGroup att("att", m->params_in(Group::att), sgd(0.01));
        ParamGroup main_g("main", m->params_in(Group::main), sgd(0.01));
        REQUIRE_THROWS_WITH(gr_train_step(*m, x, att, main_g, loss, loss),
                            Catch::Matchers::ContainsSubstring("standard_train_step"));
    }
}

TEST_CASE("zero-gradient batch moves nothing in either phase", "[optim]") {
    ModelConfig cfg;
    cfg.arch = "gated_mlp";
    cfg.in_dim = 3;
    cfg.hidden = 4;
    auto m = model_build(cfg, 5);
    ParamGroup att("att", m->params_in(Group::att), sgd(0.05));
    ParamGroup main_g("main", m->params_in(Group::main), sgd(0.05));
    auto x = Tensor::from({1.0, 2.0, 3.0}, {1, 3});
    LossFn constant = [](const Tensor& preds) { return scale(sum(preds), 0.0); };

    std::vector<std::vector<double>> snap;
    for (const auto& p : m->params()) snap.push_back(p.data());
    auto rep = gr_train_step(*m, x, att, main_g, constant, constant);
    auto after = m->params();
    for (std::size_t i = 0; i < snap.size(); ++i) REQUIRE(after[i].data() == snap[i]);
    REQUIRE(rep.loss_att == 0.0);
    REQUIRE(rep.pre_clip_att == 0.0);
}

TEST_CASE("non-finite losses abort the step and name the phase", "[optim]") {
    ToyModel model;
    ParamGroup att("att", model.params_in(Group::att), sgd(0.1));
    ParamGroup main_g("main", model.params_in(Group::main), sgd(0.1));
    auto x = Tensor::from({1.0}, {1});
    LossFn explode = [](const Tensor& preds) {
        return scale(scale(add(sum(preds), Tensor::scalar(1.0)), 1e308), 1e308);
    };
    REQUIRE_THROWS_WITH(gr_train_step(model, x, att, main_g, explode, squared_loss()),
                        Catch::Matchers::ContainsSubstring("att"));
    REQUIRE_THROWS_WITH(gr_train_step(model, x, att, main_g, squared_loss(), explode),
                        Catch::Matchers::ContainsSubstring("main"));
}

TEST_CASE("standard step covers the whole model with one group", "[optim]") {
    ModelConfig cfg;
    cfg.arch = "gated_mlp";
    cfg.in_dim = 3;
    cfg.hidden = 4;
    cfg.use_hag = false;
    auto m = model_build(cfg, 8);
    ParamGroup all("all", m->params(), sgd(0.05));
    auto x = Tensor::from({0.5, -1.0, 2.0}, {1, 3});

    auto before = m->params()[0].data();
    auto rep = standard_train_step(*m, x, all, squared_loss());
    REQUIRE(std::isnan(rep.loss_att));
    REQUIRE(rep.loss_main >= 0.0);
    REQUIRE(m->params()[0].data() != before);
    REQUIRE(all.step_count() == 1);
}

TEST_CASE("training reports track the clipping contract", "[optim]") {
    ModelConfig cfg;
    cfg.arch = "gated_mlp";
    cfg.in_dim = 4;
    cfg.hidden = 8;
    auto m = model_build(cfg, 77);
    OptimConfig tight;
    tight.lr = 0.05;
    tight.weight_decay = 0.0;
    tight.clip_threshold = 0.05; // low enough to activate regularly
    ParamGroup att("att", m->params_in(Group::att), tight);
    ParamGroup main_g("main", m->params_in(Group::main), tight);

    Rng rng(13);
    std::vector<double> ys{3.0, 8.0, 12.0, 16.0};
    SizeLossConfig lcfg;
    LossFn loss = [&](const Tensor& preds) { return weighted_huber_loss(preds, ys, lcfg); };

    bool clipped_once = false;
    for (int step = 0; step < 20; ++step) {
        std::vector<double> xv(16);
        for (auto& v : xv) v = rng.normal();
        auto rep = gr_train_step(*m, Tensor::from(xv, {4, 4}), att, main_g, loss, loss);
        REQUIRE(rep.post_clip_att <= std::min(rep.pre_clip_att, tight.clip_threshold) + 1e-9);
        REQUIRE(rep.post_clip_main <= std::min(rep.pre_clip_main, tight.clip_threshold) + 1e-9);
        if (rep.post_clip_main < rep.pre_clip_main) clipped_once = true;
    }
    REQUIRE(clipped_once);
}
