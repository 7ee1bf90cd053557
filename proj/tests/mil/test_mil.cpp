#include <doctest.h>

#include <filesystem>

#include "flowmil/mil/mil.hpp"
#include "testutil.hpp"

using namespace flowmil;
namespace fs = std::filesystem;

namespace {

mil::MilConfig tiny_config(int m = 8) {
    mil::MilConfig cfg;
    cfg.m = m;
    cfg.regressor_widths = {16, 8, 1};
    cfg.attention_widths = {12, 6, 1};
    cfg.dropout_rate = 0.3f;
    cfg.bags_per_side = 4;
    cfg.schedule = {0.01, 100, {}, 1, 1};
    return cfg;
}

template <typename T>
mil::MilModelT<T> random_model(const mil::MilConfig& cfg, int d, std::uint64_t seed) {
    mil::MilModelT<T> model;
    model.cfg = cfg;
    RngStream rng(seed);
    model.init(d, rng);
    return model;
}

template <typename T>
nn::TensorT<T> random_features(int m, int d, std::uint64_t seed) {
    nn::TensorT<T> f({m, d});
    RngStream rng(seed);
    test::fill_uniform(f, rng, -1.0, 1.0);
    return f;
}

/// Synthetic separable bags: positive bags embed high-motion rows.
std::vector<mil::Bag> separable_bags(int n_pos, int n_neg, int m, int d, std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<mil::Bag> bags;
    auto make = [&](bool positive, int idx) {
        std::vector<std::vector<float>> clips;
        const int anomalous_segments = positive ? 1 + static_cast<int>(rng.uniform_int(3)) : 0;
        const int first_anomalous = positive
            ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m - anomalous_segments)))
            : -1;
        for (int i = 0; i < m; ++i) {
            std::vector<float> f(static_cast<std::size_t>(d));
            const bool anomalous =
                positive && i >= first_anomalous && i < first_anomalous + anomalous_segments;
            for (int j = 0; j < d; ++j) {
                // normal rows concentrate on the first half of the axes,
                // anomalous rows on the second half
                const bool hot = anomalous ? j >= d / 2 : j < d / 2;
                f[static_cast<std::size_t>(j)] =
                    static_cast<float>(rng.uniform(0.0, hot ? 1.0 : 0.15));
            }
            clips.push_back(std::move(f));
        }
        mil::Bag bag;
        bag.video_id = (positive ? "pos" : "neg") + std::to_string(idx);
        bag.positive = positive;
        bag.features = mil::build_bag(clips, m);
        return bag;
    };
    for (int i = 0; i < n_pos; ++i) bags.push_back(make(true, i));
    for (int i = 0; i < n_neg; ++i) bags.push_back(make(false, i));
    return bags;
}

}  // namespace

TEST_CASE("build_bag partitions, averages and normalizes") {
    SUBCASE("64 clips into 32 segments averages consecutive pairs") {
        std::vector<std::vector<float>> clips;
        for (int i = 0; i < 64; ++i) clips.push_back({static_cast<float>(i), 1.0f});
        const auto bag = mil::build_bag(clips, 32);
        REQUIRE(bag.dim(0) == 32);
        REQUIRE(bag.dim(1) == 2);
        for (int g = 0; g < 32; ++g) {
            const float mean0 = (2.0f * g + 2.0f * g + 1.0f) / 2.0f;
            const float norm = std::sqrt(mean0 * mean0 + 1.0f);
            CHECK(bag(g, 0) == doctest::Approx(mean0 / norm));
            CHECK(bag(g, 1) == doctest::Approx(1.0f / norm));
        }
    }
    SUBCASE("m=32, d=1024 gives a 32x1024 matrix") {
        std::vector<std::vector<float>> clips(40, std::vector<float>(1024, 0.5f));
        const auto bag = mil::build_bag(clips, 32);
        CHECK(bag.dim(0) == 32);
        CHECK(bag.dim(1) == 1024);
    }
    SUBCASE("fewer clips than segments duplicate cyclically; rows unit norm") {
        RngStream rng(70);
        std::vector<std::vector<float>> clips;
        for (int i = 0; i < 5; ++i) {
            std::vector<float> f(6);
            for (auto& v : f) v = static_cast<float>(rng.uniform(0.1, 1.0));
            clips.push_back(std::move(f));
        }
        const auto bag = mil::build_bag(clips, 32);
        REQUIRE(bag.dim(0) == 32);
        // naive oracle: segment g holds clip g mod 5, L2-normalized
        for (int g = 0; g < 32; ++g) {
            const auto& src = clips[static_cast<std::size_t>(g % 5)];
            double norm = 0;
            for (float v : src) norm += static_cast<double>(v) * v;
            norm = std::sqrt(norm);
            double row_norm = 0;
            for (int j = 0; j < 6; ++j) {
                CHECK(bag(g, j) == doctest::Approx(src[static_cast<std::size_t>(j)] / norm));
                row_norm += static_cast<double>(bag(g, j)) * bag(g, j);
            }
            CHECK(std::abs(std::sqrt(row_norm) - 1.0) < 1e-5);
        }
    }
    SUBCASE("clip order within a segment group does not matter") {
        RngStream rng(71);
        std::vector<std::vector<float>> clips;
        for (int i = 0; i < 12; ++i) {
            std::vector<float> f(4);
            for (auto& v : f) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            clips.push_back(std::move(f));
        }
        const auto a = mil::build_bag(clips, 4);  // groups of 3
        for (int g = 0; g < 4; ++g) std::swap(clips[static_cast<std::size_t>(3 * g)],
                                              clips[static_cast<std::size_t>(3 * g + 2)]);
        const auto b = mil::build_bag(clips, 4);
        for (int i = 0; i < a.numel(); ++i)
            CHECK(a.v[static_cast<std::size_t>(i)] ==
                  doctest::Approx(b.v[static_cast<std::size_t>(i)]).epsilon(1e-6));
    }
    SUBCASE("empty input is an error") { CHECK_THROWS_AS(mil::build_bag({}, 32), Error); }
}

TEST_CASE("score_segments") {
    const auto cfg = tiny_config();
    SUBCASE("all-zero parameters score exactly sigmoid(0) = 0.5") {
        mil::MilModelT<float> model;
        model.cfg = cfg;
        RngStream rng(72);
        model.init(6, rng);
        for (auto* p : {&model.reg1, &model.reg2, &model.reg3}) {
            std::fill(p->w.v.begin(), p->w.v.end(), 0.0f);
            std::fill(p->b.v.begin(), p->b.v.end(), 0.0f);
        }
        const auto scores = mil::score_segments(random_features<float>(8, 6, 1), model);
        for (float s : scores) CHECK(s == 0.5f);
    }
    SUBCASE("scaling pre-sigmoid logits cannot escape the score range") {
        auto model = random_model<float>(cfg, 6, 73);
        for (auto& v : model.reg3.w.v) v *= 10.0f;
        const auto scores = mil::score_segments(random_features<float>(8, 6, 2), model);
        for (float s : scores) {
            CHECK(s > 0.0f);
            CHECK(s < 1.0f);
        }
        // extreme logits saturate in float but never leave [0, 1]
        for (auto& v : model.reg3.w.v) v *= 1000.0f;
        for (auto& v : model.reg3.b.v) v = 500.0f;
        const auto extreme = mil::score_segments(random_features<float>(8, 6, 2), model);
        for (float s : extreme) {
            CHECK(s >= 0.0f);
            CHECK(s <= 1.0f);
        }
    }
}

TEST_CASE("attention weights") {
    const auto cfg = tiny_config();
    SUBCASE("identical rows get uniform weights 1/m") {
        auto model = random_model<float>(cfg, 6, 74);
        nn::Tensor f({8, 6});
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 6; ++j) f(i, j) = 0.3f * static_cast<float>(j);
        const auto w = mil::attention_weights(f, model);
        for (float v : w) CHECK(v == doctest::Approx(0.125f));
    }
    SUBCASE("weights are positive and sum to 1") {
        auto model = random_model<float>(cfg, 6, 75);
        for (int trial = 0; trial < 10; ++trial) {
            const auto w = mil::attention_weights(
                random_features<float>(8, 6, 100 + static_cast<std::uint64_t>(trial)), model);
            double sum = 0;
            for (float v : w) {
                CHECK(v > 0.0f);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
    SUBCASE("permutation equivariance") {
        auto model = random_model<float>(cfg, 6, 76);
        const auto f = random_features<float>(8, 6, 3);
        const auto w = mil::attention_weights(f, model);
        nn::Tensor reversed({8, 6});
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 6; ++j) reversed(i, j) = f(7 - i, j);
        const auto wr = mil::attention_weights(reversed, model);
        for (int i = 0; i < 8; ++i)
            CHECK(w[static_cast<std::size_t>(i)] ==
                  doctest::Approx(wr[static_cast<std::size_t>(7 - i)]).epsilon(1e-6));
    }
    SUBCASE("sigmoid variant drops the sum-to-one normalization") {
        auto cfg2 = cfg;
        cfg2.attention_norm = mil::AttentionNorm::sigmoid;
        auto model = random_model<float>(cfg2, 6, 77);
        const auto w = mil::attention_weights(random_features<float>(8, 6, 4), model);
        for (float v : w) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }
    }
}

TEST_CASE("hinge losses match their closed forms") {
    SUBCASE("max hinge values") {
        CHECK(mil::max_hinge_loss<float>({1.0f, 0.2f}, {0.0f}) == doctest::Approx(0.0));
        CHECK(mil::max_hinge_loss<float>({0.5f}, {0.5f, 0.1f}) == doctest::Approx(1.0));
        CHECK(mil::max_hinge_loss<float>({0.2f, 0.1f}, {0.9f}) == doctest::Approx(1.7));
    }
    SUBCASE("attention hinge values") {
        // weighted sums 1 and 0
        CHECK(mil::attention_hinge_loss<float>({1.0f, 1.0f}, {0.5f, 0.5f}, {0.0f}, {1.0f}) ==
              doctest::Approx(0.0));
        // uniform weights reduce to means: 1 - 0.8 + 0.3 = 0.5
        CHECK(mil::attention_hinge_loss<float>({0.9f, 0.7f}, {0.5f, 0.5f}, {0.4f, 0.2f},
                                               {0.5f, 0.5f}) == doctest::Approx(0.5));
    }
    SUBCASE("naive double-loop oracle on 1000 random bags at 1e-6") {
        RngStream rng(78);
        for (int trial = 0; trial < 1000; ++trial) {
            const int m = 2 + static_cast<int>(rng.uniform_int(14));
            std::vector<float> ps(static_cast<std::size_t>(m)), pw(static_cast<std::size_t>(m)),
                ns(static_cast<std::size_t>(m)), nw(static_cast<std::size_t>(m));
            for (int i = 0; i < m; ++i) {
                ps[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
                ns[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
                pw[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
                nw[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
            }
            double naive_sp = 0, naive_sn = 0;
            float max_p = ps[0], max_n = ns[0];
            for (int i = 0; i < m; ++i) {
                naive_sp += static_cast<double>(pw[static_cast<std::size_t>(i)]) *
                            static_cast<double>(ps[static_cast<std::size_t>(i)]);
                naive_sn += static_cast<double>(nw[static_cast<std::size_t>(i)]) *
                            static_cast<double>(ns[static_cast<std::size_t>(i)]);
                max_p = std::max(max_p, ps[static_cast<std::size_t>(i)]);
                max_n = std::max(max_n, ns[static_cast<std::size_t>(i)]);
            }
            const double naive_attn = std::max(0.0, 1.0 - naive_sp + naive_sn);
            const double naive_max = std::max(0.0, 1.0 - max_p + max_n);
            CHECK(std::abs(mil::attention_hinge_loss(ps, pw, ns, nw) - naive_attn) < 1e-6);
            CHECK(std::abs(mil::max_hinge_loss(ps, ns) - naive_max) < 1e-6);
        }
    }
    SUBCASE("hinge is zero exactly when the margin is at least one") {
        RngStream rng(79);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<float> ps{static_cast<float>(rng.uniform(-1.0, 2.0))};
            std::vector<float> ns{static_cast<float>(rng.uniform(-1.0, 2.0))};
            const double margin = static_cast<double>(ps[0]) - static_cast<double>(ns[0]);
            const double loss = mil::max_hinge_loss(ps, ns);
            if (margin >= 1.0)
                CHECK(loss == 0.0);
            else
                CHECK(loss > 0.0);
        }
    }
    SUBCASE("attention hinge with uniform weights equals max hinge with max replaced by mean") {
        RngStream rng(80);
        for (int trial = 0; trial < 100; ++trial) {
            const int m = 3 + static_cast<int>(rng.uniform_int(8));
            std::vector<float> ps(static_cast<std::size_t>(m)), ns(static_cast<std::size_t>(m));
            double mp = 0, mn = 0;
            for (int i = 0; i < m; ++i) {
                ps[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
                ns[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform());
                mp += ps[static_cast<std::size_t>(i)];
                mn += ns[static_cast<std::size_t>(i)];
            }
            const std::vector<float> uniform(static_cast<std::size_t>(m),
                                             1.0f / static_cast<float>(m));
            const double lhs = mil::attention_hinge_loss(ps, uniform, ns, uniform);
            const double rhs = std::max(0.0, 1.0 - mp / m + mn / m);
            CHECK(std::abs(lhs - rhs) < 1e-5);
        }
    }
}

TEST_CASE("total loss composes hinge and sparsity") {
    const std::vector<float> ps{0.6f, 0.2f}, pw{0.7f, 0.3f}, ns{0.3f, 0.1f}, nw{0.5f, 0.5f};
    SUBCASE("lambda 0 equals the ranking loss alone") {
        CHECK(mil::total_loss(ps, pw, ns, nw, 0.0, mil::Mode::attention) ==
              doctest::Approx(mil::attention_hinge_loss(ps, pw, ns, nw)));
        CHECK(mil::total_loss(ps, pw, ns, nw, 0.0, mil::Mode::max) ==
              doctest::Approx(mil::max_hinge_loss(ps, ns)));
    }
    SUBCASE("lambda 8e-5 adds exactly 8e-5 times the positive weighted sum") {
        const double s = 0.7 * 0.6 + 0.3 * 0.2;
        CHECK(mil::total_loss(ps, pw, ns, nw, 8e-5, mil::Mode::attention) ==
              doctest::Approx(mil::attention_hinge_loss(ps, pw, ns, nw) + 8e-5 * s).epsilon(1e-9));
        // max mode: uniform weights 1/m
        CHECK(mil::total_loss(ps, pw, ns, nw, 8e-5, mil::Mode::max) ==
              doctest::Approx(mil::max_hinge_loss(ps, ns) + 8e-5 * (0.6 + 0.2) / 2.0).epsilon(1e-9));
    }
    SUBCASE("total loss is never negative") {
        RngStream rng(81);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<float> a{static_cast<float>(rng.uniform())},
                w{static_cast<float>(rng.uniform())}, b{static_cast<float>(rng.uniform())},
                v{static_cast<float>(rng.uniform())};
            CHECK(mil::total_loss(a, w, b, v, 8e-5, mil::Mode::attention) >= 0.0);
            CHECK(mil::total_loss(a, w, b, v, 8e-5, mil::Mode::max) >= 0.0);
        }
    }
}

TEST_CASE("total loss gradients match finite differences in both modes") {
    auto cfg = tiny_config();
    cfg.lambda1 = 8e-5f;
    for (const auto mode : {mil::Mode::attention, mil::Mode::max}) {
        cfg.mode = mode;
        auto model = random_model<double>(cfg, 6, 82);
        const auto pos = random_features<double>(8, 6, 5);
        const auto neg = random_features<double>(8, 6, 6);

        mil::MilGradsT<double> grads;
        grads.zero_like(model);
        const double loss0 = mil::pair_loss_and_grads(pos, neg, model, grads);
        CHECK(loss0 > 0.0);  // hinge active at init, so gradients flow

        auto loss = [&] {
            mil::MilGradsT<double> scratch;
            scratch.zero_like(model);
            return mil::pair_loss_and_grads(pos, neg, model, scratch);
        };
        RngStream pick(83);
        test::check_gradient<double>(model.reg1.w, grads.reg1.dw, loss, pick, 10);
        test::check_gradient<double>(model.reg2.w, grads.reg2.dw, loss, pick, 10);
        test::check_gradient<double>(model.reg3.w, grads.reg3.dw, loss, pick, 6);
        test::check_gradient<double>(model.reg3.b, grads.reg3.db, loss, pick, 1);
        if (mode == mil::Mode::attention) {
            test::check_gradient<double>(model.att1.w, grads.att1.dw, loss, pick, 10);
            test::check_gradient<double>(model.att2.w, grads.att2.dw, loss, pick, 10);
            test::check_gradient<double>(model.att3.w, grads.att3.dw, loss, pick, 6);
            test::check_gradient<double>(model.att3.b, grads.att3.db, loss, pick, 1);
        }
    }
}

TEST_CASE("training separates synthetic bags") {
    auto cfg = tiny_config(8);
    cfg.schedule = {0.01, 2000, {800, 1600}, 1, 21};
    cfg.bags_per_side = 4;
    cfg.dropout_rate = 0.3f;
    const auto bags = separable_bags(6, 6, 8, 12, 22);
    const auto result = mil::train_mil(bags, cfg);

    double pos_mean = 0, neg_mean = 0;
    int pos_count = 0, neg_count = 0;
    for (const auto& bag : bags) {
        const double s = mil::bag_score(bag.features, result.model);
        if (bag.positive) {
            pos_mean += s;
            ++pos_count;
        } else {
            neg_mean += s;
            ++neg_count;
        }
    }
    pos_mean /= pos_count;
    neg_mean /= neg_count;
    CHECK(pos_mean - neg_mean >= 0.3);
}

TEST_CASE("training is deterministic under the seed") {
    auto cfg = tiny_config(8);
    cfg.schedule = {0.01, 50, {}, 1, 31};
    const auto bags = separable_bags(3, 3, 8, 12, 32);
    const auto a = mil::train_mil(bags, cfg);
    const auto b = mil::train_mil(bags, cfg);
    REQUIRE(a.loss_history.size() == b.loss_history.size());
    for (std::size_t i = 0; i < a.loss_history.size(); ++i)
        CHECK(a.loss_history[i] == b.loss_history[i]);
}

TEST_CASE("training needs bags on both sides but never errors on small sides") {
    auto cfg = tiny_config(8);
    cfg.schedule = {0.01, 5, {}, 1, 41};
    cfg.bags_per_side = 30;  // more than available: sampled with replacement
    auto bags = separable_bags(2, 2, 8, 12, 42);
    CHECK_NOTHROW(mil::train_mil(bags, cfg));

    std::vector<mil::Bag> only_pos(bags.begin(), bags.begin() + 2);
    CHECK_THROWS_AS(mil::train_mil(only_pos, cfg), Error);
}

TEST_CASE("mixed segment counts are rejected") {
    auto cfg = tiny_config(8);
    auto bags = separable_bags(2, 2, 8, 12, 43);
    bags[0].features.resize({4, 12});
    CHECK_THROWS_AS(mil::train_mil(bags, cfg), Error);
}

TEST_CASE("fuse_features concatenates then normalizes") {
    SUBCASE("4096 + 1024 gives 5120 dimensions") {
        std::vector<float> a(4096, 0.1f), b(1024, 0.2f);
        const auto fused = mil::fuse_features(a, b);
        CHECK(fused.size() == 5120);
        double norm = 0;
        for (float v : fused) norm += static_cast<double>(v) * v;
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-5);
    }
    SUBCASE("fusing with empty normalizes the other side") {
        const auto fused = mil::fuse_features({3.0f, 4.0f}, {});
        REQUIRE(fused.size() == 2);
        CHECK(fused[0] == doctest::Approx(0.6f));
        CHECK(fused[1] == doctest::Approx(0.8f));
    }
    SUBCASE("both empty is an error") { CHECK_THROWS_AS(mil::fuse_features({}, {}), Error); }
}

TEST_CASE("mil checkpoints keep the regressor and attention sections") {
    auto cfg = tiny_config();
    auto model = random_model<float>(cfg, 12, 84);
    const auto dir = fs::temp_directory_path() / "flowmil_mil_test";
    fs::create_directories(dir);
    const auto path = dir / "mil.fmnn";
    mil::save_mil_checkpoint(path, model);

    const auto layers = nn::load_checkpoint(path);
    REQUIRE(layers.size() == 6);
    CHECK(layers[0].first == "regressor.fc1");
    CHECK(layers[3].first == "attention.fc1");

    auto loaded = mil::load_mil_checkpoint(path);
    loaded.cfg = cfg;
    const auto f = random_features<float>(8, 12, 7);
    const auto s1 = mil::score_segments(f, model);
    const auto s2 = mil::score_segments(f, loaded);
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}

TEST_CASE("mil config validation") {
    mil::MilConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lambda1 = -1.0f;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = mil::MilConfig{};
    cfg.m = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = mil::MilConfig{};
    cfg.regressor_widths = {512, 32, 2};
    CHECK_THROWS_AS(cfg.validate(), Error);
}
