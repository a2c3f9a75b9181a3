#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmkgr/fusion.hpp"
#include "mmkgr/gradcheck.hpp"
#include "mmkgr/rng.hpp"

using namespace mmkgr;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double scale = 0.7) {
    Tensor t(r, c);
    for (auto& v : t.data()) v = rng.normal(0.0, scale);
    return t;
}

struct Fixture {
    int m = 3, d_x = 5, d_y = 7, d = 4, j = 6;
    FusionParameters params;
    Tensor x, y;

    explicit Fixture(std::uint64_t seed) : params(make_params(seed)), x(), y() {
        Rng rng(seed + 1000);
        x = random_tensor(m, d_x, rng);
        y = random_tensor(m, d_y, rng);
    }

    FusionParameters make_params(std::uint64_t seed) {
        Rng rng(seed);
        return FusionParameters::create(d_x, d_y, d, j, rng);
    }
};

} // namespace

TEST_CASE("qkv shares one shape and zero X gives zero Q", "[fusion]") {
    Fixture f(1);
    Tape t;
    QkvIds qkv = project_qkv(t, t.constant(Tensor(f.m, f.d_x)), t.constant(f.y), f.params);
    REQUIRE(t.val(qkv.q).rows() == f.m);
    REQUIRE(t.val(qkv.q).cols() == f.d);
    REQUIRE(t.val(qkv.k).rows() == f.m);
    REQUIRE(t.val(qkv.k).cols() == f.d);
    REQUIRE(t.val(qkv.v).rows() == f.m);
    REQUIRE(t.val(qkv.v).cols() == f.d);
    for (int i = 0; i < t.val(qkv.q).size(); ++i) REQUIRE(t.val(qkv.q)[i] == 0.0);
}

TEST_CASE("identity-like projection passes a single row through", "[fusion]") {
    Rng rng(2);
    FusionParameters p = FusionParameters::create(3, 3, 3, 3, rng);
    p.w_q.value = Tensor(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tape t;
    Tensor x(1, 3, {0.5, -1.0, 2.0});
    QkvIds qkv = project_qkv(t, t.constant(x), t.constant(Tensor(1, 3)), p);
    for (int jj = 0; jj < 3; ++jj) REQUIRE(t.val(qkv.q).at(0, jj) == x.at(0, jj));
}

TEST_CASE("zero Q annihilates both bilinear branches", "[fusion]") {
    Fixture f(3);
    Rng rng(4);
    Tape t;
    QkvIds qkv{t.constant(Tensor(f.m, f.d)), t.constant(random_tensor(f.m, f.d, rng)),
               t.constant(random_tensor(f.m, f.d, rng))};
    BilinearIds b = bilinear_joint(t, qkv, f.params);
    for (int i = 0; i < t.val(b.left).size(); ++i) REQUIRE(t.val(b.left)[i] == 0.0);
    for (int i = 0; i < t.val(b.right).size(); ++i) REQUIRE(t.val(b.right)[i] == 0.0);
}

TEST_CASE("with K equal to V the branches differ only through the weights", "[fusion]") {
    Fixture f(6);
    f.params.w_v_right.value = f.params.w_k_left.value;
    f.params.w_q_right.value = f.params.w_q_left.value;
    Rng rng(7);
    Tape t;
    Tensor kv = random_tensor(f.m, f.d, rng);
    QkvIds qkv{t.constant(random_tensor(f.m, f.d, rng)), t.constant(kv), t.constant(kv)};
    BilinearIds b = bilinear_joint(t, qkv, f.params);
    for (int i = 0; i < t.val(b.left).size(); ++i)
        REQUIRE(t.val(b.left)[i] == t.val(b.right)[i]);
}

TEST_CASE("bilinear branches pass the gradient check", "[fusion]") {
    Fixture f(9);
    Rng rng(10);
    Parameter px("x", f.x);
    Parameter py("y", f.y);
    auto build = [&](Tape& t) {
        QkvIds qkv = project_qkv(t, t.param(px), t.param(py), f.params);
        BilinearIds b = bilinear_joint(t, qkv, f.params);
        return t.sum_all(t.add(t.sigmoid(b.left), t.sigmoid(b.right)));
    };
    std::vector<Parameter*> params{&px, &py};
    for (Parameter* p : f.params.parameters()) params.push_back(p);
    auto res = grad_check(build, params, rng, 200, 1e-6);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("filtration gate sits at one half for zero input and saturates monotonically",
          "[fusion]") {
    Fixture f(11);
    Tape t;
    Tape::Id g0 = filtration_gate(t, t.constant(Tensor(f.m, f.j)), f.params);
    REQUIRE(t.val(g0).rows() == f.m);
    REQUIRE(t.val(g0).cols() == f.d);
    for (int i = 0; i < t.val(g0).size(); ++i) REQUIRE(t.val(g0)[i] == 0.5);

    // Scaling the pre-activation toward +inf pushes entries toward 1.
    Tensor ones = Tensor::full(1, f.j, 1.0);
    Tape t2;
    FusionParameters& p = f.params;
    double prev = -1.0;
    for (double scale : {1.0, 4.0, 16.0}) {
        Tape::Id pre = t2.matmul(t2.constant(ones), t2.param(p.w_merge));
        Tape::Id g = t2.sigmoid(t2.affine(t2.hadamard(pre, pre), scale, 0.0));
        const double v = t2.val(g).at(0, 0);
        REQUIRE(v > prev);
        prev = v;
    }
}

TEST_CASE("uniform gate over constant rows gives a uniform attention distribution", "[fusion]") {
    Fixture f(12);
    Tape t;
    Tape::Id gate = t.constant(Tensor::full(f.m, f.d, 0.5));
    Tape::Id k = t.constant(Tensor::full(f.m, f.d, 0.9));
    Tape::Id q = t.constant(Tensor::full(f.m, f.d, -0.4));
    AttentionIds att = gated_attention(t, gate, k, q, f.params);
    for (int i = 0; i < f.m; ++i)
        for (int jj = 0; jj < f.d; ++jj)
            REQUIRE(t.val(att.weights_dist).at(i, jj) ==
                    Catch::Approx(1.0 / f.d).margin(1e-12));
}

TEST_CASE("gate trades structural against auxiliary contributions", "[fusion]") {
    // In (g*k) * ((1-g)*q), raising g raises the K factor and lowers the Q
    // factor.
    const double k = 1.3, q = 0.8;
    const double g_lo = 0.3, g_hi = 0.6;
    REQUIRE(g_hi * k > g_lo * k);
    REQUIRE((1.0 - g_hi) * q < (1.0 - g_lo) * q);
}

TEST_CASE("attention rows sum to one", "[fusion]") {
    Fixture f(13);
    Rng rng(14);
    Tape t;
    Tape::Id gate = t.sigmoid(t.constant(random_tensor(f.m, f.d, rng)));
    AttentionIds att = gated_attention(t, gate, t.constant(random_tensor(f.m, f.d, rng)),
                                       t.constant(random_tensor(f.m, f.d, rng)), f.params);
    for (int i = 0; i < f.m; ++i) {
        double sum = 0.0;
        for (int jj = 0; jj < f.d; ++jj) sum += t.val(att.weights_dist).at(i, jj);
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("attend scales rows by their attention score", "[fusion]") {
    Fixture f(15);
    Rng rng(16);
    Tensor br = random_tensor(f.m, f.j, rng);
    Tape t;
    Tensor zero_scores(f.m, 1);
    Tape::Id dead = attend(t, t.constant(zero_scores), t.constant(br));
    for (int i = 0; i < t.val(dead).size(); ++i) REQUIRE(t.val(dead)[i] == 0.0);

    Tape::Id pass = attend(t, t.constant(Tensor::full(f.m, 1, 1.0)), t.constant(br));
    for (int i = 0; i < t.val(pass).size(); ++i) REQUIRE(t.val(pass)[i] == br[i]);
}

TEST_CASE("column sums of attended features recover the pooled form", "[fusion]") {
    Fixture f(17);
    Rng rng(18);
    Tensor br = random_tensor(f.m, f.j, rng);
    Tensor scores = random_tensor(f.m, 1, rng);
    Tape t;
    Tape::Id vhat = attend(t, t.constant(scores), t.constant(br));
    Tape::Id pooled = attended_pooled(t, vhat);
    for (int jj = 0; jj < f.j; ++jj) {
        double want = 0.0;
        for (int i = 0; i < f.m; ++i) want += scores.at(i, 0) * br.at(i, jj);
        REQUIRE(t.val(pooled).at(0, jj) == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("irrelevance filter gates per candidate row", "[fusion]") {
    Fixture f(19);
    Tape t;
    FilteredIds filtered = irrelevance_filter(t, t.constant(Tensor(f.m, f.j)),
                                              t.constant(Tensor(f.m, f.j)), f.params);
    for (int i = 0; i < f.m; ++i) {
        REQUIRE(t.val(filtered.gate).at(i, 0) == 0.5);
        for (int jj = 0; jj < f.j; ++jj) REQUIRE(t.val(filtered.z_rows).at(i, jj) == 0.0);
    }
}

TEST_CASE("relevance gate entries stay strictly inside (0,1)", "[fusion]") {
    for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
        Fixture f(seed);
        Tape t;
        FusedFeatures out = fuse(t, t.constant(f.y), t.constant(f.x), f.params);
        const Tensor& gf = t.val(out.relevance_gate);
        const Tensor& gt = t.val(out.filtration_gate_values);
        for (int i = 0; i < gf.size(); ++i) {
            REQUIRE(gf[i] > 0.0);
            REQUIRE(gf[i] < 1.0);
        }
        for (int i = 0; i < gt.size(); ++i) {
            REQUIRE(gt[i] > 0.0);
            REQUIRE(gt[i] < 1.0);
        }
    }
}

TEST_CASE("full fuse equals the five stages composed by hand", "[fusion]") {
    Fixture f(24);
    Tape t;
    Tape::Id y = t.constant(f.y);
    Tape::Id x = t.constant(f.x);
    FusedFeatures out = fuse(t, y, x, f.params);

    QkvIds qkv = project_qkv(t, x, y, f.params);
    BilinearIds b = bilinear_joint(t, qkv, f.params);
    Tape::Id gate = filtration_gate(t, b.left, f.params);
    AttentionIds att = gated_attention(t, gate, qkv.k, qkv.q, f.params);
    Tape::Id vhat = attend(t, att.scores, b.right);
    FilteredIds filtered = irrelevance_filter(t, b.right, vhat, f.params);

    REQUIRE(t.val(out.z_rows).rows() == f.m);
    REQUIRE(t.val(out.z_rows).cols() == f.j);
    for (int i = 0; i < t.val(out.z_rows).size(); ++i)
        REQUIRE(t.val(out.z_rows)[i] == t.val(filtered.z_rows)[i]);
    for (int i = 0; i < t.val(out.pooled).size(); ++i)
        REQUIRE(t.val(out.pooled)[i] == t.val(filtered.pooled)[i]);
}

TEST_CASE("attention-only variant forwards the attended features", "[fusion]") {
    Fixture f(25);
    Tape t;
    FusedFeatures out = fuse(t, t.constant(f.y), t.constant(f.x), f.params,
                             FusionVariant::AttentionOnly);
    for (int i = 0; i < t.val(out.z_rows).size(); ++i)
        REQUIRE(t.val(out.z_rows)[i] == t.val(out.attended)[i]);
}

TEST_CASE("filtration-only variant skips the attention stage", "[fusion]") {
    Fixture f(26);
    Tape t;
    FusionTrace trace;
    FusedFeatures out = fuse(t, t.constant(f.y), t.constant(f.x), f.params,
                             FusionVariant::FiltrationOnly, &trace);
    REQUIRE(trace.attention_gate_evals == 0);
    REQUIRE(trace.filtration_evals == 1);
    REQUIRE(trace.bilinear_evals == 1);
    // The gated features come from B^l.
    const Tensor& bl = t.val(out.bilinear_left);
    const Tensor& gf = t.val(out.relevance_gate);
    for (int i = 0; i < f.m; ++i)
        for (int jj = 0; jj < f.j; ++jj)
            REQUIRE(t.val(out.z_rows).at(i, jj) ==
                    Catch::Approx(bl.at(i, jj) * gf.at(i, 0)).margin(1e-14));
}

TEST_CASE("full variant evaluates every stage once", "[fusion]") {
    Fixture f(27);
    Tape t;
    FusionTrace trace;
    fuse(t, t.constant(f.y), t.constant(f.x), f.params, FusionVariant::Full, &trace);
    REQUIRE(trace.projection_evals == 1);
    REQUIRE(trace.bilinear_evals == 1);
    REQUIRE(trace.attention_gate_evals == 1);
    REQUIRE(trace.filtration_evals == 1);
}

TEST_CASE("zero auxiliary features collapse the fused output to zero", "[fusion]") {
    Fixture f(28);
    Tape t;
    FusedFeatures out = fuse(t, t.constant(f.y), t.constant(Tensor(f.m, f.d_x)), f.params);
    for (int i = 0; i < t.val(out.z_rows).size(); ++i) REQUIRE(t.val(out.z_rows)[i] == 0.0);
    for (int i = 0; i < t.val(out.bilinear_left).size(); ++i)
        REQUIRE(t.val(out.bilinear_left)[i] == 0.0);
}

TEST_CASE("whole network passes the gradient check at five seeds", "[fusion]") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Fixture f(40 + seed);
        Rng rng(50 + seed);
        Parameter px("x", f.x);
        Parameter py("y", f.y);
        for (FusionVariant variant : {FusionVariant::Full, FusionVariant::AttentionOnly,
                                      FusionVariant::FiltrationOnly}) {
            auto build = [&](Tape& t) {
                FusedFeatures out = fuse(t, t.param(py), t.param(px), f.params, variant);
                return t.sum_all(t.hadamard(out.z_rows, out.z_rows));
            };
            std::vector<Parameter*> params{&px, &py};
            for (Parameter* p : f.params.parameters()) params.push_back(p);
            auto res = grad_check(build, params, rng, 150, 1e-6);
            INFO("seed " << seed << " variant " << static_cast<int>(variant));
            REQUIRE(res.max_rel_err < 1e-4);
        }
    }
}
