#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "cmae/nn/autodiff.hpp"
#include "cmae/rng.hpp"
#include "testutil.hpp"

using namespace cmae;
using testutil::raises;

namespace {

using DTensor = nn::Tensor<double>;
using DNode = nn::NodePtr<double>;

DTensor rand_tensor(std::vector<std::int64_t> shape, std::mt19937_64& gen, double lo = -1.0,
                    double hi = 1.0) {
    DTensor t(std::move(shape));
    for (auto& v : t.data) v = lo + (hi - lo) * rng::uniform01(gen);
    return t;
}

// deterministic tensor whose entries are distinct multiples of 0.02, so max
// pooling has no ties and finite differences never cross an argmax switch
DTensor no_tie_tensor(std::vector<std::int64_t> shape) {
    DTensor t(std::move(shape));
    REQUIRE(t.numel() <= 101);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<double>((i * 37) % 101) / 50.0 - 1.0;
    return t;
}

// central finite differences at 10 random coordinates, h = 1e-5, relative
// error below tol with a 1e-8 denominator floor
void fd_check(const DTensor& x0, const std::function<DNode(DNode)>& build, std::uint64_t seed,
              double tol = 1e-4) {
    auto leaf = nn::make_leaf(x0, true);
    auto loss = build(leaf);
    REQUIRE(loss->value.numel() == 1);
    nn::backward(loss);
    leaf->ensure_grad();

    const double h = 1e-5;
    std::mt19937_64 gen(seed);
    for (int point = 0; point < 10; ++point) {
        const auto idx =
            static_cast<std::int64_t>(rng::bounded(gen, static_cast<std::uint64_t>(x0.numel())));
        DTensor xp = x0, xm = x0;
        xp[idx] += h;
        xm[idx] -= h;
        const double fp = build(nn::make_constant(xp))->value.data[0];
        const double fm = build(nn::make_constant(xm))->value.data[0];
        const double fd = (fp - fm) / (2.0 * h);
        const double an = leaf->grad[idx];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CHECK(std::abs(fd - an) / denom < tol);
    }
}

DNode constant(const DTensor& t) { return nn::make_constant(t); }

// scalar head with fixed weights, shared by every fd check
std::function<DNode(DNode)> head_through(std::function<DNode(DNode)> op, std::uint64_t seed) {
    return [op = std::move(op), seed](DNode leaf) {
        auto out = op(leaf);
        std::mt19937_64 gen(seed);
        return nn::weighted_sum(out, rand_tensor(out->value.shape, gen));
    };
}

// plain-loop reference attention used as the independent oracle
DTensor naive_attention(const DTensor& x, const std::vector<DTensor>& w,
                        const std::vector<DTensor>& b, std::int64_t h) {
    const std::int64_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
    const std::int64_t dh = d / h;
    auto project = [&](const DTensor& in, const DTensor& wm, const DTensor& bm) {
        DTensor out({batch, len, d});
        for (std::int64_t bi = 0; bi < batch; ++bi)
            for (std::int64_t t = 0; t < len; ++t)
                for (std::int64_t o = 0; o < d; ++o) {
                    double acc = bm[o];
                    for (std::int64_t i = 0; i < d; ++i)
                        acc += in[(bi * len + t) * d + i] * wm[i * d + o];
                    out[(bi * len + t) * d + o] = acc;
                }
        return out;
    };
    const DTensor q = project(x, w[0], b[0]);
    const DTensor k = project(x, w[1], b[1]);
    const DTensor v = project(x, w[2], b[2]);
    DTensor ctx({batch, len, d});
    std::vector<double> scores(static_cast<std::size_t>(len));
    for (std::int64_t bi = 0; bi < batch; ++bi)
        for (std::int64_t hi = 0; hi < h; ++hi)
            for (std::int64_t ti = 0; ti < len; ++ti) {
                for (std::int64_t tj = 0; tj < len; ++tj) {
                    double dot = 0;
                    for (std::int64_t c = 0; c < dh; ++c)
                        dot += q[(bi * len + ti) * d + hi * dh + c] *
                               k[(bi * len + tj) * d + hi * dh + c];
                    scores[static_cast<std::size_t>(tj)] = dot / std::sqrt(static_cast<double>(dh));
                }
                double mx = scores[0];
                for (std::int64_t tj = 1; tj < len; ++tj)
                    mx = std::max(mx, scores[static_cast<std::size_t>(tj)]);
                double sum = 0;
                for (std::int64_t tj = 0; tj < len; ++tj) {
                    scores[static_cast<std::size_t>(tj)] =
                        std::exp(scores[static_cast<std::size_t>(tj)] - mx);
                    sum += scores[static_cast<std::size_t>(tj)];
                }
                for (std::int64_t c = 0; c < dh; ++c) {
                    double acc = 0;
                    for (std::int64_t tj = 0; tj < len; ++tj)
                        acc += scores[static_cast<std::size_t>(tj)] / sum *
                               v[(bi * len + tj) * d + hi * dh + c];
                    ctx[(bi * len + ti) * d + hi * dh + c] = acc;
                }
            }
    return project(ctx, w[3], b[3]);
}

nn::AttentionParams<double> params_from(const std::vector<DTensor>& w,
                                        const std::vector<DTensor>& b) {
    nn::AttentionParams<double> p;
    p.wq = constant(w[0]);
    p.bq = constant(b[0]);
    p.wk = constant(w[1]);
    p.bk = constant(b[1]);
    p.wv = constant(w[2]);
    p.bv = constant(b[2]);
    p.wo = constant(w[3]);
    p.bo = constant(b[3]);
    return p;
}

DTensor identity_matrix(std::int64_t d) {
    DTensor m({d, d});
    for (std::int64_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
    return m;
}

} // namespace

TEST_SUITE("autodiff") {

TEST_CASE("convolution hand cases") {
    // k = 1 with unit weight is the identity
    std::mt19937_64 gen(1);
    auto x = nn::make_leaf(rand_tensor({2, 5, 1}, gen), false);
    auto y = nn::conv1d(x, constant(DTensor({1, 1, 1}, {1.0})), constant(DTensor({1}, {0.0})));
    for (std::int64_t i = 0; i < x->value.numel(); ++i) CHECK(y->value[i] == x->value[i]);

    // impulse response of w = [1, 2, 3]
    auto impulse = nn::make_leaf(DTensor({1, 5, 1}, {0, 0, 1, 0, 0}), false);
    auto resp = nn::conv1d(impulse, constant(DTensor({3, 1, 1}, {1, 2, 3})),
                           constant(DTensor({1}, {0.0})));
    CHECK(resp->value.data == std::vector<double>{0, 3, 2, 1, 0});

    // even kernel takes the extra context element on the left
    auto edge = nn::make_leaf(DTensor({1, 3, 1}, {1, 0, 0}), false);
    auto even = nn::conv1d(edge, constant(DTensor({4, 1, 1}, {1, 2, 3, 4})),
                           constant(DTensor({1}, {0.0})));
    CHECK(even->value.data == std::vector<double>{3, 2, 1});

    // bias is added per output channel
    auto biased = nn::conv1d(impulse, constant(DTensor({3, 1, 1}, {1, 2, 3})),
                             constant(DTensor({1}, {10.0})));
    CHECK(biased->value.data == std::vector<double>{10, 13, 12, 11, 10});

    CHECK(raises(ErrorCode::ShapeError, [&] {
        nn::conv1d(impulse, constant(DTensor({3, 2, 1})), constant(DTensor({1}, {0.0})));
    }));
}

TEST_CASE("pooling hand cases") {
    auto x = nn::make_leaf(DTensor({1, 4, 1}, {1, 3, 2, 2}), true);
    auto y = nn::maxpool1d(x);
    CHECK(y->value.shape == std::vector<std::int64_t>{1, 2, 1});
    CHECK(y->value.data == std::vector<double>{3, 2});

    // gradient of the tied window routes to the first element
    auto loss = nn::weighted_sum(y, DTensor({1, 2, 1}, {1, 1}));
    nn::backward(loss);
    CHECK(x->grad.data == std::vector<double>{0, 1, 1, 0});

    // odd trailing element is dropped
    auto odd = nn::make_leaf(DTensor({1, 5, 1}, {1, 2, 3, 4, 9}), false);
    CHECK(nn::maxpool1d(odd)->value.data == std::vector<double>{2, 4});

    auto too_short = nn::make_leaf(DTensor({1, 1, 1}, {5}), false);
    CHECK(raises(ErrorCode::ShapeError, [&] { nn::maxpool1d(too_short); }));

    // per-channel global max: channels run fastest
    auto g = nn::make_leaf(DTensor({1, 2, 2}, {1, 5, 7, 2}), true);
    auto gm = nn::global_maxpool1d(g);
    CHECK(gm->value.shape == std::vector<std::int64_t>{1, 2});
    CHECK(gm->value.data == std::vector<double>{7, 5});
    auto gloss = nn::weighted_sum(gm, DTensor({1, 2}, {1, 1}));
    nn::backward(gloss);
    CHECK(g->grad.data == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("activation hand cases") {
    auto x = nn::make_leaf(DTensor({3}, {0.0, 1.0, -1.0}), false);
    auto y = nn::gelu(x);
    CHECK(y->value[0] == 0.0);
    CHECK(y->value[1] == doctest::Approx(0.8412).epsilon(1e-3));
    CHECK(y->value[2] == doctest::Approx(0.8412 - 1.0).epsilon(2e-3)); // gelu(x)-gelu(-x)=x

    auto s = nn::sigmoid(nn::make_leaf(DTensor({3}, {0.0, 100.0, -100.0}), false));
    CHECK(s->value[0] == 0.5);
    CHECK(s->value[1] == doctest::Approx(1.0));
    CHECK(s->value[2] == doctest::Approx(0.0));
}

TEST_CASE("softmax hand cases") {
    auto x = nn::make_leaf(DTensor({1, 2}, {0.0, std::log(2.0)}), false);
    auto y = nn::softmax_lastdim(x);
    CHECK(y->value[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y->value[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // shift invariance and unit row sums
    std::mt19937_64 gen(3);
    const auto raw = rand_tensor({4, 7}, gen, -5, 5);
    DTensor shifted = raw;
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 7; ++c) shifted[r * 7 + c] += 123.0;
    const auto a = nn::softmax_lastdim(nn::make_leaf(raw, false));
    const auto b = nn::softmax_lastdim(nn::make_leaf(shifted, false));
    for (std::int64_t i = 0; i < a->value.numel(); ++i)
        CHECK(a->value[i] == doctest::Approx(b->value[i]).epsilon(1e-9));
    for (std::int64_t r = 0; r < 4; ++r) {
        double sum = 0;
        for (std::int64_t c = 0; c < 7; ++c) sum += a->value[r * 7 + c];
        CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("layer normalization hand cases") {
    const DTensor gain({3}, {2.0, 2.0, 2.0});
    const DTensor offset({3}, {0.5, 0.5, 0.5});

    // constant row normalizes to zero, so the output is the offset
    auto c = nn::layer_norm(nn::make_leaf(DTensor({1, 3}, {7, 7, 7}), false), constant(gain),
                            constant(offset));
    for (std::int64_t i = 0; i < 3; ++i) CHECK(c->value[i] == doctest::Approx(0.5).epsilon(1e-9));

    // [-1, 1] row: xhat = +-1/sqrt(1 + eps)
    const DTensor g2({2}, {3.0, 3.0});
    const DTensor o2({2}, {1.0, 1.0});
    auto y = nn::layer_norm(nn::make_leaf(DTensor({1, 2}, {-1.0, 1.0}), false), constant(g2),
                            constant(o2));
    const double xhat = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y->value[0] == doctest::Approx(-xhat * 3.0 + 1.0).epsilon(1e-12));
    CHECK(y->value[1] == doctest::Approx(xhat * 3.0 + 1.0).epsilon(1e-12));

    CHECK(raises(ErrorCode::ShapeError, [&] {
        nn::layer_norm(nn::make_leaf(DTensor({1, 3}), false), constant(g2), constant(o2));
    }));
}

TEST_CASE("positional encoding table") {
    const auto pe = nn::positional_encoding<double>(16, 8);
    REQUIRE(pe.shape == std::vector<std::int64_t>{16, 8});
    for (std::int64_t j = 0; j < 8; j += 2) CHECK(pe[j] == 0.0);       // sin(0)
    for (std::int64_t j = 1; j < 8; j += 2) CHECK(pe[j] == 1.0);      // cos(0)
    CHECK(pe[1 * 8 + 0] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
    CHECK(pe[1 * 8 + 1] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
    // position 3, pair 1: angle = 3 / 10000^(2/8)
    const double angle = 3.0 / std::pow(10000.0, 2.0 / 8.0);
    CHECK(pe[3 * 8 + 2] == doctest::Approx(std::sin(angle)).epsilon(1e-12));
    CHECK(pe[3 * 8 + 3] == doctest::Approx(std::cos(angle)).epsilon(1e-12));
    for (const double v : pe.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("attention hand cases") {
    std::mt19937_64 gen(5);
    const std::int64_t d = 4;

    // single position: the attention weight is exactly 1, so with v and o as
    // identities the block returns its input
    std::vector<DTensor> w{rand_tensor({d, d}, gen), rand_tensor({d, d}, gen), identity_matrix(d),
                           identity_matrix(d)};
    std::vector<DTensor> b(4, DTensor({d}));
    auto p = params_from(w, b);
    const auto x = rand_tensor({1, 1, d}, gen);
    auto out = nn::multi_head_attention(nn::make_leaf(x, false), p, 2);
    for (std::int64_t i = 0; i < d; ++i)
        CHECK(out->value[i] == doctest::Approx(x[i]).epsilon(1e-12));

    // zero input and zero biases give zero output
    std::vector<DTensor> wr{rand_tensor({d, d}, gen), rand_tensor({d, d}, gen),
                            rand_tensor({d, d}, gen), rand_tensor({d, d}, gen)};
    auto pz = params_from(wr, b);
    auto zout = nn::multi_head_attention(nn::make_leaf(DTensor({2, 3, d}), false), pz, 2);
    for (std::int64_t i = 0; i < zout->value.numel(); ++i) CHECK(zout->value[i] == 0.0);

    // head count must divide the model width
    CHECK(raises(ErrorCode::ConfigError, [&] {
        nn::multi_head_attention(nn::make_leaf(DTensor({1, 2, d}), false), pz, 3);
    }));
    CHECK(raises(ErrorCode::ConfigError, [&] {
        nn::multi_head_attention(nn::make_leaf(DTensor({1, 2, d}), false), pz, 0);
    }));
}

TEST_CASE("attention matches a naive implementation") {
    std::mt19937_64 gen(6);
    const std::int64_t d = 4;
    std::vector<DTensor> w, b;
    for (int i = 0; i < 4; ++i) {
        w.push_back(rand_tensor({d, d}, gen));
        b.push_back(rand_tensor({d}, gen));
    }
    const auto x = rand_tensor({2, 3, d}, gen);
    auto fast = nn::multi_head_attention(nn::make_leaf(x, false), params_from(w, b), 2);
    const auto slow = naive_attention(x, w, b, 2);
    REQUIRE(fast->value.shape == slow.shape);
    for (std::int64_t i = 0; i < slow.numel(); ++i)
        CHECK(std::abs(fast->value[i] - slow[i]) < 1e-6);

    // single-head variant exercises the degenerate split
    auto one = nn::multi_head_attention(nn::make_leaf(x, false), params_from(w, b), 1);
    const auto one_ref = naive_attention(x, w, b, 1);
    for (std::int64_t i = 0; i < one_ref.numel(); ++i)
        CHECK(std::abs(one->value[i] - one_ref[i]) < 1e-6);
}

TEST_CASE("dropout behavior") {
    std::mt19937_64 rng_state(7);
    auto x = nn::make_leaf(DTensor::full({4, 4}, 1.0), true);

    // rate 0 and inference mode return the input node untouched
    CHECK(nn::dropout(x, 0.0, true, rng_state).get() == x.get());
    CHECK(nn::dropout(x, 0.5, false, rng_state).get() == x.get());

    // empirical drop rate over 1e6 elements within 0.25 +- 0.005
    auto big = nn::make_leaf(DTensor::full({1000, 1000}, 1.0), true);
    auto dropped = nn::dropout(big, 0.25, true, rng_state);
    std::int64_t zeros = 0;
    bool survivors_scaled = true;
    const double keep_scale = 1.0 / 0.75;
    for (std::int64_t i = 0; i < dropped->value.numel(); ++i) {
        if (dropped->value[i] == 0.0)
            ++zeros;
        else if (std::abs(dropped->value[i] - keep_scale) > 1e-12)
            survivors_scaled = false;
    }
    CHECK(survivors_scaled);
    const double rate = static_cast<double>(zeros) / 1e6;
    CHECK(rate >= 0.245);
    CHECK(rate <= 0.255);

    // backward routes through the same mask
    auto loss = nn::weighted_sum(dropped, DTensor::full({1000, 1000}, 1.0));
    nn::backward(loss);
    bool grads_match_mask = true;
    for (std::int64_t i = 0; i < big->grad.numel(); ++i)
        if (big->grad[i] != dropped->value[i]) grads_match_mask = false; // input was all ones
    CHECK(grads_match_mask);

    // identical seeds produce identical masks
    std::mt19937_64 r1(42), r2(42);
    auto a = nn::dropout(nn::make_leaf(DTensor::full({64}, 1.0), false), 0.3, true, r1);
    auto bnode = nn::dropout(nn::make_leaf(DTensor::full({64}, 1.0), false), 0.3, true, r2);
    CHECK(a->value.data == bnode->value.data);
}

TEST_CASE("cross-entropy values") {
    // perfect one-hot prediction: zero loss
    nn::IntTensor labels({3}, {0, 1, 2});
    DTensor perfect({3, 3});
    perfect[0 * 3 + 0] = perfect[1 * 3 + 1] = perfect[2 * 3 + 2] = 1.0;
    auto zero_loss = nn::cross_entropy(nn::make_leaf(perfect, false), labels);
    CHECK(zero_loss->value.data[0] == 0.0);

    // uniform prediction over 7 classes: ln 7
    nn::IntTensor seven({2}, {3, 6});
    auto uniform = nn::cross_entropy(
        nn::make_leaf(DTensor::full({2, 7}, 1.0 / 7.0), false), seven);
    CHECK(uniform->value.data[0] == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    CHECK(uniform->value.data[0] == doctest::Approx(1.9459).epsilon(1e-4));

    // zero probability is clamped, loss stays finite
    auto clamped = nn::cross_entropy(nn::make_leaf(DTensor({1, 2}, {0.0, 1.0}), false),
                                     nn::IntTensor({1}, {0}));
    CHECK(std::isfinite(clamped->value.data[0]));
    CHECK(clamped->value.data[0] == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));

    CHECK(raises(ErrorCode::ShapeError, [&] {
        nn::cross_entropy(nn::make_leaf(DTensor({1, 2}, {0.5, 0.5}), false),
                          nn::IntTensor({1}, {2}));
    }));
    CHECK(raises(ErrorCode::ShapeError, [&] {
        nn::cross_entropy(nn::make_leaf(DTensor({2, 2}, {0.5, 0.5, 0.5, 0.5}), false),
                          nn::IntTensor({1}, {0}));
    }));
}

TEST_CASE("backward contracts") {
    // d(sum(w . x))/dw is exactly x
    const DTensor xv({4}, {1.5, -2.0, 0.25, 3.0});
    auto w = nn::make_leaf(DTensor({4}, {0.1, 0.2, 0.3, 0.4}), true);
    auto loss = nn::weighted_sum(w, xv);
    nn::backward(loss);
    CHECK(w->grad.data == xv.data);

    // second backward without reset fails
    CHECK(raises(ErrorCode::GraphError, [&] { nn::backward(loss); }));

    // zero_grad re-arms the graph
    loss->zero_grad();
    w->zero_grad();
    nn::backward(loss);
    CHECK(w->grad.data == xv.data);

    // non-scalar loss is rejected
    auto vec = nn::add(w, nn::make_constant(xv));
    CHECK(raises(ErrorCode::ShapeError, [&] { nn::backward(vec); }));

    // frozen tables never allocate a gradient, trainable ones do
    nn::IntTensor ids({1, 3}, {0, 2, 2});
    auto frozen = nn::make_leaf(DTensor::full({4, 2}, 0.5), false);
    auto trainable = nn::make_leaf(DTensor::full({4, 2}, 0.25), true);
    auto combined = nn::weighted_sum(
        nn::mul(nn::embedding(ids, frozen), nn::embedding(ids, trainable)),
        DTensor::full({1, 3, 2}, 1.0));
    nn::backward(combined);
    CHECK(frozen->grad.data.empty());
    REQUIRE(!trainable->grad.data.empty());
    // repeated id 2 accumulates twice
    CHECK(trainable->grad[2 * 2 + 0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(trainable->grad[0 * 2 + 0] == doctest::Approx(0.5).epsilon(1e-12));

    // out-of-range token ids are a shape error
    auto table = nn::make_leaf(DTensor::full({4, 2}, 0.1), false);
    CHECK(raises(ErrorCode::ShapeError, [&] {
        nn::embedding(nn::IntTensor({1, 1}, {4}), table);
    }));
    CHECK(raises(ErrorCode::ShapeError, [&] {
        nn::embedding(nn::IntTensor({1, 1}, {-1}), table);
    }));
}

TEST_CASE("inference mode skips graph construction") {
    auto x = nn::make_leaf(DTensor({2, 2}, {1, 2, 3, 4}), true);
    nn::NodePtr<double> y;
    {
        nn::NoGradGuard guard;
        y = nn::gelu(x);
    }
    CHECK(!y->requires_grad);
    CHECK(y->inputs.empty());
    // outside the guard the same op records
    auto z = nn::gelu(x);
    CHECK(z->requires_grad);
    CHECK(z->inputs.size() == 1);
}

TEST_CASE("numerical diagnostics flag non-finite outputs") {
    nn::debug_checks() = true;
    auto inf = nn::make_leaf(DTensor({1}, {std::numeric_limits<double>::infinity()}), false);
    auto ninf = nn::make_leaf(DTensor({1}, {-std::numeric_limits<double>::infinity()}), false);
    CHECK(raises(ErrorCode::NumericalError, [&] { nn::add(inf, ninf); }));
    nn::debug_checks() = false;
    auto ok = nn::add(inf, ninf); // unchecked: NaN flows through
    CHECK(std::isnan(ok->value[0]));
}

TEST_CASE("finite differences: elementwise ops") {
    std::mt19937_64 gen(11);
    const auto c = rand_tensor({2, 3, 4}, gen);
    const auto c2 = rand_tensor({2, 3, 4}, gen);
    const auto x0 = rand_tensor({2, 3, 4}, gen);

    fd_check(x0, head_through([&](DNode x) { return nn::add(x, constant(c)); }, 21), 101);
    fd_check(x0, head_through([&](DNode x) { return nn::mul(x, constant(c)); }, 22), 102);
    fd_check(x0, head_through([&](DNode x) { return nn::mul(x, x); }, 23), 103);
    fd_check(x0, head_through([&](DNode x) { return nn::scale(x, -2.5); }, 24), 104);
    fd_check(x0,
             head_through([&](DNode x) { return nn::average3(x, constant(c), constant(c2)); }, 25),
             105);
    fd_check(x0, head_through([&](DNode x) { return nn::gelu(x); }, 26), 106);
    fd_check(x0, head_through([&](DNode x) { return nn::sigmoid(x); }, 27), 107);

    const auto pe = nn::positional_encoding<double>(3, 4);
    fd_check(x0, head_through([&](DNode x) { return nn::add_positional(x, pe); }, 28), 108);
}

TEST_CASE("finite differences: normalization ops") {
    std::mt19937_64 gen(12);
    const auto x0 = rand_tensor({3, 5}, gen);
    fd_check(x0, head_through([&](DNode x) { return nn::softmax_lastdim(x); }, 31), 201);

    const auto gain = rand_tensor({5}, gen, 0.5, 1.5);
    const auto offset = rand_tensor({5}, gen);
    fd_check(x0,
             head_through(
                 [&](DNode x) { return nn::layer_norm(x, constant(gain), constant(offset)); }, 32),
             202);
    // with respect to gain and offset
    const auto fixed = rand_tensor({3, 5}, gen);
    fd_check(gain,
             head_through(
                 [&](DNode g) { return nn::layer_norm(constant(fixed), g, constant(offset)); }, 33),
             203);
    fd_check(offset,
             head_through(
                 [&](DNode o) { return nn::layer_norm(constant(fixed), constant(gain), o); }, 34),
             204);
}

TEST_CASE("finite differences: linear ops") {
    std::mt19937_64 gen(13);
    const auto x0 = rand_tensor({2, 3, 4}, gen);
    const auto w0 = rand_tensor({4, 6}, gen);
    const auto b0 = rand_tensor({6}, gen);

    fd_check(x0,
             head_through([&](DNode x) { return nn::dense(x, constant(w0), constant(b0)); }, 41),
             301);
    fd_check(w0,
             head_through([&](DNode w) { return nn::dense(constant(x0), w, constant(b0)); }, 42),
             302);
    fd_check(b0,
             head_through([&](DNode b) { return nn::dense(constant(x0), constant(w0), b); }, 43),
             303);

    const auto a0 = rand_tensor({2, 3, 4}, gen);
    const auto m0 = rand_tensor({2, 4, 5}, gen);
    const auto t0 = rand_tensor({2, 5, 4}, gen);
    fd_check(a0, head_through([&](DNode a) { return nn::bmm(a, constant(m0), false); }, 44), 304);
    fd_check(m0, head_through([&](DNode m) { return nn::bmm(constant(a0), m, false); }, 45), 305);
    fd_check(a0, head_through([&](DNode a) { return nn::bmm(a, constant(t0), true); }, 46), 306);
    fd_check(t0, head_through([&](DNode t) { return nn::bmm(constant(a0), t, true); }, 47), 307);

    const auto p0 = rand_tensor({2, 3}, gen);
    const auto p1 = rand_tensor({2, 5}, gen);
    fd_check(p0, head_through([&](DNode p) {
                 return nn::concat_lastdim<double>({p, constant(p1)});
             }, 48),
             308);
    fd_check(p1, head_through([&](DNode p) {
                 return nn::concat_lastdim<double>({constant(p0), p});
             }, 49),
             309);

    fd_check(x0, head_through([&](DNode x) { return nn::merge_heads(nn::split_heads(x, 2), 2); },
                              50),
             310);
}

TEST_CASE("finite differences: convolution and pooling") {
    std::mt19937_64 gen(14);
    const auto x0 = rand_tensor({2, 6, 3}, gen);
    const auto w3 = rand_tensor({3, 3, 4}, gen);
    const auto w4 = rand_tensor({4, 3, 4}, gen);
    const auto b0 = rand_tensor({4}, gen);

    fd_check(x0,
             head_through([&](DNode x) { return nn::conv1d(x, constant(w3), constant(b0)); }, 51),
             401);
    fd_check(w3,
             head_through([&](DNode w) { return nn::conv1d(constant(x0), w, constant(b0)); }, 52),
             402);
    fd_check(b0,
             head_through([&](DNode b) { return nn::conv1d(constant(x0), constant(w3), b); }, 53),
             403);
    // even kernel
    fd_check(x0,
             head_through([&](DNode x) { return nn::conv1d(x, constant(w4), constant(b0)); }, 54),
             404);
    fd_check(w4,
             head_through([&](DNode w) { return nn::conv1d(constant(x0), w, constant(b0)); }, 55),
             405);

    const auto nt = no_tie_tensor({2, 6, 3});
    fd_check(nt, head_through([&](DNode x) { return nn::maxpool1d(x); }, 56), 406);
    fd_check(nt, head_through([&](DNode x) { return nn::global_maxpool1d(x); }, 57), 407);
}

TEST_CASE("finite differences: embedding and loss") {
    std::mt19937_64 gen(15);
    const nn::IntTensor ids({2, 3}, {0, 2, 4, 4, 1, 3});
    const auto table0 = rand_tensor({5, 4}, gen);
    fd_check(table0,
             head_through([&](DNode t) { return nn::embedding(ids, t); }, 61), 501);

    // loss composite: logits -> softmax -> cross entropy
    const nn::IntTensor labels({4}, {0, 3, 6, 2});
    const auto logits0 = rand_tensor({4, 7}, gen, -2, 2);
    fd_check(logits0, [&](DNode x) { return nn::cross_entropy(nn::softmax_lastdim(x), labels); },
             502);

    // raw probabilities away from the clamp
    const auto probs0 = rand_tensor({4, 7}, gen, 0.1, 0.9);
    fd_check(probs0, [&](DNode p) { return nn::cross_entropy(p, labels); }, 503);
}

TEST_CASE("finite differences: attention") {
    std::mt19937_64 gen(16);
    const std::int64_t d = 4;
    std::vector<DTensor> w, b;
    for (int i = 0; i < 4; ++i) {
        w.push_back(rand_tensor({d, d}, gen, -0.5, 0.5));
        b.push_back(rand_tensor({d}, gen, -0.1, 0.1));
    }
    const auto x0 = rand_tensor({2, 3, d}, gen);

    fd_check(x0, head_through([&](DNode x) {
                 return nn::multi_head_attention(x, params_from(w, b), 2);
             }, 71),
             601);
    fd_check(w[0], head_through([&](DNode wq) {
                 auto p = params_from(w, b);
                 p.wq = wq;
                 return nn::multi_head_attention(constant(x0), p, 2);
             }, 72),
             602);
    fd_check(w[2], head_through([&](DNode wv) {
                 auto p = params_from(w, b);
                 p.wv = wv;
                 return nn::multi_head_attention(constant(x0), p, 2);
             }, 73),
             603);
    fd_check(b[3], head_through([&](DNode bo) {
                 auto p = params_from(w, b);
                 p.bo = bo;
                 return nn::multi_head_attention(constant(x0), p, 2);
             }, 74),
             604);
}

TEST_CASE("forward values are deterministic") {
    std::mt19937_64 gen(17);
    const auto x0 = rand_tensor({2, 4, 3}, gen);
    const auto w0 = rand_tensor({3, 3, 2}, gen);
    const auto b0 = rand_tensor({2}, gen);
    auto run = [&] {
        auto y = nn::conv1d(nn::make_leaf(x0, false), constant(w0), constant(b0));
        return nn::global_maxpool1d(nn::gelu(y))->value.data;
    };
    CHECK(run() == run());
}

} // TEST_SUITE
