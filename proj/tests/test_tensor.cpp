#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "scrawl/gradcheck.hpp"
#include "scrawl/tensor.hpp"

using namespace scrawl;

namespace {

Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

// Loss used by the gradient property tests: sum(y * r) with fixed random r,
// so every output element feeds the scalar with a distinct weight.
Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& y, const Tensor<double>& r) {
  return sum_all(tape, mul(tape, y, r));
}

}  // namespace

TEST_CASE("tensor construction, indexing, and validation") {
  Tensor<float> t({2, 3});
  REQUIRE(t.rank() == 2);
  REQUIRE(t.numel() == 6);
  REQUIRE(t.shape() == Shape{2, 3});
  t(1, 2) = 5.0f;
  REQUIRE(t[5] == 5.0f);
  REQUIRE_FALSE(t.requires_grad());

  auto d = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  REQUIRE(d(0, 1) == 2.0);
  REQUIRE(d(1, 0) == 3.0);

  auto s = Tensor<double>::scalar(7.5);
  REQUIRE(s.shape() == Shape{1});
  REQUIRE(s.item() == 7.5);
  REQUIRE_THROWS_AS(d.item(), std::invalid_argument);

  REQUIRE_THROWS_AS(Tensor<double>::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  REQUIRE_THROWS_AS(Tensor<double>(Shape{2, 0}), std::invalid_argument);
  REQUIRE_THROWS_AS(Tensor<double>(Shape{}), std::invalid_argument);

  Tensor<double> copy = d;  // handles share storage
  copy[0] = 9.0;
  REQUIRE(d[0] == 9.0);
  REQUIRE(copy.same_storage(d));
  Tensor<double> deep = d.clone();
  deep[0] = 1.0;
  REQUIRE(d[0] == 9.0);
}

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && (va == b.next_u64());
    any_diff = any_diff || (va != c.next_u64());
  }
  REQUIRE(all_equal);
  REQUIRE(any_diff);

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(-2.0, 3.0);
    REQUIRE(u >= -2.0);
    REQUIRE(u < 3.0);
  }

  std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8}, v2 = v1;
  Rng s1(99), s2(99);
  s1.shuffle(v1);
  s2.shuffle(v2);
  REQUIRE(v1 == v2);

  REQUIRE(mix_seed(1, 2) != mix_seed(1, 3));
  REQUIRE(mix_seed(1, 2) != mix_seed(2, 2));
  REQUIRE(mix_seed(1, 2) == mix_seed(1, 2));
}

TEST_CASE("crc32 matches the standard check value") {
  const char* msg = "123456789";
  REQUIRE(crc32(msg, std::strlen(msg)) == 0xCBF43926u);
  REQUIRE(crc32(msg, std::strlen(msg)) != crc32(msg, std::strlen(msg) - 1));
}

TEST_CASE("label map is the lowercase-then-uppercase bijection") {
  REQUIRE(LabelMap::kClassCount == 52);
  REQUIRE(LabelMap::index_of('a') == 0);
  REQUIRE(LabelMap::index_of('z') == 25);
  REQUIRE(LabelMap::index_of('A') == 26);
  REQUIRE(LabelMap::index_of('Z') == 51);
  for (int i = 0; i < 52; ++i) REQUIRE(LabelMap::index_of(LabelMap::label_at(i)) == i);
  REQUIRE_FALSE(LabelMap::valid('0'));
  REQUIRE_FALSE(LabelMap::valid(' '));
  REQUIRE_THROWS_AS(LabelMap::index_of('!'), config_error);
  REQUIRE_THROWS_AS(LabelMap::label_at(52), config_error);
}

TEST_CASE("elementwise binaries: values, broadcasting, zero guard") {
  Tape<double> tape;
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 2}, {10, 20, 30, 40});
  auto s = Tensor<double>::scalar(2.0);

  REQUIRE(add(tape, a, b).values() == std::vector<double>{11, 22, 33, 44});
  REQUIRE(sub(tape, a, b).values() == std::vector<double>{-9, -18, -27, -36});
  REQUIRE(mul(tape, a, b).values() == std::vector<double>{10, 40, 90, 160});
  REQUIRE(div(tape, b, a).values() == std::vector<double>{10, 10, 10, 10});

  REQUIRE(add(tape, a, s).values() == std::vector<double>{3, 4, 5, 6});
  REQUIRE(mul(tape, a, s).values() == std::vector<double>{2, 4, 6, 8});
  REQUIRE(div(tape, a, s).values() == std::vector<double>{0.5, 1, 1.5, 2});

  auto bad = Tensor<double>::from_data({3}, {1, 2, 3});
  REQUIRE_THROWS_AS(add(tape, a, bad), std::invalid_argument);

  auto with_zero = Tensor<double>::from_data({2, 2}, {1, 0, 3, 4});
  REQUIRE_THROWS_AS(div(tape, a, with_zero), std::invalid_argument);
  REQUIRE_THROWS_AS(div(tape, a, Tensor<double>::scalar(0.0)), std::invalid_argument);
}

TEST_CASE("unary op values and the signed log/exp inverse pair") {
  Tape<double> tape;
  const double em1 = std::exp(1.0) - 1.0;
  auto x = Tensor<double>::from_data({5}, {0.0, em1, -em1, 3.0, -3.0});

  auto lg = log1p_signed(tape, x);
  REQUIRE(lg[0] == 0.0);
  REQUIRE(lg[1] == Catch::Approx(1.0));
  REQUIRE(lg[2] == Catch::Approx(-1.0));
  REQUIRE(lg[3] == Catch::Approx(std::log(4.0)));
  REQUIRE(lg[4] == Catch::Approx(-std::log(4.0)));

  // exp1m_signed inverts log1p_signed across sign and magnitude.
  auto back = exp1m_signed(tape, lg);
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(back[i] == Catch::Approx(x[i]).margin(1e-12));
  Rng rng(5);
  auto wide = rand_tensor({64}, rng, -50.0, 50.0);
  auto round = exp1m_signed(tape, log1p_signed(tape, wide));
  for (std::size_t i = 0; i < wide.numel(); ++i)
    REQUIRE(round[i] == Catch::Approx(wide[i]).epsilon(1e-12));

  auto r = relu(tape, Tensor<double>::from_data({4}, {-2, 0, 0.5, 3}));
  REQUIRE(r.values() == std::vector<double>{0, 0, 0.5, 3});

  REQUIRE(scrawl::exp(tape, Tensor<double>::scalar(0.0)).item() == 1.0);
  REQUIRE(neg(tape, Tensor<double>::scalar(2.5)).item() == -2.5);
  REQUIRE(scrawl::tanh(tape, Tensor<double>::scalar(0.0)).item() == 0.0);
  REQUIRE(sigmoid(tape, Tensor<double>::scalar(0.0)).item() == 0.5);
  // extreme inputs stay finite
  REQUIRE(sigmoid(tape, Tensor<double>::scalar(-500.0)).item() >= 0.0);
  REQUIRE(std::isfinite(sigmoid(tape, Tensor<double>::scalar(500.0)).item()));
}

TEST_CASE("matmul values and shape checks") {
  Tape<double> tape;
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 2}, {5, 6, 7, 8});
  REQUIRE(matmul(tape, a, b).values() == std::vector<double>{19, 22, 43, 50});

  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  REQUIRE(matmul(tape, a, eye).values() == a.values());

  auto rect = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto col = Tensor<double>::from_data({3, 1}, {1, 1, 1});
  REQUIRE(matmul(tape, rect, col).values() == std::vector<double>{6, 15});

  REQUIRE_THROWS_AS(matmul(tape, a, col), std::invalid_argument);
  REQUIRE_THROWS_AS(matmul(tape, a, Tensor<double>::from_data({4}, {1, 2, 3, 4})),
                    std::invalid_argument);
}

TEST_CASE("transpose, reshape, select, slice, rowwise add") {
  Tape<double> tape;
  auto m = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto mt = transpose_last2(tape, m);
  REQUIRE(mt.shape() == Shape{3, 2});
  REQUIRE(mt.values() == std::vector<double>{1, 4, 2, 5, 3, 6});

  auto batch = Tensor<double>::from_data({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto bt = transpose_last2(tape, batch);
  REQUIRE(bt.shape() == Shape{2, 3, 2});
  REQUIRE(bt.values() == std::vector<double>{1, 4, 2, 5, 3, 6, 7, 10, 8, 11, 9, 12});

  auto rs = reshape(tape, m, {3, 2});
  REQUIRE(rs.values() == m.values());
  REQUIRE_THROWS_AS(reshape(tape, m, {4, 2}), std::invalid_argument);

  auto st = select_step(tape, bt, 1);
  REQUIRE(st.shape() == Shape{2, 2});
  REQUIRE(st.values() == std::vector<double>{2, 5, 8, 11});
  REQUIRE_THROWS_AS(select_step(tape, bt, 3), std::invalid_argument);

  auto sc = slice_cols(tape, m, 1, 2);
  REQUIRE(sc.values() == std::vector<double>{2, 3, 5, 6});
  REQUIRE_THROWS_AS(slice_cols(tape, m, 2, 2), std::invalid_argument);

  auto bias = Tensor<double>::from_data({3}, {10, 20, 30});
  auto ar = add_rowwise(tape, m, bias);
  REQUIRE(ar.values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  REQUIRE_THROWS_AS(add_rowwise(tape, m, Tensor<double>::from_data({2}, {1, 2})),
                    std::invalid_argument);
}

TEST_CASE("reductions: totals, axes, first-tie max") {
  Tape<double> tape;
  auto m = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(sum_all(tape, m).item() == 21.0);
  REQUIRE(mean_all(tape, m).item() == 3.5);
  REQUIRE(max_all(tape, m).item() == 6.0);

  REQUIRE(sum_axis(tape, m, 0).values() == std::vector<double>{5, 7, 9});
  REQUIRE(sum_axis(tape, m, 1).values() == std::vector<double>{6, 15});
  REQUIRE(mean_axis(tape, m, 1).values() == std::vector<double>{2, 5});
  REQUIRE(max_axis(tape, m, 1).values() == std::vector<double>{3, 6});
  REQUIRE(max_axis(tape, m, 0).values() == std::vector<double>{4, 5, 6});

  auto v = Tensor<double>::from_data({3}, {1, 2, 3});
  REQUIRE(sum_axis(tape, v, 0).shape() == Shape{1});
  REQUIRE_THROWS_AS(sum_axis(tape, v, 1), std::invalid_argument);

  // Tie: the first maximal element takes the whole gradient.
  Tape<double> t2;
  auto tie = Tensor<double>::from_data({3}, {2, 5, 5}, true);
  auto mx = max_all(t2, tie);
  t2.backward(mx);
  REQUIRE(tie.grad_values() == std::vector<double>{0, 1, 0});
}

TEST_CASE("conv1d reproduces hand-computed windows") {
  Tape<double> tape;
  // Single window: [1,2,3] against kernel [1,0,-1] -> 1 - 3 = -2.
  auto x = Tensor<double>::from_data({1, 1, 3}, {1, 2, 3});
  auto k = Tensor<double>::from_data({1, 1, 3}, {1, 0, -1});
  auto b0 = Tensor<double>::from_data({1}, {0});
  auto y = conv1d(tape, x, k, b0, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1});
  REQUIRE(y[0] == -2.0);

  // Same data, zero padding 1: windows [0,1,2], [1,2,3], [2,3,0].
  auto yp = conv1d(tape, x, k, b0, 1, 1);
  REQUIRE(yp.shape() == Shape{1, 1, 3});
  REQUIRE(yp.values() == std::vector<double>{-2, -2, 2});

  // Stride 2 drops the tail that does not fit: length (5-2)/2+1 = 2.
  auto xs = Tensor<double>::from_data({1, 1, 5}, {1, 2, 3, 4, 5});
  auto k2 = Tensor<double>::from_data({1, 1, 2}, {1, 1});
  auto ys = conv1d(tape, xs, k2, b0, 2, 0);
  REQUIRE(ys.values() == std::vector<double>{3, 7});

  // Two input channels sum into the output, plus bias.
  auto x2 = Tensor<double>::from_data({1, 2, 3}, {1, 2, 3, 10, 20, 30});
  auto k3 = Tensor<double>::from_data({1, 2, 2}, {1, 1, 1, 1});
  auto b5 = Tensor<double>::from_data({1}, {5});
  auto y2 = conv1d(tape, x2, k3, b5, 1, 0);
  REQUIRE(y2.values() == std::vector<double>{1 + 2 + 10 + 20 + 5, 2 + 3 + 20 + 30 + 5});

  // Two output channels, batch of two.
  auto xb = Tensor<double>::from_data({2, 1, 2}, {1, 2, 3, 4});
  auto kb = Tensor<double>::from_data({2, 1, 1}, {2, -1});
  auto bb = Tensor<double>::from_data({2}, {0, 100});
  auto yb = conv1d(tape, xb, kb, bb, 1, 0);
  REQUIRE(yb.shape() == Shape{2, 2, 2});
  REQUIRE(yb.values() == std::vector<double>{2, 4, 99, 98, 6, 8, 97, 96});
}

TEST_CASE("conv1d rejects contract violations") {
  Tape<double> tape;
  auto x = Tensor<double>::from_data({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto k_wrong_ci = Tensor<double>::from_data({1, 3, 2}, {1, 1, 1, 1, 1, 1});
  auto b = Tensor<double>::from_data({1}, {0});
  REQUIRE_THROWS_WITH(conv1d(tape, x, k_wrong_ci, b, 1, 0),
                      Catch::Matchers::ContainsSubstring("channel mismatch"));

  auto k_too_long = Tensor<double>::from_data({1, 2, 7}, std::vector<double>(14, 1.0));
  REQUIRE_THROWS_WITH(conv1d(tape, x, k_too_long, b, 1, 1),
                      Catch::Matchers::ContainsSubstring("window larger"));
  // padding can rescue a long kernel
  REQUIRE_NOTHROW(conv1d(tape, x, k_too_long, b, 1, 2));

  auto bad_bias = Tensor<double>::from_data({2}, {0, 0});
  auto k = Tensor<double>::from_data({1, 2, 2}, {1, 1, 1, 1});
  REQUIRE_THROWS_AS(conv1d(tape, x, k, bad_bias, 1, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(conv1d(tape, x, k, b, 0, 0), std::invalid_argument);
}

TEST_CASE("maxpool1d windows, tie handling, and errors") {
  Tape<double> tape;
  auto x = Tensor<double>::from_data({1, 1, 9}, {3, 1, 4, 1, 5, 9, 2, 6, 5});
  auto y = maxpool1d(tape, x, 7, 3);
  REQUIRE(y.shape() == Shape{1, 1, 1});
  REQUIRE(y[0] == 9.0);

  auto x2 = Tensor<double>::from_data({1, 1, 4}, {1, 3, 2, 4});
  REQUIRE(maxpool1d(tape, x2, 2, 2).values() == std::vector<double>{3, 4});

  // Windows [1,7], [7,7], [7,1]: the tied middle window credits its first
  // element, so index 1 collects two units of gradient.
  Tape<double> t2;
  auto xt = Tensor<double>::from_data({1, 1, 4}, {1, 7, 7, 1}, true);
  auto yt = maxpool1d(t2, xt, 2, 1);
  auto total = sum_all(t2, yt);
  t2.backward(total);
  REQUIRE(xt.grad_values() == std::vector<double>{0, 2, 1, 0});

  REQUIRE_THROWS_WITH(maxpool1d(tape, x2, 5, 1),
                      Catch::Matchers::ContainsSubstring("shorter than pooling window"));
}

TEST_CASE("backward semantics: accumulation, reuse, guards") {
  // y = sum(x * x): dy/dx = 2x; a second backward adds the same again.
  auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  Tape<double> tape;
  auto y = sum_all(tape, mul(tape, x, x));
  tape.backward(y);
  REQUIRE(x.grad_values() == std::vector<double>{2, 4, 6});
  tape.backward(y);
  REQUIRE(x.grad_values() == std::vector<double>{4, 8, 12});

  // Non-scalar loss and detached tensors are rejected.
  Tape<double> t2;
  auto v = Tensor<double>::from_data({2}, {1, 2}, true);
  auto w = add(t2, v, v);
  REQUIRE_THROWS_AS(t2.backward(w), std::invalid_argument);
  auto plain = Tensor<double>::scalar(1.0);
  REQUIRE_THROWS_AS(t2.backward(plain), std::invalid_argument);

  // Recording off: no nodes, no grads, same values.
  Tape<double> quiet(false);
  auto q = mul(quiet, x, x);
  REQUIRE_FALSE(q.requires_grad());
  REQUIRE(quiet.node_count() == 0);
  REQUIRE(q.values() == std::vector<double>{1, 4, 9});

  // Inputs without requires_grad stay grad-free even while recording.
  Tape<double> t3;
  auto frozen = Tensor<double>::from_data({2}, {1, 2});
  auto live = Tensor<double>::from_data({2}, {3, 4}, true);
  auto out = mul(t3, frozen, live);
  auto loss = sum_all(t3, out);
  t3.backward(loss);
  REQUIRE_FALSE(frozen.requires_grad());
  REQUIRE(live.grad_values() == std::vector<double>{1, 2});
}

TEST_CASE("gradients match finite differences: elementwise chains") {
  Rng rng(1234);
  auto x = rand_tensor({4, 5}, rng, -2.0, 2.0);
  auto r = rand_tensor({4, 5}, rng);

  auto chain = [&](Tape<double>& t, const Tensor<double>& in) {
    auto a = scrawl::tanh(t, in);
    auto b = sigmoid(t, mul(t, in, a));
    auto c = add(t, b, log1p_signed(t, in));
    return weighted_sum(t, c, r);
  };
  REQUIRE(finite_diff_check(chain, x) < 1e-6);

  auto inv_pair = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, exp1m_signed(t, log1p_signed(t, in)), r);
  };
  REQUIRE(finite_diff_check(inv_pair, x) < 1e-6);

  // relu checked away from its kink
  auto shifted = rand_tensor({4, 5}, rng, 0.5, 2.0);
  auto relu_chain = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, relu(t, sub(t, in, Tensor<double>::scalar(1.0))), r);
  };
  REQUIRE(finite_diff_check(relu_chain, shifted) < 1e-6);

  auto exp_chain = [&](Tape<double>& t, const Tensor<double>& in) {
    return mean_all(t, scrawl::exp(t, neg(t, mul(t, in, in))));
  };
  REQUIRE(finite_diff_check(exp_chain, x) < 1e-6);
}

TEST_CASE("gradients match finite differences: binaries with broadcast") {
  Rng rng(77);
  auto a = rand_tensor({3, 4}, rng, 0.5, 2.0);
  auto b = rand_tensor({3, 4}, rng, 0.5, 2.0);
  auto r = rand_tensor({3, 4}, rng);

  auto wrt_a = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, div(t, in, b), r);
  };
  REQUIRE(finite_diff_check(wrt_a, a) < 1e-6);

  auto wrt_b = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, div(t, a, in), r);
  };
  REQUIRE(finite_diff_check(wrt_b, b) < 1e-6);

  auto scalar = Tensor<double>::from_data({1}, {1.7});
  auto wrt_scalar = [&](Tape<double>& t, const Tensor<double>& in) {
    auto u = mul(t, a, in);
    auto v = div(t, u, in);
    auto w = sub(t, v, in);
    return weighted_sum(t, w, r);
  };
  REQUIRE(finite_diff_check(wrt_scalar, scalar) < 1e-6);
}

TEST_CASE("gradients match finite differences: linear algebra and shape ops") {
  Rng rng(31);
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 2}, rng);
  auto r = rand_tensor({3, 2}, rng);

  auto mm_a = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, matmul(t, in, b), r);
  };
  REQUIRE(finite_diff_check(mm_a, a) < 1e-6);
  auto mm_b = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, matmul(t, a, in), r);
  };
  REQUIRE(finite_diff_check(mm_b, b) < 1e-6);

  auto rt = rand_tensor({4, 3}, rng);
  auto tr = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, transpose_last2(t, in), rt);
  };
  REQUIRE(finite_diff_check(tr, a) < 1e-6);

  auto b3 = rand_tensor({2, 3, 4}, rng);
  auto r3 = rand_tensor({2, 4, 3}, rng);
  auto tr3 = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, transpose_last2(t, in), r3);
  };
  REQUIRE(finite_diff_check(tr3, b3) < 1e-6);

  auto rsel = rand_tensor({2, 4}, rng);
  auto sel = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, select_step(t, in, 1), rsel);
  };
  REQUIRE(finite_diff_check(sel, b3) < 1e-6);

  auto rsl = rand_tensor({3, 2}, rng);
  auto slc = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, slice_cols(t, in, 1, 2), rsl);
  };
  REQUIRE(finite_diff_check(slc, a) < 1e-6);

  auto bias = rand_tensor({4}, rng);
  auto rx = rand_tensor({3, 4}, rng);
  auto rw_x = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, add_rowwise(t, in, bias), rx);
  };
  REQUIRE(finite_diff_check(rw_x, a) < 1e-6);
  auto rw_b = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, add_rowwise(t, a, in), rx);
  };
  REQUIRE(finite_diff_check(rw_b, bias) < 1e-6);

  auto rshape = rand_tensor({12}, rng);
  auto rsh = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, reshape(t, in, {12}), rshape);
  };
  REQUIRE(finite_diff_check(rsh, a) < 1e-6);
}

TEST_CASE("gradients match finite differences: reductions") {
  Rng rng(55);
  auto x = rand_tensor({3, 5}, rng, -3.0, 3.0);

  auto s_all = [](Tape<double>& t, const Tensor<double>& in) { return sum_all(t, in); };
  REQUIRE(finite_diff_check(s_all, x) < 1e-6);
  auto m_all = [](Tape<double>& t, const Tensor<double>& in) { return mean_all(t, in); };
  REQUIRE(finite_diff_check(m_all, x) < 1e-6);
  auto mx_all = [](Tape<double>& t, const Tensor<double>& in) { return max_all(t, in); };
  REQUIRE(finite_diff_check(mx_all, x) < 1e-6);

  auto r0 = rand_tensor({5}, rng);
  auto s0 = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, sum_axis(t, in, 0), r0);
  };
  REQUIRE(finite_diff_check(s0, x) < 1e-6);

  auto r1 = rand_tensor({3}, rng);
  auto m1 = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, mean_axis(t, in, 1), r1);
  };
  REQUIRE(finite_diff_check(m1, x) < 1e-6);

  auto mx1 = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, max_axis(t, in, 1), r1);
  };
  REQUIRE(finite_diff_check(mx1, x) < 1e-6);
}

TEST_CASE("gradients match finite differences: conv1d and maxpool1d") {
  Rng rng(2024);
  struct Cfg {
    std::size_t ci, co, k, stride, pad, len;
  };
  for (const Cfg cfg : {Cfg{2, 3, 3, 1, 1, 8}, Cfg{2, 2, 11, 2, 5, 16}, Cfg{3, 2, 5, 3, 0, 12}}) {
    auto x = rand_tensor({2, cfg.ci, cfg.len}, rng);
    auto w = rand_tensor({cfg.co, cfg.ci, cfg.k}, rng);
    auto bias = rand_tensor({cfg.co}, rng);
    Tape<double> probe(false);
    auto shape = conv1d(probe, x, w, bias, cfg.stride, cfg.pad).shape();
    auto r = rand_tensor(shape, rng);

    auto wrt_x = [&](Tape<double>& t, const Tensor<double>& in) {
      return weighted_sum(t, conv1d(t, in, w, bias, cfg.stride, cfg.pad), r);
    };
    REQUIRE(finite_diff_check(wrt_x, x) < 1e-6);
    auto wrt_w = [&](Tape<double>& t, const Tensor<double>& in) {
      return weighted_sum(t, conv1d(t, x, in, bias, cfg.stride, cfg.pad), r);
    };
    REQUIRE(finite_diff_check(wrt_w, w) < 1e-6);
    auto wrt_b = [&](Tape<double>& t, const Tensor<double>& in) {
      return weighted_sum(t, conv1d(t, x, w, in, cfg.stride, cfg.pad), r);
    };
    REQUIRE(finite_diff_check(wrt_b, bias) < 1e-6);
  }

  // Pool gradient, inputs spread out to keep windows tie-free.
  std::vector<double> vals(2 * 2 * 10);
  Rng prng(9);
  for (auto& v : vals) v = prng.uniform(-10.0, 10.0);
  auto px = Tensor<double>::from_data({2, 2, 10}, vals);
  Tape<double> probe(false);
  auto pshape = maxpool1d(probe, px, 3, 2).shape();
  auto pr = rand_tensor(pshape, prng);
  auto pool = [&](Tape<double>& t, const Tensor<double>& in) {
    return weighted_sum(t, maxpool1d(t, in, 3, 2), pr);
  };
  REQUIRE(finite_diff_check(pool, px) < 1e-6);
}
