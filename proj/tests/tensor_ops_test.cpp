#include <doctest.h>

#include <random>
#include <sstream>

#include "bra/random.hpp"
#include "bra/serialize.hpp"
#include "bra/tensor_ops.hpp"
#include "oracles.hpp"

using namespace bra;

TEST_CASE("matmul: identity and hand-checked products") {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(eye, eye) == eye);

  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 1}, {0, 1});
  Tensor<double> expect({2, 1}, {2, 4});
  CHECK(matmul(a, b) == expect);
}

TEST_CASE("matmul matches the triple-loop reference") {
  std::mt19937_64 rng(7);
  Tensor<double> a = random_uniform<double>({3, 4}, rng, -1.0, 1.0);
  Tensor<double> b = random_uniform<double>({4, 5}, rng, -1.0, 1.0);
  CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);

  Tensor<double> ba = random_uniform<double>({2, 3, 4}, rng, -1.0, 1.0);
  Tensor<double> bb = random_uniform<double>({2, 4, 5}, rng, -1.0, 1.0);
  CHECK(oracle::max_abs_diff(matmul(ba, bb), oracle::matmul(ba, bb)) < 1e-12);
}

TEST_CASE("matmul reports both shapes on mismatch") {
  Tensor<double> a({2, 3});
  Tensor<double> b({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2, 3]"), dimension_error);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4, 2]"), dimension_error);
  Tensor<double> c({2, 2, 3});
  Tensor<double> d({3, 3, 4});
  CHECK_THROWS_AS(matmul(c, d), dimension_error);
}

TEST_CASE("softmax: symmetric and analytic rows") {
  Tensor<double> uniform({3}, {0, 0, 0});
  Tensor<double> u = softmax_lastaxis(uniform);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor<double> two({2}, {std::log(2.0), 0.0});
  Tensor<double> s = softmax_lastaxis(two);
  CHECK(s[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows are stochastic at both precisions") {
  std::mt19937_64 rng(11);
  Tensor<float> xf = random_uniform<float>({5, 7}, rng, -30.0f, 30.0f);
  Tensor<float> yf = softmax_lastaxis(xf);
  for (std::int64_t r = 0; r < 5; ++r) {
    float sum = 0;
    for (std::int64_t i = 0; i < 7; ++i) {
      const float v = yf[r * 7 + i];
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
      sum += v;
    }
    CHECK(std::fabs(sum - 1.0f) < 1e-6f);
  }
  Tensor<double> xd = random_uniform<double>({5, 7}, rng, -30.0, 30.0);
  Tensor<double> yd = softmax_lastaxis(xd);
  for (std::int64_t r = 0; r < 5; ++r) {
    double sum = 0;
    for (std::int64_t i = 0; i < 7; ++i) sum += yd[r * 7 + i];
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("mean_axis: hand case, constants, loop reference") {
  Tensor<double> x({2, 2}, {1, 3, 5, 7});
  Tensor<double> m = mean_axis(x, 0);
  CHECK(m == Tensor<double>({2}, {3, 5}));

  Tensor<double> c = Tensor<double>::full({3, 4}, 2.5);
  CHECK(mean_axis(c, 1) == Tensor<double>::full({3}, 2.5));

  std::mt19937_64 rng(3);
  Tensor<double> r = random_uniform<double>({4, 6}, rng, -1.0, 1.0);
  CHECK(oracle::max_abs_diff(mean_axis(r, 0), oracle::mean_axis(r, 0)) < 1e-12);
  CHECK(oracle::max_abs_diff(mean_axis(r, 1), oracle::mean_axis(r, 1)) < 1e-12);

  CHECK_THROWS_AS(mean_axis(x, 2), dimension_error);
  CHECK_THROWS_AS(mean_axis(x, -1), dimension_error);
}

TEST_CASE("topk_indices: ordering, tie rule, sort reference") {
  Tensor<double> row({3}, {0.2, -1.0, 0.5});
  IndexTensor top = topk_indices(row, 2);
  CHECK(top == IndexTensor({2}, {2, 0}));

  Tensor<double> tie({3}, {1.0, 1.0, 0.0});
  CHECK(topk_indices(tie, 1) == IndexTensor({1}, {0}));

  std::mt19937_64 rng(5);
  Tensor<double> x({6, 16});
  for (std::int64_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<double>(rng() % 4);  // coarse values force ties
  IndexTensor got = topk_indices(x, 4);
  for (std::int64_t r = 0; r < 6; ++r) {
    const auto expect = oracle::topk_row(x.data() + r * 16, 16, 4);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(got(r, i) == expect[static_cast<std::size_t>(i)]);
  }

  CHECK_THROWS_AS(topk_indices(row, 0), argument_error);
  CHECK_THROWS_AS(topk_indices(row, 4), argument_error);
}

TEST_CASE("topk_indices is permutation-consistent") {
  std::mt19937_64 rng(9);
  for (int it = 0; it < 20; ++it) {
    Tensor<double> x = random_uniform<double>({1, 12}, rng, -1.0, 1.0);
    std::vector<std::int64_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> px({1, 12});
    for (std::int64_t i = 0; i < 12; ++i) px[perm[static_cast<std::size_t>(i)]] = x[i];
    IndexTensor base = topk_indices(x, 5);
    IndexTensor permuted = topk_indices(px, 5);
    for (std::int64_t i = 0; i < 5; ++i)
      CHECK(permuted[i] == perm[static_cast<std::size_t>(base[i])]);
  }
}

TEST_CASE("gather_axis0: verbatim blocks in index order") {
  Tensor<double> x({4, 2, 3});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  IndexTensor idx({1, 2}, {3, 1});
  Tensor<double> g = gather_axis0(x, idx);
  CHECK(g.shape() == Shape{1, 2, 2, 3});
  for (std::int64_t e = 0; e < 6; ++e) {
    CHECK(g[e] == x[3 * 6 + e]);
    CHECK(g[6 + e] == x[1 * 6 + e]);
  }
}

TEST_CASE("gather_axis0: full gather reproduces the input per row") {
  std::mt19937_64 rng(2);
  Tensor<double> x = random_uniform<double>({3, 2, 2}, rng, -1.0, 1.0);
  IndexTensor idx({3, 3}, {0, 1, 2, 0, 1, 2, 0, 1, 2});
  Tensor<double> g = gather_axis0(x, idx);
  for (std::int64_t r = 0; r < 3; ++r)
    for (std::int64_t e = 0; e < x.size(); ++e) CHECK(g[r * x.size() + e] == x[e]);
}

TEST_CASE("gather_axis0 rejects out-of-range indices") {
  Tensor<double> x({2, 1, 1});
  CHECK_THROWS_AS(gather_axis0(x, IndexTensor({1, 1}, {2})), index_error);
  CHECK_THROWS_AS(gather_axis0(x, IndexTensor({1, 1}, {-1})), index_error);
}

TEST_CASE("depthwise_conv2d: delta kernel, box sum, loop reference") {
  std::mt19937_64 rng(13);
  Tensor<double> x = random_uniform<double>({5, 5, 2}, rng, -1.0, 1.0);
  Tensor<double> delta({3, 3, 2});
  delta(1, 1, 0) = 1.0;
  delta(1, 1, 1) = 1.0;
  CHECK(oracle::max_abs_diff(depthwise_conv2d(x, delta), x) == 0.0);

  Tensor<double> ones_in = Tensor<double>::full({5, 5, 1}, 1.0);
  Tensor<double> ones_k = Tensor<double>::full({3, 3, 1}, 1.0);
  Tensor<double> box = depthwise_conv2d(ones_in, ones_k);
  CHECK(box(2, 2, 0) == 9.0);
  CHECK(box(0, 0, 0) == 4.0);

  Tensor<double> r = random_uniform<double>({7, 7, 2}, rng, -1.0, 1.0);
  Tensor<double> k = random_uniform<double>({5, 5, 2}, rng, -1.0, 1.0);
  CHECK(oracle::max_abs_diff(depthwise_conv2d(r, k), oracle::depthwise_conv2d(r, k)) < 1e-12);

  CHECK_THROWS_AS(depthwise_conv2d(x, Tensor<double>({2, 2, 2})), argument_error);
  CHECK_THROWS_AS(depthwise_conv2d(x, Tensor<double>({3, 3, 4})), dimension_error);
}

TEST_CASE("conv2d: pointwise map, global reduction, loop reference") {
  std::mt19937_64 rng(17);
  Tensor<double> x = random_uniform<double>({4, 4, 3}, rng, -1.0, 1.0);

  // 1x1 kernel, stride 1: per-pixel linear map.
  Tensor<double> k1 = random_uniform<double>({1, 1, 3, 2}, rng, -1.0, 1.0);
  Tensor<double> y = conv2d(x, k1, 1, 0);
  Tensor<double> flat = matmul(reshape(x, {16, 3}), reshape(k1, {3, 2}));
  CHECK(oracle::max_abs_diff(y, reshape(flat, {4, 4, 2})) < 1e-14);

  // Kernel and stride spanning the whole input: one output pixel, full dot.
  Tensor<double> kfull = random_uniform<double>({4, 4, 3, 1}, rng, -1.0, 1.0);
  Tensor<double> pixel = conv2d(x, kfull, 4, 0);
  CHECK(pixel.shape() == Shape{1, 1, 1});
  double dot = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) dot += x[i] * kfull[i];
  CHECK(pixel[0] == doctest::Approx(dot).epsilon(1e-12));

  Tensor<double> xr = random_uniform<double>({5, 6, 3}, rng, -1.0, 1.0);
  Tensor<double> kr = random_uniform<double>({3, 3, 3, 4}, rng, -1.0, 1.0);
  CHECK(oracle::max_abs_diff(conv2d(xr, kr, 2, 1), oracle::conv2d(xr, kr, 2, 1)) < 1e-12);

  CHECK_THROWS_AS(conv2d(x, kfull, 1, -1), argument_error);
  CHECK_THROWS_AS(conv2d(Tensor<double>({2, 2, 3}), kfull, 1, 0), argument_error);
}

TEST_CASE("layer_norm: constant slices, standardized slices, moments") {
  Tensor<double> gain = Tensor<double>::full({4}, 1.0);
  Tensor<double> bias({4});

  Tensor<double> constant = Tensor<double>::full({2, 4}, 3.0);
  Tensor<double> zeroed = layer_norm(constant, gain, bias, 1e-5);
  for (std::int64_t i = 0; i < zeroed.size(); ++i) CHECK(zeroed[i] == 0.0);

  Tensor<double> pm({1, 2}, {-1.0, 1.0});
  Tensor<double> g2 = Tensor<double>::full({2}, 1.0);
  Tensor<double> b2({2});
  Tensor<double> kept = layer_norm(pm, g2, b2, 1e-12);
  CHECK(kept[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(kept[1] == doctest::Approx(1.0).epsilon(1e-6));

  std::mt19937_64 rng(23);
  Tensor<double> x = random_uniform<double>({3, 16}, rng, -2.0, 5.0);
  Tensor<double> g16 = Tensor<double>::full({16}, 1.0);
  Tensor<double> b16({16});
  Tensor<double> y = layer_norm(x, g16, b16, 1e-5);
  for (std::int64_t r = 0; r < 3; ++r) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < 16; ++i) mean += y[r * 16 + i];
    CHECK(std::fabs(mean / 16.0) < 1e-7);
  }

  CHECK_THROWS_AS(layer_norm(x, g16, b16, 0.0), argument_error);
  CHECK_THROWS_AS(layer_norm(x, g2, b16, 1e-5), dimension_error);
}

TEST_CASE("elementwise helpers") {
  Tensor<double> a({2}, {1, 2});
  Tensor<double> b({2}, {10, 20});
  CHECK(add(a, b) == Tensor<double>({2}, {11, 22}));
  CHECK_THROWS_AS(add(a, Tensor<double>({3})), dimension_error);
  CHECK(scale(a, 2.0) == Tensor<double>({2}, {2, 4}));

  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  CHECK(add_bias(x, a) == Tensor<double>({2, 2}, {2, 4, 4, 6}));
  CHECK_THROWS_AS(add_bias(x, Tensor<double>({3})), dimension_error);

  Tensor<double> z({3}, {0.0, 100.0, -100.0});
  Tensor<double> gz = gelu(z);
  CHECK(gz[0] == 0.0);
  CHECK(gz[1] == doctest::Approx(100.0));
  CHECK(std::fabs(gz[2]) < 1e-12);

  CHECK(sum_all(x)[0] == 10.0);
}

TEST_CASE("reshape, slice_last, concat_last") {
  Tensor<double> x({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor<double> r = reshape(x, {3, 2});
  CHECK(r.shape() == Shape{3, 2});
  for (std::int64_t i = 0; i < 6; ++i) CHECK(r[i] == x[i]);
  CHECK_THROWS_AS(reshape(x, {4, 2}), dimension_error);

  Tensor<double> s = slice_last(x, 1, 2);
  CHECK(s == Tensor<double>({2, 2}, {1, 2, 4, 5}));
  CHECK_THROWS_AS(slice_last(x, 2, 2), argument_error);

  std::vector<Tensor<double>> parts{slice_last(x, 0, 1), slice_last(x, 1, 2)};
  CHECK(concat_last(parts) == x);
}

TEST_CASE("to_regions/from_regions round trip bit-exactly") {
  std::mt19937_64 rng(29);
  Tensor<double> x = random_uniform<double>({6, 4, 3}, rng, -1.0, 1.0);
  Tensor<double> blocks = to_regions(x, 3, 2);
  CHECK(blocks.shape() == Shape{4, 6, 3});
  CHECK(from_regions(blocks, 3, 2, 6, 4) == x);
  CHECK_THROWS_AS(to_regions(x, 4, 2), configuration_error);
  CHECK_THROWS_AS(from_regions(blocks, 2, 2, 6, 4), dimension_error);
}

TEST_CASE("operations are deterministic") {
  std::mt19937_64 rng(31);
  Tensor<float> a = random_uniform<float>({6, 6}, rng, -1.0f, 1.0f);
  Tensor<float> b = random_uniform<float>({6, 6}, rng, -1.0f, 1.0f);
  CHECK(matmul(a, b) == matmul(a, b));
  CHECK(softmax_lastaxis(a) == softmax_lastaxis(a));
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<double>({2, 0}), dimension_error);
  CHECK_THROWS_AS(Tensor<double>(Shape{}), dimension_error);
  CHECK_THROWS_AS(Tensor<double>({2}, {1.0, 2.0, 3.0}), dimension_error);
}

TEST_CASE("binary container round trip") {
  std::mt19937_64 rng(37);
  Tensor<float> t = random_uniform<float>({2, 3, 4}, rng, -5.0f, 5.0f);
  std::stringstream buf;
  write_tensor(buf, t);
  CHECK(read_tensor<float>(buf) == t);

  Tensor<double> d = random_uniform<double>({7}, rng, -5.0, 5.0);
  std::stringstream buf2;
  write_tensor(buf2, d);
  CHECK_THROWS_AS(read_tensor<float>(buf2), io_error);
  buf2.seekg(0);
  AnyTensor any = read_tensor_any(buf2);
  CHECK(std::get<Tensor<double>>(any) == d);
}

TEST_CASE("json debug form round trip") {
  Tensor<double> t({2, 2}, {1.5, -2.0, 0.25, 8.0});
  nlohmann::json j = tensor_to_json(t);
  CHECK(j.at("shape").get<Shape>() == Shape{2, 2});
  CHECK(tensor_from_json<double>(j) == t);
}
