#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "npkit/random.hpp"
#include "npkit/tensor.hpp"

using npkit::Philox;
using npkit::Tensor;

namespace {

// Independent triple-loop oracle for y = x W + b.
Tensor<double> matmul_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b) {
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  Tensor<double> y = Tensor<double>::matrix(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < in; ++k) acc += x.at(i, k) * w.at(k, j);
      y.at(i, j) = acc;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor<float> t({3, 4});
  CHECK(t.size() == 12);
  CHECK(t.rows() == 3);
  CHECK(t.cols() == 4);
  CHECK_THROWS_AS(Tensor<float>({0, 2}), npkit::shape_error);
  CHECK_THROWS_AS((Tensor<float>({2}, std::vector<float>{1, 2, 3})),
                  npkit::shape_error);
}

TEST_CASE("affine with identity weights adds the bias") {
  Tensor<double> x = Tensor<double>::row({1, 2});
  Tensor<double> w({2, 2}, {1, 0, 0, 1});
  Tensor<double> b = Tensor<double>::row({1, 1});
  Tensor<double> y = npkit::affine_forward(x, w, b);
  REQUIRE(y.size() == 2);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 3.0);
}

TEST_CASE("affine of a zero input returns the bias") {
  Tensor<double> x = Tensor<double>::row({0, 0});
  Tensor<double> w({2, 2}, {4, -2, 7, 0.5});
  Tensor<double> b = Tensor<double>::row({3, -1});
  Tensor<double> y = npkit::affine_forward(x, w, b);
  CHECK(y[0] == 3.0);
  CHECK(y[1] == -1.0);
}

TEST_CASE("random affine matches the triple-loop oracle") {
  Philox rng(11);
  Tensor<double> x = Tensor<double>::matrix(5, 4);
  Tensor<double> w = Tensor<double>::matrix(4, 3);
  Tensor<double> b({3});
  for (auto& v : x.raw()) v = rng.normal();
  for (auto& v : w.raw()) v = rng.normal();
  for (auto& v : b.raw()) v = rng.normal();
  Tensor<double> y = npkit::affine_forward(x, w, b);
  Tensor<double> o = matmul_oracle(x, w, b);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(std::abs(y[i] - o[i]) < 1e-6);
  }
}

TEST_CASE("affine rejects mismatched shapes") {
  Tensor<double> x = Tensor<double>::matrix(2, 3);
  Tensor<double> w = Tensor<double>::matrix(4, 3);
  Tensor<double> b({3});
  CHECK_THROWS_AS(npkit::affine_forward(x, w, b), npkit::shape_error);
}

TEST_CASE("activation kernels hit their analytic values") {
  Tensor<double> x = Tensor<double>::row({-2, 0, 3});
  Tensor<double> r = npkit::relu_forward(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 3.0);

  Tensor<double> s = npkit::sigmoid_forward(Tensor<double>::row({0}));
  CHECK(s[0] == 0.5);

  Tensor<double> sp = npkit::softplus_forward(Tensor<double>::row({0}));
  CHECK(std::abs(sp[0] - std::log(2.0)) < 1e-12);
}

TEST_CASE("softplus is overflow-safe at extreme inputs") {
  Tensor<double> sp =
      npkit::softplus_forward(Tensor<double>::row({1000, -1000}));
  CHECK(sp[0] == 1000.0);
  CHECK(sp[1] == 0.0);
  CHECK(sp.all_finite());
}

TEST_CASE("pooling examples") {
  Tensor<double> set({2, 2}, {1, 5, 3, 2});
  Tensor<double> mean = npkit::pool_mean_forward(set);
  CHECK(mean[0] == 2.0);
  CHECK(mean[1] == 3.5);
  Tensor<double> mx = npkit::pool_max_forward(set);
  CHECK(mx[0] == 3.0);
  CHECK(mx[1] == 5.0);

  Tensor<double> single({1, 3}, {4, -1, 0.5});
  Tensor<double> m1 = npkit::pool_mean_forward(single);
  Tensor<double> m2 = npkit::pool_max_forward(single);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m1[i] == single[i]);
    CHECK(m2[i] == single[i]);
  }
}

TEST_CASE("max pooling records the lowest argmax on ties") {
  Tensor<double> set({3, 1}, {7, 7, 3});
  std::vector<std::uint32_t> am;
  npkit::pool_max_forward(set, &am);
  CHECK(am[0] == 0);
}

TEST_CASE("logsumexp analytic values and overflow safety") {
  CHECK(std::abs(npkit::logsumexp_forward(Tensor<double>::row({0, 0})) -
                 std::log(2.0)) < 1e-12);
  CHECK(std::abs(npkit::logsumexp_forward(Tensor<double>::row({1000, 1000})) -
                 (1000 + std::log(2.0))) < 1e-9);
  CHECK(npkit::logsumexp_forward(Tensor<double>::row({-3.25})) == -3.25);
}

TEST_CASE("logsumexp shift identity") {
  Philox rng(2);
  Tensor<double> x({9});
  for (auto& v : x.raw()) v = rng.normal() * 3;
  const double base = npkit::logsumexp_forward(x);
  for (double c : {-17.0, 0.25, 260.0}) {
    Tensor<double> shifted = x;
    for (auto& v : shifted.raw()) v += c;
    CHECK(std::abs(npkit::logsumexp_forward(shifted) - (base + c)) < 1e-10);
  }
}
