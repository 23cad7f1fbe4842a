#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "rdwn/ops.hpp"

using namespace rdwn;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

// Independent cross-correlation oracle: direct nested loops.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& bias,
                   int stride, int pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor y({B, O, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          double s = bias.size() ? bias.data()[o] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < kh; ++p)
              for (int64_t q = 0; q < kw; ++q) {
                const int64_t u = i * stride - pad + p;
                const int64_t v = j * stride - pad + q;
                if (u >= 0 && u < H && v >= 0 && v < W)
                  s += x.data()[((b * C + c) * H + u) * W + v] *
                       w.data()[((o * C + c) * kh + p) * kw + q];
              }
          y.data()[((b * O + o) * Ho + i) * Wo + j] = s;
        }
  return y;
}

void check_close(const Tensor& a, const Tensor& b, double tol = 1e-12) {
  REQUIRE(a.shape() == b.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    REQUIRE_THAT(a.data()[i], Catch::Matchers::WithinAbs(b.data()[i], tol));
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Tape tape;
  std::mt19937_64 rng(7);
  Tensor x = tape.leaf(random_tensor({1, 1, 3, 3}, rng));
  Tensor w = tape.leaf(Tensor({1, 1, 1, 1}, {1.0}));
  Tensor b = tape.leaf(Tensor({1}));
  Tensor y = op_conv2d(tape, x, w, b, 1, 0);
  check_close(y, x);
}

TEST_CASE("conv2d of zero input yields the bias everywhere") {
  Tape tape;
  std::mt19937_64 rng(8);
  Tensor x = tape.leaf(Tensor({2, 2, 4, 4}));
  Tensor w = tape.leaf(random_tensor({3, 2, 3, 3}, rng));
  Tensor b = tape.leaf(Tensor({3}, {0.5, -1.5, 2.0}));
  Tensor y = op_conv2d(tape, x, w, b, 1, 1);
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t o = 0; o < 3; ++o)
      for (int64_t k = 0; k < 16; ++k)
        REQUIRE(y.data()[(bb * 3 + o) * 16 + k] == b.data()[o]);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(9);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    Tape tape;
    Tensor x = tape.leaf(random_tensor({1, 2, 5, 5}, rng));
    Tensor w = tape.leaf(random_tensor({3, 2, 3, 3}, rng));
    Tensor b = tape.leaf(random_tensor({3}, rng));
    Tensor y = op_conv2d(tape, x, w, b, stride, pad);
    check_close(y, conv_oracle(x, w, b, stride, pad));
  }
}

TEST_CASE("conv2d rejects shape mismatches") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({1, 2, 5, 5}));
  Tensor w = tape.leaf(Tensor({3, 3, 3, 3}));  // channel mismatch
  REQUIRE_THROWS_AS(op_conv2d(tape, x, w, 1, 0), Error);
  Tensor big = tape.leaf(Tensor({1, 2, 7, 7}));
  REQUIRE_THROWS_AS(op_conv2d(tape, x, big, 1, 0), Error);
  REQUIRE_THROWS_AS(op_conv2d(tape, x, w, 0, 0), Error);
}

TEST_CASE("elementwise definitions") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({3}, {-1.0, 0.0, 2.0}));
  Tensor lr = op_elementwise(tape, EwKind::kLeakyRelu, x, 0.2);
  REQUIRE(lr.data()[0] == -0.2);
  REQUIRE(lr.data()[1] == 0.0);
  REQUIRE(lr.data()[2] == 2.0);
  Tensor r = op_elementwise(tape, EwKind::kRelu, x);
  REQUIRE(r.data()[0] == 0.0);
  REQUIRE(r.data()[1] == 0.0);
  REQUIRE(r.data()[2] == 2.0);

  std::mt19937_64 rng(10);
  Tensor a = tape.leaf(random_tensor({4, 5}, rng));
  Tensor sq = op_elementwise(tape, EwKind::kSquare, a);
  Tensor prod = op_elementwise(tape, EwKind::kMul, a, a);
  check_close(sq, prod);

  Tensor other = tape.leaf(Tensor({5, 4}));
  REQUIRE_THROWS_AS(op_elementwise(tape, EwKind::kAdd, a, other), Error);
}

TEST_CASE("reductions") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  REQUIRE(op_reduce(tape, ReduceKind::kMean, x).item() == 2.0);

  Tensor batch = tape.leaf(Tensor({1, 2}, {3.0, 4.0}));
  REQUIRE(op_reduce(tape, ReduceKind::kL2NormPerBatch, batch).data()[0] == 5.0);

  std::mt19937_64 rng(11);
  Tensor r = tape.leaf(random_tensor({2, 3, 4}, rng));
  double acc = 0;
  for (int64_t i = 0; i < r.size(); ++i) acc += r.data()[i];
  REQUIRE_THAT(op_reduce(tape, ReduceKind::kSum, r).item(),
               Catch::Matchers::WithinRel(acc, 1e-13));

  Tensor empty = tape.leaf(Tensor({0, 3}));
  REQUIRE_THROWS_AS(op_reduce(tape, ReduceKind::kSum, empty), Error);
  Tensor rank1 = tape.leaf(Tensor({3}));
  REQUIRE_THROWS_AS(op_reduce(tape, ReduceKind::kL2NormPerBatch, rank1), Error);
}

TEST_CASE("upsample semantics") {
  Tape tape;
  Tensor c = tape.leaf(Tensor::full({1, 1, 3, 3}, 2.5));
  for (auto mode : {UpsampleMode::kNearest, UpsampleMode::kBilinear}) {
    Tensor up = op_upsample(tape, c, 4, mode);
    REQUIRE(up.shape() == std::vector<int64_t>{1, 1, 12, 12});
    for (int64_t i = 0; i < up.size(); ++i) REQUIRE(up.data()[i] == 2.5);
    check_close(op_upsample(tape, c, 1, mode), c);
  }

  Tensor x = tape.leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  Tensor up = op_upsample(tape, x, 2, UpsampleMode::kNearest);
  const double expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) REQUIRE(up.data()[i] == expect[i]);

  REQUIRE_THROWS_AS(op_upsample(tape, x, 0, UpsampleMode::kNearest), Error);
}

TEST_CASE("forward ops keep finite inputs finite") {
  Tape tape;
  std::mt19937_64 rng(12);
  Tensor a = tape.leaf(random_tensor({2, 2, 8, 8}, rng, 0.0, 1.0));
  Tensor w = tape.leaf(random_tensor({4, 2, 3, 3}, rng));
  Tensor y = tape.conv_fwd(a, w, 1, 1);
  Tensor z = tape.leaky_relu(y, 0.2);
  Tensor m = tape.mean(tape.square(z));
  REQUIRE(std::isfinite(m.item()));
}
