// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "savior/checkpoint.hpp"
#include "savior/optim.hpp"
#include "savior/rng.hpp"
#include "savior/tensor.hpp"
#include "testutil.hpp"

using namespace savior;
using savior_test::fd_max_rel_err;

namespace {

// Independent triple-loop product used as the matmul oracle.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += a.value_at(i * k + kk) * b.value_at(kk * n + j);
      c.mutable_values()[static_cast<std::size_t>(i) * n + j] = acc;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Tensor eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  Tensor m = Tensor::randn({3, 3}, rng, 1.0, false);
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 9; ++i) REQUIRE(r.value_at(i) == m.value_at(i));

  Tensor a = Tensor::from_vector({1, 1}, {2.0});
  Tensor b = Tensor::from_vector({1, 1}, {3.0});
  REQUIRE(matmul(a, b).scalar_value() == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(11);
  Tensor a = Tensor::randn({5, 4}, rng, 1.0, false);
  Tensor b = Tensor::randn({4, 3}, rng, 1.0, false);
  Tensor c = matmul(a, b);
  Tensor ref = matmul_oracle(a, b);
  for (std::size_t i = 0; i < c.numel(); ++i)
    REQUIRE(std::abs(c.value_at(i) - ref.value_at(i)) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("[2,3]") != std::string::npos);
    REQUIRE(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows symmetry, stability, row sums") {
  Tensor eq = Tensor::from_vector({1, 4}, {2.5, 2.5, 2.5, 2.5});
  Tensor s = softmax_rows(eq);
  for (int i = 0; i < 4; ++i) REQUIRE(savior_test::nearly_equal(s.value_at(i), 0.25, 1e-15));

  Tensor big = Tensor::from_vector({1, 2}, {1000.0, 0.0});
  Tensor sb = softmax_rows(big);
  REQUIRE(sb.all_finite());
  REQUIRE(sb.value_at(0) > 1.0 - 1e-12);
  REQUIRE(sb.value_at(1) < 1e-12);

  Rng rng(3);
  Tensor r = Tensor::randn({6, 9}, rng, 3.0, false);
  Tensor sr = softmax_rows(r);
  for (int row = 0; row < 6; ++row) {
    double acc = 0.0;
    for (int c = 0; c < 9; ++c) {
      const double v = sr.value_at(row * 9 + c);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      acc += v;
    }
    REQUIRE(savior_test::nearly_equal(acc, 1.0, 1e-12));
  }
}

TEST_CASE("l2_normalize unit, zero, and norm property") {
  Tensor unit = Tensor::from_vector({2}, {0.6, 0.8});
  Tensor nu = l2_normalize(unit);
  REQUIRE(savior_test::nearly_equal(nu.value_at(0), 0.6, 1e-15));
  REQUIRE(savior_test::nearly_equal(nu.value_at(1), 0.8, 1e-15));

  Tensor zero = Tensor::zeros({5});
  Tensor nz = l2_normalize(zero);
  for (int i = 0; i < 5; ++i) REQUIRE(nz.value_at(i) == 0.0);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor v = Tensor::randn({8}, rng, 2.0, false);
    Tensor n = l2_normalize(v);
    double nrm = 0.0;
    for (int i = 0; i < 8; ++i) nrm += n.value_at(i) * n.value_at(i);
    REQUIRE(savior_test::nearly_equal(std::sqrt(nrm), 1.0, 1e-12));
  }
}

TEST_CASE("backward simple cases") {
  // loss = x^2 at x = 3 -> grad 6
  Tensor x = Tensor::from_vector({1}, {3.0}, true);
  Tensor loss = mul(x, x);
  backward(loss);
  REQUIRE(savior_test::nearly_equal(x.grad()[0], 6.0, 1e-12));

  // loss independent of p -> grad(p) stays zero
  Tensor p = Tensor::from_vector({3}, {1, 2, 3}, true);
  Tensor q = Tensor::from_vector({3}, {4, 5, 6}, true);
  Tensor l2 = sum(mul(q, q));
  backward(l2);
  for (int i = 0; i < 3; ++i) REQUIRE(p.grad()[i] == 0.0);

  // non-scalar loss rejected
  Tensor v = Tensor::from_vector({2}, {1, 2}, true);
  REQUIRE_THROWS_AS(backward(v), ContractError);
}

TEST_CASE("finite differences across primitive ops") {
  Rng rng(17);

  SECTION("matmul chain") {
    Tensor a = Tensor::randn({4, 3}, rng, 1.0);
    Tensor b = Tensor::randn({3, 5}, rng, 1.0);
    auto f = [&] { return sum_squares(matmul(a, b)); };
    REQUIRE(fd_max_rel_err({a, b}, f) < 1e-6);
  }
  SECTION("add sub mul scale") {
    Tensor a = Tensor::randn({2, 3}, rng, 1.0);
    Tensor b = Tensor::randn({2, 3}, rng, 1.0);
    auto f = [&] { return sum(mul(scale(add(a, b), 1.7), sub(a, b))); };
    REQUIRE(fd_max_rel_err({a, b}, f) < 1e-6);
  }
  SECTION("bias, concat, transpose, reshape") {
    Tensor m = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4}, rng, 1.0);
    Tensor n = Tensor::randn({3, 2}, rng, 1.0);
    auto f = [&] {
      Tensor c = concat_cols({add_bias(m, b), n});
      return sum_squares(transpose(reshape(c, {2, 9})));
    };
    REQUIRE(fd_max_rel_err({m, b, n}, f) < 1e-6);
  }
  SECTION("gather scatters into indexed rows only") {
    Tensor table = Tensor::randn({6, 3}, rng, 1.0);
    std::vector<int> idx = {1, 4, 1};
    auto f = [&] { return sum_squares(row_gather(table, idx)); };
    REQUIRE(fd_max_rel_err({table}, f) < 1e-6);

    table.zero_grad();
    backward(f());
    const auto& g = table.grad();
    for (int c = 0; c < 3; ++c) {
      REQUIRE(g[0 * 3 + c] == 0.0);
      REQUIRE(g[2 * 3 + c] == 0.0);
      REQUIRE(g[3 * 3 + c] == 0.0);
      REQUIRE(g[5 * 3 + c] == 0.0);
    }
  }
  SECTION("activations and reductions") {
    Tensor a = Tensor::randn({3, 3}, rng, 1.5);
    auto f = [&] { return mean(sigmoid(leaky_relu(a, 0.01))); };
    REQUIRE(fd_max_rel_err({a}, f) < 1e-6);
  }
  SECTION("softmax and l2 normalize") {
    Tensor a = Tensor::randn({4, 5}, rng, 1.0);
    Tensor w = Tensor::randn({4, 5}, rng, 1.0);
    auto f = [&] { return sum(mul(softmax_rows(a), w)); };
    REQUIRE(fd_max_rel_err({a, w}, f) < 1e-6);
    auto g = [&] { return sum(mul(l2_normalize_rows(a, 1e-12), w)); };
    REQUIRE(fd_max_rel_err({a, w}, g) < 1e-6);
  }
  SECTION("bce_with_logits") {
    Tensor logits = Tensor::randn({6, 1}, rng, 2.0);
    std::vector<double> labels = {1, 0, 0, 1, 1, 0};
    auto f = [&] { return bce_with_logits(logits, labels); };
    REQUIRE(fd_max_rel_err({logits}, f) < 1e-6);
  }
  SECTION("softmax xent with excluded diagonal") {
    Tensor logits = Tensor::randn({5, 5}, rng, 1.0);
    std::vector<int> pos = {1, 0, 4, 2, 3};
    auto f = [&] { return softmax_xent_rows_exclude_diag(logits, pos); };
    REQUIRE(fd_max_rel_err({logits}, f) < 1e-6);
  }
  SECTION("straight_through routes gradient to both paths") {
    Tensor a = Tensor::randn({2, 3}, rng, 1.0);
    Tensor b = Tensor::randn({2, 3}, rng, 1.0);
    Tensor st = straight_through(a, b);
    for (std::size_t i = 0; i < st.numel(); ++i) REQUIRE(st.value_at(i) == a.value_at(i));
    Tensor loss = sum_squares(st);
    backward(loss);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      REQUIRE(savior_test::nearly_equal(a.grad()[i], 2.0 * a.value_at(i), 1e-12));
      REQUIRE(a.grad()[i] == b.grad()[i]);
    }
  }
}

TEST_CASE("finite differences across attention kernels") {
  Rng rng(23);
  const int batch = 3, heads = 2, max_len = 4, dk = 3, dv = 2;
  std::vector<int> lens = {4, 2, 3};
  Tensor q = Tensor::randn({batch, heads * dk}, rng, 1.0);
  Tensor k = Tensor::randn({batch * max_len, heads * dk}, rng, 1.0);
  Tensor v = Tensor::randn({batch * max_len, heads * dv}, rng, 1.0);

  SECTION("raw scores path") {
    auto f = [&] {
      Tensor s = ta_scores(q, k, lens, heads, max_len);
      return sum_squares(ta_aggregate(s, v, lens, heads, max_len));
    };
    REQUIRE(fd_max_rel_err({q, k, v}, f) < 1e-6);
  }
  SECTION("softmax-normalized path") {
    auto f = [&] {
      Tensor s = masked_softmax_scores(ta_scores(q, k, lens, heads, max_len), lens, heads, max_len);
      return sum_squares(ta_aggregate(s, v, lens, heads, max_len));
    };
    REQUIRE(fd_max_rel_err({q, k, v}, f) < 1e-6);
  }
  SECTION("empty sequence yields zero output") {
    std::vector<int> zl = {0, 0, 0};
    Tensor s = ta_scores(q, k, zl, heads, max_len);
    Tensor o = ta_aggregate(masked_softmax_scores(s, zl, heads, max_len), v, zl, heads, max_len);
    for (std::size_t i = 0; i < o.numel(); ++i) REQUIRE(o.value_at(i) == 0.0);
  }
}

TEST_CASE("adagrad update rule") {
  SECTION("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from_vector({2}, {1.5, -2.5}, true);
    Adagrad opt({{"p", p}}, LrSchedule{0.01, 0.001, 100});
    opt.step();
    REQUIRE(p.value_at(0) == 1.5);
    REQUIRE(p.value_at(1) == -2.5);
  }
  SECTION("first step with g=1 moves by about -lr") {
    Tensor p = Tensor::from_vector({1}, {0.0}, true);
    Adagrad opt({{"p", p}}, LrSchedule{0.01, 0.01, 1}, 1e-10);
    Tensor loss = p;  // d loss / d p = 1
    backward(loss);
    opt.step();
    REQUIRE(savior_test::nearly_equal(p.value_at(0), -0.01, 1e-8));
  }
  SECTION("accumulator after g=1 then g=2 equals 5") {
    Tensor p = Tensor::from_vector({1}, {0.0}, true);
    Adagrad opt({{"p", p}}, LrSchedule{0.01, 0.01, 1}, 1e-10);
    backward(p);
    opt.step();
    opt.zero_grad();
    backward(scale(p, 2.0));
    opt.step();
    REQUIRE(opt.accumulator(0)[0] == 5.0);
  }
  SECTION("accumulators never decrease") {
    Rng rng(9);
    Tensor p = Tensor::randn({4}, rng, 1.0);
    Adagrad opt({{"p", p}}, LrSchedule{0.01, 0.001, 10});
    std::vector<double> prev(4, 0.0);
    for (int s = 0; s < 12; ++s) {
      opt.zero_grad();
      backward(sum_squares(p));
      opt.step();
      for (int i = 0; i < 4; ++i) {
        REQUIRE(opt.accumulator(0)[i] >= prev[i]);
        prev[i] = opt.accumulator(0)[i];
      }
    }
  }
  SECTION("NaN gradient aborts the step with a diagnostic") {
    Tensor p = Tensor::from_vector({1}, {1.0}, true);
    Adagrad opt({{"theta", p}}, LrSchedule{});
    p.zero_grad();
    const_cast<std::vector<double>&>(p.grad())[0] = std::nan("");
    try {
      opt.step();
      FAIL("expected OptimizerError");
    } catch (const OptimizerError& e) {
      REQUIRE(std::string(e.what()).find("theta") != std::string::npos);
      REQUIRE(p.value_at(0) == 1.0);
    }
  }
  SECTION("lr schedule interpolates linearly") {
    LrSchedule s{0.01, 0.001, 100};
    REQUIRE(savior_test::nearly_equal(s.at(0), 0.01, 1e-15));
    REQUIRE(savior_test::nearly_equal(s.at(50), 0.0055, 1e-15));
    REQUIRE(savior_test::nearly_equal(s.at(100), 0.001, 1e-15));
    REQUIRE(savior_test::nearly_equal(s.at(1000), 0.001, 1e-15));
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(31);
  Tensor a = Tensor::randn({3, 4}, rng, 123.0, false);
  Tensor b = Tensor::from_vector({4}, {-0.0, 5e-324, 1e308, -1e-308});
  const auto path = std::filesystem::temp_directory_path() / "savior_ckpt_test.bin";
  save_tensors(path, {{"layer.w", a}, {"odd", b}});
  auto loaded = load_tensors(path);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].first == "layer.w");
  REQUIRE(loaded[0].second.shape() == std::vector<int>({3, 4}));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    std::uint64_t x, y;
    std::memcpy(&x, &a.values()[i], 8);
    std::memcpy(&y, &loaded[0].second.values()[i], 8);
    REQUIRE(x == y);
  }
  for (std::size_t i = 0; i < b.numel(); ++i) {
    std::uint64_t x, y;
    std::memcpy(&x, &b.values()[i], 8);
    std::memcpy(&y, &loaded[1].second.values()[i], 8);
    REQUIRE(x == y);
  }
  std::filesystem::remove(path);

  REQUIRE_THROWS_AS(decode_tensors("BOGUS HEADER\n"), ContractError);
}

TEST_CASE("identical seeds give bit-identical training trajectories") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::randn({4, 4}, rng, 0.5);
    Tensor x = Tensor::randn({8, 4}, rng, 1.0, false);
    Adagrad opt({{"w", w}}, LrSchedule{0.01, 0.001, 20});
    for (int s = 0; s < 20; ++s) {
      opt.zero_grad();
      backward(sum_squares(matmul(x, w)));
      opt.step();
    }
    return w.values();
  };
  auto v1 = run(42);
  auto v2 = run(42);
  REQUIRE(v1.size() == v2.size());
  for (std::size_t i = 0; i < v1.size(); ++i) REQUIRE(v1[i] == v2[i]);
}

TEST_CASE("rng substreams are independent of draw order") {
  Rng a(99);
  Rng b(99);
  (void)b.normal();
  (void)b.normal();
  Rng fa = a.fork("stream");
  Rng fb = b.fork("stream");
  for (int i = 0; i < 10; ++i) REQUIRE(fa.next_u64() == fb.next_u64());
}
