#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "powerformer/attention.hpp"
#include "testing.hpp"

using namespace powerformer;

namespace {

// Independent two-loop oracle: softmax-weighted sum restricted to an explicit
// pool per position. Raw arithmetic only, no tensor ops.
std::vector<double> pool_attention_oracle(const Tensor& q, const Tensor& k,
                                          const Tensor& v, std::size_t b,
                                          const std::vector<std::vector<std::size_t>>& pools) {
  const std::size_t len = q.shape()[1];
  const std::size_t dk = q.shape()[2];
  const std::size_t dv = v.shape()[2];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> out(len * dv, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    const auto& pool = pools[i];
    std::vector<double> scores;
    double mx = -1e300;
    for (std::size_t j : pool) {
      double s = 0.0;
      for (std::size_t d = 0; d < dk; ++d) s += q.at({b, i, d}) * k.at({b, j, d});
      s *= scale;
      scores.push_back(s);
      mx = std::max(mx, s);
    }
    double denom = 0.0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      denom += s;
    }
    for (std::size_t p = 0; p < pool.size(); ++p)
      for (std::size_t d = 0; d < dv; ++d)
        out[i * dv + d] += (scores[p] / denom) * v.at({b, pool[p], d});
  }
  return out;
}

std::vector<std::vector<std::size_t>> full_pools(std::size_t len) {
  std::vector<std::size_t> all(len);
  for (std::size_t j = 0; j < len; ++j) all[j] = j;
  return std::vector<std::vector<std::size_t>>(len, all);
}

}  // namespace

TEST_CASE("dense attention on a single token returns the value row") {
  Rng rng(1);
  Tensor q = Tensor::randn({2, 1, 4}, rng);
  Tensor k = Tensor::randn({2, 1, 4}, rng);
  Tensor v = Tensor::randn({2, 1, 3}, rng);
  Tensor out = dense_attention(q, k, v);
  CHECK(pftest::max_abs_diff(out, v) < 1e-15);
}

TEST_CASE("dense attention saturates onto the matched value row") {
  // One-hot queries/keys scaled so the matched score exceeds others by 100.
  const double gap = 100.0 * std::sqrt(2.0);
  Tensor q = Tensor::from({1, 2, 2}, {gap, 0, 0, gap});
  Tensor k = Tensor::from({1, 2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({1, 2, 2}, {5, 6, 7, 8});
  Tensor out = dense_attention(q, k, v);
  CHECK(out.at({0, 0, 0}) == Catch::Approx(5.0).margin(1e-12));
  CHECK(out.at({0, 0, 1}) == Catch::Approx(6.0).margin(1e-12));
  CHECK(out.at({0, 1, 0}) == Catch::Approx(7.0).margin(1e-12));
  CHECK(out.at({0, 1, 1}) == Catch::Approx(8.0).margin(1e-12));
}

TEST_CASE("dense attention matches the brute-force oracle") {
  Rng rng(2);
  Tensor q = Tensor::randn({1, 4, 2}, rng);
  Tensor k = Tensor::randn({1, 4, 2}, rng);
  Tensor v = Tensor::randn({1, 4, 2}, rng);
  Tensor out = dense_attention(q, k, v);
  auto expect = pool_attention_oracle(q, k, v, 0, full_pools(4));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 2; ++d)
      CHECK(std::fabs(out.at({0, i, d}) - expect[i * 2 + d]) < 1e-12);
}

TEST_CASE("dense attention counts L^2 score entries") {
  Rng rng(3);
  Tensor q = Tensor::randn({1, 6, 3}, rng);
  Tensor k = Tensor::randn({1, 6, 3}, rng);
  Tensor v = Tensor::randn({1, 6, 3}, rng);
  attention_cost::reset();
  dense_attention(q, k, v);
  CHECK(attention_cost::score_entries() == 36);
  CHECK(attention_cost::token_count() == 6);
}

TEST_CASE("lsh_hash determinism and code ranges") {
  Rng rng(4);
  Tensor vecs = Tensor::randn({8, 4}, rng);
  BucketAssignment a = lsh_hash(vecs, 4, 3, 99);
  BucketAssignment b = lsh_hash(vecs, 4, 3, 99);
  CHECK(a.codes == b.codes);
  for (int c : a.codes) {
    CHECK(c >= 0);
    CHECK(c < 4);
  }

  BucketAssignment two = lsh_hash(vecs, 2, 2, 5);
  for (int c : two.codes) CHECK((c == 0 || c == 1));

  REQUIRE_THROWS_AS(lsh_hash(vecs, 3, 1, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(lsh_hash(vecs, 0, 1, 0), std::invalid_argument);
}

TEST_CASE("lsh_hash maps identical vectors to identical codes") {
  Tensor vecs = Tensor::from({3, 2}, {0.6, 0.8, 0.6, 0.8, -1.0, 0.3});
  BucketAssignment a = lsh_hash(vecs, 4, 4, 7);
  for (std::size_t r = 0; r < 4; ++r) CHECK(a.code(r, 0) == a.code(r, 1));
}

TEST_CASE("lsh_hash flips opposite vectors to the mirrored code") {
  // With codes from argmax [xR; -xR], negating x swaps the two halves.
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::randn({1, 6}, rng);
    Tensor nx = Tensor::zeros({1, 6});
    for (std::size_t i = 0; i < 6; ++i) nx.data()[i] = -x.data()[i];
    Tensor both = concat({x, nx}, 0);
    BucketAssignment a = lsh_hash(both, 6, 2, 1000 + trial);
    for (std::size_t r = 0; r < 2; ++r) {
      const int c = a.code(r, 0);
      const int cneg = a.code(r, 1);
      CHECK(c != cneg);
      CHECK(cneg == (c < 3 ? c + 3 : c - 3));
    }
  }
}

TEST_CASE("multi_round_pool unions per-round matches") {
  SECTION("one round, one bucket") {
    BucketAssignment a{1, 2, 4, {0, 0, 0, 0}};
    auto pool = multi_round_pool(a, 2);
    CHECK(pool == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SECTION("disjoint singletons") {
    BucketAssignment a{1, 4, 4, {0, 1, 2, 3}};
    CHECK(multi_round_pool(a, 1) == std::vector<std::size_t>{1});
  }
  SECTION("union across rounds") {
    // round A pairs (0,1), round B pairs (0,2)
    BucketAssignment a{2, 2, 3, {0, 0, 1, /*round B*/ 0, 1, 0}};
    CHECK(multi_round_pool(a, 0) == std::vector<std::size_t>{0, 1, 2});
    CHECK(multi_round_pool(a, 1) == std::vector<std::size_t>{0, 1});
  }
  SECTION("out of range") {
    BucketAssignment a{1, 2, 3, {0, 0, 0}};
    REQUIRE_THROWS_AS(multi_round_pool(a, 3), std::out_of_range);
  }
}

TEST_CASE("degenerate single-bucket mode equals dense attention") {
  Rng rng(6);
  Tensor q = Tensor::randn({2, 5, 3}, rng);
  Tensor k = Tensor::randn({2, 5, 3}, rng);
  Tensor v = Tensor::randn({2, 5, 4}, rng);
  Tensor dense = dense_attention(q, k, v);
  Tensor pooled = lsh_attention(q, k, v, 1, 1, 0);
  CHECK(pftest::max_abs_diff(dense, pooled) < 1e-12);
}

TEST_CASE("planted buckets isolate value rows") {
  Rng rng(7);
  Tensor q = Tensor::randn({1, 4, 3}, rng);
  Tensor k = Tensor::randn({1, 4, 3}, rng);
  Tensor v = Tensor::randn({1, 4, 2}, rng);
  // {0,1} and {2,3} in separate buckets, one round
  std::vector<BucketAssignment> planted{{1, 2, 4, {0, 0, 1, 1}}};
  Tensor out1 = lsh_attention_with_assignment(q, k, v, planted);

  Tensor v2 = v.clone();
  v2.data()[3 * 2 + 0] += 10.0;
  v2.data()[3 * 2 + 1] -= 3.0;
  Tensor out2 = lsh_attention_with_assignment(q, k, v2, planted);

  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t d = 0; d < 2; ++d)
      CHECK(out1.at({0, i, d}) == out2.at({0, i, d}));
  bool row3_changed = false;
  for (std::size_t d = 0; d < 2; ++d)
    row3_changed = row3_changed || out1.at({0, 3, d}) != out2.at({0, 3, d});
  CHECK(row3_changed);
}

TEST_CASE("a full round saturates the union pool to dense attention") {
  Rng rng(8);
  Tensor q = Tensor::randn({1, 4, 3}, rng);
  Tensor k = Tensor::randn({1, 4, 3}, rng);
  Tensor v = Tensor::randn({1, 4, 3}, rng);
  // round 1 splits positions, round 2 merges everything
  std::vector<BucketAssignment> planted{{2, 2, 4, {0, 1, 0, 1, /*round 2*/ 0, 0, 0, 0}}};
  Tensor pooled = lsh_attention_with_assignment(q, k, v, planted);
  Tensor dense = dense_attention(q, k, v);
  CHECK(pftest::max_abs_diff(pooled, dense) < 1e-12);
}

TEST_CASE("lsh attention equals the masked-dense oracle for L <= 16") {
  Rng rng(9);
  for (std::size_t len : {2, 5, 8, 16}) {
    Tensor q = Tensor::randn({2, len, 4}, rng);
    Tensor k = q.clone();  // shared-QK regime
    Tensor v = Tensor::randn({2, len, 3}, rng);
    Tensor out = lsh_attention(q, k, v, 4, 2, 77);
    for (std::size_t b = 0; b < 2; ++b) {
      Tensor kb = reshape(slice(k, 0, b, 1), {len, 4});
      BucketAssignment a = lsh_hash(kb, 4, 2, 77);
      std::vector<std::vector<std::size_t>> pools;
      for (std::size_t i = 0; i < len; ++i) pools.push_back(multi_round_pool(a, i));
      auto expect = pool_attention_oracle(q, k, v, b, pools);
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t d = 0; d < 3; ++d)
          CHECK(std::fabs(out.at({b, i, d}) - expect[i * 3 + d]) < 1e-10);
    }
  }
}

TEST_CASE("lsh attention output rows are convex combinations of pooled values") {
  // Identical value rows force every output row to equal that value.
  Rng rng(10);
  Tensor q = Tensor::randn({1, 6, 3}, rng);
  Tensor k = q.clone();
  Tensor v = Tensor::zeros({1, 6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    v.data()[i * 2] = 2.5;
    v.data()[i * 2 + 1] = -1.5;
  }
  Tensor out = lsh_attention(q, k, v, 4, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(out.at({0, i, 0}) == Catch::Approx(2.5).margin(1e-12));
    CHECK(out.at({0, i, 1}) == Catch::Approx(-1.5).margin(1e-12));
  }
}

TEST_CASE("lsh cost stays below dense for balanced buckets") {
  Rng rng(11);
  const std::size_t len = 12;
  Tensor q = Tensor::randn({1, len, 4}, rng);
  Tensor k = q.clone();
  Tensor v = Tensor::randn({1, len, 4}, rng);

  // balanced planted assignment: 4 buckets of 3
  std::vector<int> codes(len);
  for (std::size_t i = 0; i < len; ++i) codes[i] = static_cast<int>(i % 4);
  std::vector<BucketAssignment> planted{{1, 4, len, codes}};

  attention_cost::reset();
  lsh_attention_with_assignment(q, k, v, planted);
  const std::uint64_t lsh_entries = attention_cost::score_entries();
  CHECK(lsh_entries == 4 * 9);

  attention_cost::reset();
  dense_attention(q, k, v);
  CHECK(lsh_entries < attention_cost::score_entries());
}

TEST_CASE("lsh attention entries bounded by rounds times dense") {
  Rng rng(12);
  const std::size_t len = 10;
  Tensor q = Tensor::randn({1, len, 4}, rng);
  Tensor k = q.clone();
  Tensor v = Tensor::randn({1, len, 4}, rng);
  attention_cost::reset();
  lsh_attention(q, k, v, 4, 3, 123);
  CHECK(attention_cost::score_entries() <= 3 * len * len);
}

TEST_CASE("gradients flow through lsh attention") {
  Rng rng(13);
  Tensor q = Tensor::randn({1, 5, 3}, rng);
  Tensor k = q.clone();
  Tensor v = Tensor::randn({1, 5, 2}, rng);
  auto loss = [&] { return sum(lsh_attention(q, k, v, 2, 2, 55)); };
  CHECK(pftest::max_grad_rel_error(loss, {&q, &v}, 6, rng) < 1e-4);
}

TEST_CASE("gradients flow through dense attention") {
  Rng rng(14);
  Tensor q = Tensor::randn({2, 3, 4}, rng);
  Tensor k = Tensor::randn({2, 3, 4}, rng);
  Tensor v = Tensor::randn({2, 3, 2}, rng);
  auto loss = [&] { return sum(mul(dense_attention(q, k, v), dense_attention(q, k, v))); };
  CHECK(pftest::max_grad_rel_error(loss, {&q, &k, &v}, 6, rng) < 1e-4);
}
