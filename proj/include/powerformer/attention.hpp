#ifndef POWERFORMER_ATTENTION_HPP
#define POWERFORMER_ATTENTION_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "powerformer/rng.hpp"
#include "powerformer/tensor.hpp"

namespace powerformer {

/// Per-round bucket codes for every position of one sequence.
struct BucketAssignment {
  std::size_t n_rounds = 0;
  std::size_t n_buckets = 0;
  std::size_t seq_len = 0;
  std::vector<int> codes;  // round-major: codes[round * seq_len + position]

  int code(std::size_t round, std::size_t position) const {
    return codes[round * seq_len + position];
  }
};

/// Score-entry accounting. `score_entries` accumulates the number of (i,j)
/// pairs evaluated since the last reset, summed over batch elements and
/// calls; `token_count` is the token axis length of the most recent call.
namespace attention_cost {

inline std::atomic<std::uint64_t>& entries_counter() {
  static std::atomic<std::uint64_t> c{0};
  return c;
}

inline std::atomic<std::uint64_t>& tokens_counter() {
  static std::atomic<std::uint64_t> c{0};
  return c;
}

inline void reset() {
  entries_counter().store(0);
  tokens_counter().store(0);
}

inline void charge(std::uint64_t entries, std::uint64_t tokens) {
  entries_counter().fetch_add(entries);
  tokens_counter().store(tokens);
}

inline std::uint64_t score_entries() { return entries_counter().load(); }
inline std::uint64_t token_count() { return tokens_counter().load(); }

}  // namespace attention_cost

namespace detail {

inline void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw std::invalid_argument("attention: q, k, v must have shape (B, L, d)");
  if (q.shape()[0] != k.shape()[0] || q.shape()[0] != v.shape()[0] ||
      q.shape()[1] != k.shape()[1] || q.shape()[1] != v.shape()[1])
    throw std::invalid_argument(detail::str(
        "attention: batch/length mismatch: q ", shape_str(q.shape()), ", k ",
        shape_str(k.shape()), ", v ", shape_str(v.shape())));
  if (q.shape()[2] != k.shape()[2])
    throw std::invalid_argument(detail::str(
        "attention: q and k key widths differ: ", shape_str(q.shape()), " vs ",
        shape_str(k.shape())));
}

}  // namespace detail

/// Scaled dot-product attention over the full token axis. Scores QK^T are
/// scaled by 1/sqrt(d_k) and softmax-normalized per query row.
inline Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  detail::check_qkv(q, k, v);
  const std::size_t batch = q.shape()[0];
  const std::size_t len = q.shape()[1];
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(q.shape()[2]));
  Tensor scores = scale(matmul(q, transpose_last(k)), scale_factor);
  Tensor weights = softmax(scores, 2);
  attention_cost::charge(batch * len * len, len);
  return matmul(weights, v);
}

/// Angular LSH by random rotation: per round, project onto a seeded random
/// matrix R of shape (d_k, n_buckets/2) and take the argmax over the
/// concatenation [xR; -xR]. Vectors are unit-normalized first, so only
/// direction matters and identical vectors always collide.
inline BucketAssignment lsh_hash(const Tensor& vectors, std::size_t n_buckets,
                                 std::size_t n_rounds, std::uint64_t seed) {
  if (vectors.rank() != 2)
    throw std::invalid_argument("lsh_hash: vectors must have shape (L, d_k)");
  if (n_buckets < 2 || n_buckets % 2 != 0)
    throw std::invalid_argument(detail::str(
        "lsh_hash: n_buckets must be even and >= 2, got ", n_buckets));
  if (n_rounds == 0) throw std::invalid_argument("lsh_hash: n_rounds must be >= 1");

  const std::size_t len = vectors.shape()[0];
  const std::size_t dim = vectors.shape()[1];
  const std::size_t half = n_buckets / 2;

  std::vector<double> unit(len * dim);
  for (std::size_t i = 0; i < len; ++i) {
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double x = vectors.data()[i * dim + d];
      norm += x * x;
    }
    norm = std::sqrt(norm);
    const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
    for (std::size_t d = 0; d < dim; ++d)
      unit[i * dim + d] = vectors.data()[i * dim + d] * inv;
  }

  BucketAssignment assignment{n_rounds, n_buckets, len,
                              std::vector<int>(n_rounds * len, 0)};
  Rng rng(seed);
  std::vector<double> rotation(dim * half);
  for (std::size_t r = 0; r < n_rounds; ++r) {
    for (double& x : rotation) x = rng.gaussian();
    for (std::size_t i = 0; i < len; ++i) {
      int best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t h = 0; h < half; ++h) {
        double proj = 0.0;
        for (std::size_t d = 0; d < dim; ++d)
          proj += unit[i * dim + d] * rotation[d * half + h];
        if (proj > best_score) {
          best_score = proj;
          best = static_cast<int>(h);
        }
        if (-proj > best_score) {
          best_score = -proj;
          best = static_cast<int>(h + half);
        }
      }
      assignment.codes[r * len + i] = best;
    }
  }
  return assignment;
}

/// Union over rounds of the positions sharing position i's bucket code
/// (sorted, always contains i).
inline std::vector<std::size_t> multi_round_pool(const BucketAssignment& assignment,
                                                 std::size_t i) {
  if (i >= assignment.seq_len)
    throw std::out_of_range(detail::str("multi_round_pool: position ", i,
                                        " out of range for length ",
                                        assignment.seq_len));
  std::set<std::size_t> pool;
  pool.insert(i);
  for (std::size_t r = 0; r < assignment.n_rounds; ++r) {
    const int code = assignment.code(r, i);
    for (std::size_t j = 0; j < assignment.seq_len; ++j)
      if (assignment.code(r, j) == code) pool.insert(j);
  }
  return std::vector<std::size_t>(pool.begin(), pool.end());
}

/// Bucketed attention over explicit per-batch assignments. Each position
/// attends to its multi-round union pool with a single softmax over the pool;
/// positions with empty pools fall back to self-attention (cannot occur here
/// since a position always shares its own code, but guarded regardless).
inline Tensor lsh_attention_with_assignment(const Tensor& q, const Tensor& k,
                                            const Tensor& v,
                                            const std::vector<BucketAssignment>& assignments) {
  detail::check_qkv(q, k, v);
  const std::size_t batch = q.shape()[0];
  const std::size_t len = q.shape()[1];
  const std::size_t d_v = v.shape()[2];
  if (assignments.size() != batch)
    throw std::invalid_argument("lsh_attention: one BucketAssignment per batch element");
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(q.shape()[2]));

  std::uint64_t entries = 0;
  for (const BucketAssignment& a : assignments) {
    if (a.seq_len != len)
      throw std::invalid_argument("lsh_attention: assignment length mismatch");
    for (std::size_t r = 0; r < a.n_rounds; ++r) {
      std::vector<std::uint64_t> bucket_sizes(a.n_buckets, 0);
      for (std::size_t j = 0; j < len; ++j) bucket_sizes[a.code(r, j)]++;
      for (std::uint64_t s : bucket_sizes) entries += s * s;
    }
  }
  attention_cost::charge(entries, len);

  std::vector<Tensor> batch_rows;
  batch_rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor qb = reshape(slice(q, 0, b, 1), {len, q.shape()[2]});
    Tensor kb = reshape(slice(k, 0, b, 1), {len, k.shape()[2]});
    Tensor vb = reshape(slice(v, 0, b, 1), {len, d_v});
    std::vector<Tensor> rows;
    rows.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<std::size_t> pool = multi_round_pool(assignments[b], i);
      if (pool.empty()) pool.push_back(i);
      Tensor keys = index_select(kb, 0, pool);
      Tensor values = index_select(vb, 0, pool);
      Tensor qi = slice(qb, 0, i, 1);
      Tensor w = softmax(scale(matmul(qi, transpose_last(keys)), scale_factor), 1);
      rows.push_back(matmul(w, values));
    }
    batch_rows.push_back(reshape(concat(rows, 0), {1, len, d_v}));
  }
  return concat(batch_rows, 0);
}

/// Reformer-style LSH attention. Bucket codes are computed from the keys
/// (shared-QK convention: a query is pooled by its own position's key code),
/// independently per batch element with the same seeded hash functions.
/// n_buckets == 1 is the documented degenerate mode: every position lands in
/// one bucket and the result must match dense attention.
inline Tensor lsh_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_buckets, std::size_t n_rounds,
                            std::uint64_t seed) {
  detail::check_qkv(q, k, v);
  const std::size_t batch = q.shape()[0];
  const std::size_t len = q.shape()[1];
  std::vector<BucketAssignment> assignments;
  assignments.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (n_buckets == 1) {
      assignments.push_back(BucketAssignment{n_rounds, 1, len,
                                             std::vector<int>(n_rounds * len, 0)});
    } else {
      Tensor kb = reshape(slice(k, 0, b, 1), {len, k.shape()[2]}).detached();
      assignments.push_back(lsh_hash(kb, n_buckets, n_rounds, seed));
    }
  }
  return lsh_attention_with_assignment(q, k, v, assignments);
}

}  // namespace powerformer

#endif  // POWERFORMER_ATTENTION_HPP
