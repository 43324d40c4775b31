#ifndef POWERFORMER_TENSOR_HPP
#define POWERFORMER_TENSOR_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "powerformer/rng.hpp"

// Finite checks scan every op output for NaN/Inf. On by default outside
// NDEBUG builds; test and acceptance targets force them on.
#if !defined(POWERFORMER_NO_FINITE_CHECKS) && \
    (defined(POWERFORMER_FORCE_FINITE_CHECKS) || !defined(NDEBUG))
#define POWERFORMER_FINITE_CHECKS 1
#else
#define POWERFORMER_FINITE_CHECKS 0
#endif

namespace powerformer {

namespace detail {

inline void str_append(std::ostream&) {}

template <class T, class... Rest>
void str_append(std::ostream& os, T&& v, Rest&&... rest) {
  os << std::forward<T>(v);
  str_append(os, std::forward<Rest>(rest)...);
}

template <class... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  str_append(os, std::forward<Args>(args)...);
  return os.str();
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace detail

/// Live/peak tensor-byte accounting. Every tensor buffer reports its size on
/// allocation and release, so peak_bytes tracks the high-water mark of tensor
/// data alive at any point (activations held by a gradient tape included).
namespace memstat {

inline std::atomic<std::uint64_t>& live_counter() {
  static std::atomic<std::uint64_t> c{0};
  return c;
}

inline std::atomic<std::uint64_t>& peak_counter() {
  static std::atomic<std::uint64_t> c{0};
  return c;
}

inline void on_alloc(std::uint64_t bytes) {
  const std::uint64_t live = live_counter().fetch_add(bytes) + bytes;
  std::uint64_t peak = peak_counter().load();
  while (live > peak && !peak_counter().compare_exchange_weak(peak, live)) {
  }
}

inline void on_free(std::uint64_t bytes) { live_counter().fetch_sub(bytes); }

inline std::uint64_t live_bytes() { return live_counter().load(); }
inline std::uint64_t peak_bytes() { return peak_counter().load(); }

/// Restart the high-water mark from the current live footprint.
inline void reset_peak() { peak_counter().store(live_counter().load()); }

}  // namespace memstat

namespace detail {

/// Owning flat buffer; participates in memstat accounting.
class Storage {
 public:
  explicit Storage(std::size_t n) : values_(n, 0.0) {
    memstat::on_alloc(n * sizeof(double));
  }
  ~Storage() { memstat::on_free(values_.size() * sizeof(double)); }
  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;
};

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace detail

class Tape;

/// Dense row-major tensor of 64-bit floats. Copies share the underlying
/// buffer; all operations produce fresh tensors, so values behave immutably.
/// A tensor may carry a (tape id, node) handle linking it into the gradient
/// tape that recorded it.
class Tensor {
 public:
  /// Rank-0 scalar holding 0.0.
  Tensor() : shape_(), storage_(std::make_shared<detail::Storage>(1)) {}

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.size(), value);
    return t;
  }

  static Tensor scalar(double value) {
    Tensor t;
    t.data()[0] = value;
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t(std::move(shape));
    if (values.size() != t.size())
      throw std::invalid_argument(detail::str(
          "Tensor::from: ", values.size(), " values for shape ",
          detail::shape_str(t.shape()), " (needs ", t.size(), ")"));
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.gaussian();
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return storage_->size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return storage_->data(); }
  const double* data() const { return storage_->data(); }

  double operator[](std::size_t flat) const { return storage_->data()[flat]; }

  double at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw std::invalid_argument("Tensor::at: index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis])
        throw std::out_of_range("Tensor::at: index out of range");
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return storage_->data()[flat];
  }

  /// Deep copy with its own buffer, detached from any tape.
  Tensor clone() const {
    Tensor t(shape_);
    std::copy(data(), data() + size(), t.data());
    return t;
  }

  /// Same buffer, no tape handle.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_id_ = 0;
    t.node_ = -1;
    return t;
  }

  bool attached_to(std::uint64_t tape_id) const {
    return tape_id_ == tape_id && node_ >= 0;
  }
  int node() const { return node_; }
  std::uint64_t tape_id() const { return tape_id_; }

  void set_node(std::uint64_t tape_id, int node) {
    tape_id_ = tape_id;
    node_ = node;
  }

 private:
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)),
        storage_(std::make_shared<detail::Storage>(detail::shape_product(shape_))) {
    for (std::size_t d : shape_)
      if (d == 0) throw std::invalid_argument("Tensor: zero-length axis");
  }

  std::vector<std::size_t> shape_;
  std::shared_ptr<detail::Storage> storage_;
  std::uint64_t tape_id_ = 0;
  int node_ = -1;
};

namespace detail {

#if POWERFORMER_FINITE_CHECKS
inline void check_finite(const Tensor& t, const char* op) {
  const double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(p[i]))
      throw std::runtime_error(detail::str(op, ": non-finite value in output"));
  }
}
#else
inline void check_finite(const Tensor&, const char*) {}
#endif

}  // namespace detail

/// Node gradients produced by a backward/vjp sweep. Watched leaves remain
/// addressable by their buffer even after a later tape re-tags the tensor.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::uint64_t tape_id, std::unordered_map<int, Tensor> by_node,
            std::unordered_map<const double*, int> leaf_nodes)
      : tape_id_(tape_id),
        by_node_(std::move(by_node)),
        leaf_nodes_(std::move(leaf_nodes)) {}

  bool has(const Tensor& t) const { return resolve(t) >= 0; }

  /// Gradient of the swept scalar with respect to `t`. Zero tensor of the
  /// right shape when `t` participated but received no gradient.
  Tensor wrt(const Tensor& t) const {
    const int node = resolve(t);
    if (node < 0)
      throw std::invalid_argument("Gradients::wrt: tensor not attached to this tape");
    auto it = by_node_.find(node);
    if (it == by_node_.end()) return Tensor::zeros(t.shape());
    return it->second;
  }

 private:
  int resolve(const Tensor& t) const {
    if (t.attached_to(tape_id_)) return t.node();
    auto it = leaf_nodes_.find(t.data());
    return it == leaf_nodes_.end() ? -1 : it->second;
  }

  std::uint64_t tape_id_ = 0;
  std::unordered_map<int, Tensor> by_node_;
  std::unordered_map<const double*, int> leaf_nodes_;
};

/// Reverse-mode gradient tape. Creating a Tape makes it the active tape for
/// the current thread (tapes nest as a stack); operations whose inputs are
/// attached to the active tape record backward rules onto it. A tape is
/// confined to the thread that created it.
class Tape {
 public:
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Tape() : id_(next_id()) { stack().push_back(this); }

  ~Tape() {
    // Tapes and pauses are scoped objects; destruction order matches stack order.
    if (!stack().empty() && stack().back() == this) stack().pop_back();
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Suspend recording while alive (used during backward sweeps and when a
  /// forward pass must not retain activations).
  class Pause {
   public:
    Pause() { stack().push_back(nullptr); }
    ~Pause() { stack().pop_back(); }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;
  };

  static Tape* active() { return stack().empty() ? nullptr : stack().back(); }

  std::uint64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Register a leaf tensor. Idempotent for tensors already on this tape.
  int watch(Tensor& t) {
    if (t.attached_to(id_)) return t.node();
    const int node = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, nullptr});
    t.set_node(id_, node);
    leaf_nodes_[t.data()] = node;
    return node;
  }

  /// Record an interior node; parents use -1 for detached inputs.
  int record(std::vector<int> parents, BackwardFn fn) {
    const int node = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(parents), std::move(fn)});
    return node;
  }

  /// Gradients of a rank-0 loss with respect to everything on the tape.
  Gradients backward(const Tensor& loss) {
    if (loss.rank() != 0)
      throw std::invalid_argument("Tape::backward: loss must be rank-0");
    if (!loss.attached_to(id_))
      throw std::invalid_argument("Tape::backward: loss is not attached to this tape");
    return vjp({{loss, Tensor::scalar(1.0)}});
  }

  /// Vector-Jacobian product: seed one or more attached outputs with
  /// cotangents and sweep the tape once, visiting each node exactly once.
  Gradients vjp(const std::vector<std::pair<Tensor, Tensor>>& seeds) {
    Pause pause;  // backward math must not re-record
    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> present(nodes_.size(), false);
    for (const auto& [out, seed] : seeds) {
      if (!out.attached_to(id_))
        throw std::invalid_argument("Tape::vjp: output is not attached to this tape");
      if (seed.shape() != out.shape())
        throw std::invalid_argument(detail::str(
            "Tape::vjp: seed shape ", detail::shape_str(seed.shape()),
            " does not match output shape ", detail::shape_str(out.shape())));
      accumulate(grads, present, out.node(), seed);
    }
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (!present[i] || !nodes_[i].backward) continue;
      std::vector<Tensor> parent_grads = nodes_[i].backward(grads[i]);
      const auto& parents = nodes_[i].parents;
      if (parent_grads.size() != parents.size())
        throw std::logic_error("Tape: backward rule arity mismatch");
      for (std::size_t p = 0; p < parents.size(); ++p) {
        if (parents[p] < 0) continue;
        accumulate(grads, present, parents[p], parent_grads[p]);
      }
    }
    std::unordered_map<int, Tensor> by_node;
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (present[i]) by_node.emplace(static_cast<int>(i), grads[i]);
    return Gradients(id_, std::move(by_node), leaf_nodes_);
  }

 private:
  struct Node {
    std::vector<int> parents;
    BackwardFn backward;  // null for leaves
  };

  static void accumulate(std::vector<Tensor>& grads, std::vector<bool>& present,
                         int node, const Tensor& contribution) {
    if (!present[node]) {
      grads[node] = contribution.detached();
      present[node] = true;
      return;
    }
    Tensor& dst = grads[node];
    if (dst.shape() != contribution.shape())
      throw std::logic_error("Tape: gradient shape mismatch during accumulation");
    // Copy-on-accumulate keeps seed tensors intact.
    Tensor sum = dst.clone();
    const double* src = contribution.data();
    double* out = sum.data();
    for (std::size_t i = 0; i < sum.size(); ++i) out[i] += src[i];
    dst = sum;
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const double*, int> leaf_nodes_;
};

// ---------------------------------------------------------------------------
// Op recording helper
// ---------------------------------------------------------------------------

namespace detail {

/// Attach `out` to the active tape if any listed input is attached there.
inline void maybe_record(std::initializer_list<const Tensor*> inputs, Tensor& out,
                         Tape::BackwardFn fn) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool any = false;
  std::vector<int> parents;
  parents.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    if (in->attached_to(tape->id())) {
      parents.push_back(in->node());
      any = true;
    } else {
      parents.push_back(-1);
    }
  }
  if (!any) return;
  out.set_node(tape->id(), tape->record(std::move(parents), std::move(fn)));
}

// Iteration pattern for one axis: outer x axis x inner.
struct AxisSpan {
  std::size_t outer, len, inner;
};

inline AxisSpan axis_span(const std::vector<std::size_t>& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw std::invalid_argument(detail::str("axis ", axis, " invalid for shape ",
                                            shape_str(shape)));
  AxisSpan s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline bool is_shape_suffix(const std::vector<std::size_t>& small,
                            const std::vector<std::size_t>& big) {
  if (small.size() > big.size()) return false;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[i + off]) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (suffix broadcast: a lower-rank operand repeats over
// the other's leading batch axes; no other broadcasting)
// ---------------------------------------------------------------------------

namespace detail {

/// Sum `g` over its leading axes until it matches `target_shape`.
inline Tensor reduce_to_shape(const Tensor& g, const std::vector<std::size_t>& target_shape) {
  if (g.shape() == target_shape) return g;
  const std::size_t tail = shape_product(target_shape);
  Tensor out = Tensor::zeros(target_shape);
  const std::size_t repeats = g.size() / (tail == 0 ? 1 : tail);
  const double* src = g.data();
  double* dst = out.data();
  for (std::size_t r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < tail; ++i) dst[i] += src[r * tail + i];
  return out;
}

template <class Fn>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fn&& fn) {
  const bool a_big = a.rank() >= b.rank();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  if (!is_shape_suffix(small.shape(), big.shape()))
    throw std::invalid_argument(detail::str(
        name, ": shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()),
        " do not align"));
  Tensor out = Tensor::zeros(big.shape());
  const std::size_t tail = small.size();
  const double* pb = big.data();
  const double* ps = small.data();
  double* po = out.data();
  for (std::size_t i = 0; i < big.size(); ++i) {
    const double x = a_big ? pb[i] : ps[i % tail];
    const double y = a_big ? ps[i % tail] : pb[i];
    po[i] = fn(x, y);
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = detail::binary_op("add", a, b, [](double x, double y) { return x + y; });
  detail::check_finite(out, "add");
  auto sa = a.shape();
  auto sb = b.shape();
  detail::maybe_record({&a, &b}, out, [sa, sb](const Tensor& g) {
    return std::vector<Tensor>{detail::reduce_to_shape(g, sa),
                               detail::reduce_to_shape(g, sb)};
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = detail::binary_op("sub", a, b, [](double x, double y) { return x - y; });
  detail::check_finite(out, "sub");
  auto sa = a.shape();
  auto sb = b.shape();
  detail::maybe_record({&a, &b}, out, [sa, sb](const Tensor& g) {
    Tensor neg = Tensor::zeros(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg.data()[i] = -g.data()[i];
    return std::vector<Tensor>{detail::reduce_to_shape(g, sa),
                               detail::reduce_to_shape(neg, sb)};
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = detail::binary_op("mul", a, b, [](double x, double y) { return x * y; });
  detail::check_finite(out, "mul");
  Tensor av = a.detached();
  Tensor bv = b.detached();
  detail::maybe_record({&a, &b}, out, [av, bv](const Tensor& g) {
    Tensor da = detail::binary_op("mul", g, bv, [](double x, double y) { return x * y; });
    Tensor db = detail::binary_op("mul", g, av, [](double x, double y) { return x * y; });
    return std::vector<Tensor>{detail::reduce_to_shape(da, av.shape()),
                               detail::reduce_to_shape(db, bv.shape())};
  });
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  detail::check_finite(out, "scale");
  detail::maybe_record({&a}, out, [s](const Tensor& g) {
    Tensor dg = Tensor::zeros(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dg.data()[i] = g.data()[i] * s;
    return std::vector<Tensor>{dg};
  });
  return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
  detail::check_finite(out, "add_scalar");
  detail::maybe_record({&a}, out, [](const Tensor& g) {
    return std::vector<Tensor>{g};
  });
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd&& fwd, Bwd&& bwd_from_y) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = fwd(x.data()[i]);
  check_finite(out, name);
  Tensor y = out.detached();
  maybe_record({&x}, out, [y, bwd_from_y](const Tensor& g) {
    Tensor dx = Tensor::zeros(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      dx.data()[i] = g.data()[i] * bwd_from_y(y.data()[i]);
    return std::vector<Tensor>{dx};
  });
  return out;
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      "sigmoid", x,
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                   : std::exp(v) / (1.0 + std::exp(v)); },
      [](double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double y) { return y > 0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape) {
  if (detail::shape_product(new_shape) != x.size())
    throw std::invalid_argument(detail::str(
        "reshape: cannot view ", detail::shape_str(x.shape()), " as ",
        detail::shape_str(new_shape)));
  Tensor out = Tensor::zeros(new_shape);
  std::copy(x.data(), x.data() + x.size(), out.data());
  auto old_shape = x.shape();
  detail::maybe_record({&x}, out, [old_shape](const Tensor& g) {
    Tensor dg = Tensor::zeros(old_shape);
    std::copy(g.data(), g.data() + g.size(), dg.data());
    return std::vector<Tensor>{dg};
  });
  return out;
}

/// Permute axes; values are materialized in the new order.
inline Tensor transpose_axes(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r)
    throw std::invalid_argument(detail::str("transpose_axes: permutation size ",
                                            perm.size(), " for rank ", r));
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p])
      throw std::invalid_argument("transpose_axes: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  Tensor out = Tensor::zeros(out_shape);

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::vector<std::size_t> out_to_in(r, 0);
  for (std::size_t i = 0; i < r; ++i) out_to_in[i] = in_strides[perm[i]];

  std::vector<std::size_t> idx(r, 0);
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t in_flat = 0;
    for (std::size_t i = 0; i < r; ++i) in_flat += idx[i] * out_to_in[i];
    dst[flat] = src[in_flat];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }

  std::vector<std::size_t> inverse(r);
  for (std::size_t i = 0; i < r; ++i) inverse[perm[i]] = i;
  detail::maybe_record({&x}, out, [inverse](const Tensor& g) {
    return std::vector<Tensor>{transpose_axes(g, inverse)};
  });
  return out;
}

/// Swap the last two axes (matrix transpose on the trailing matrix).
inline Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2)
    throw std::invalid_argument("transpose_last: needs rank >= 2");
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
  return transpose_axes(x, perm);
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  const auto span = detail::axis_span(x.shape(), axis);
  if (len == 0 || start + len > span.len)
    throw std::invalid_argument(detail::str(
        "slice: [", start, ",", start + len, ") out of range for axis ", axis,
        " of ", detail::shape_str(x.shape())));
  std::vector<std::size_t> out_shape = x.shape();
  out_shape[axis] = len;
  Tensor out = Tensor::zeros(out_shape);
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t j = 0; j < len; ++j)
      std::copy(src + (o * span.len + start + j) * span.inner,
                src + (o * span.len + start + j + 1) * span.inner,
                dst + (o * len + j) * span.inner);
  auto in_shape = x.shape();
  detail::maybe_record({&x}, out, [in_shape, axis, start, len, span](const Tensor& g) {
    Tensor dx = Tensor::zeros(in_shape);
    const double* gs = g.data();
    double* dd = dx.data();
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t j = 0; j < len; ++j)
        std::copy(gs + (o * len + j) * span.inner,
                  gs + (o * len + j + 1) * span.inner,
                  dd + (o * span.len + start + j) * span.inner);
    return std::vector<Tensor>{dx};
  });
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::vector<std::size_t> out_shape = parts[0].shape();
  if (axis >= out_shape.size())
    throw std::invalid_argument("concat: axis out of range");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank())
      throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i)
      if (i != axis && p.shape()[i] != out_shape[i])
        throw std::invalid_argument(detail::str(
            "concat: shape ", detail::shape_str(p.shape()),
            " incompatible with ", detail::shape_str(parts[0].shape())));
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  Tensor out = Tensor::zeros(out_shape);
  const auto span = detail::axis_span(out_shape, axis);
  double* dst = out.data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t plen = p.shape()[axis];
    const double* src = p.data();
    for (std::size_t o = 0; o < span.outer; ++o)
      std::copy(src + o * plen * span.inner, src + (o + 1) * plen * span.inner,
                dst + (o * span.len + offset) * span.inner);
    offset += plen;
  }
  std::vector<std::size_t> lens;
  for (const Tensor& p : parts) lens.push_back(p.shape()[axis]);
  Tape* tape = Tape::active();
  if (tape) {
    bool any = false;
    std::vector<int> parent_ids;
    for (const Tensor& p : parts) {
      parent_ids.push_back(p.attached_to(tape->id()) ? p.node() : -1);
      any = any || p.attached_to(tape->id());
    }
    if (any) {
      out.set_node(tape->id(),
                   tape->record(parent_ids, [lens, axis](const Tensor& g) {
                     std::vector<Tensor> grads;
                     std::size_t off = 0;
                     for (std::size_t len : lens) {
                       grads.push_back(slice(g, axis, off, len));
                       off += len;
                     }
                     return grads;
                   }));
    }
  }
  return out;
}

/// Gather rows along an axis; the gradient scatter-adds back.
inline Tensor index_select(const Tensor& x, std::size_t axis,
                           const std::vector<std::size_t>& indices) {
  const auto span = detail::axis_span(x.shape(), axis);
  if (indices.empty()) throw std::invalid_argument("index_select: empty index list");
  for (std::size_t i : indices)
    if (i >= span.len)
      throw std::out_of_range(detail::str("index_select: index ", i,
                                          " out of range for axis length ", span.len));
  std::vector<std::size_t> out_shape = x.shape();
  out_shape[axis] = indices.size();
  Tensor out = Tensor::zeros(out_shape);
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t j = 0; j < indices.size(); ++j)
      std::copy(src + (o * span.len + indices[j]) * span.inner,
                src + (o * span.len + indices[j] + 1) * span.inner,
                dst + (o * indices.size() + j) * span.inner);
  auto in_shape = x.shape();
  detail::maybe_record({&x}, out, [in_shape, axis, indices, span](const Tensor& g) {
    Tensor dx = Tensor::zeros(in_shape);
    const double* gs = g.data();
    double* dd = dx.data();
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t j = 0; j < indices.size(); ++j) {
        double* row = dd + (o * span.len + indices[j]) * span.inner;
        const double* grow = gs + (o * indices.size() + j) * span.inner;
        for (std::size_t i = 0; i < span.inner; ++i) row[i] += grow[i];
      }
    return std::vector<Tensor>{dx};
  });
  return out;
}

/// Repeat a size-1 axis `times` times.
inline Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t times) {
  const auto span = detail::axis_span(x.shape(), axis);
  if (span.len != 1)
    throw std::invalid_argument(detail::str("repeat_axis: axis ", axis,
                                            " has length ", span.len, ", expected 1"));
  if (times == 0) throw std::invalid_argument("repeat_axis: zero repetitions");
  std::vector<std::size_t> out_shape = x.shape();
  out_shape[axis] = times;
  Tensor out = Tensor::zeros(out_shape);
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t t = 0; t < times; ++t)
      std::copy(src + o * span.inner, src + (o + 1) * span.inner,
                dst + (o * times + t) * span.inner);
  auto in_shape = x.shape();
  detail::maybe_record({&x}, out, [in_shape, axis, times, span](const Tensor& g) {
    Tensor dx = Tensor::zeros(in_shape);
    const double* gs = g.data();
    double* dd = dx.data();
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t i = 0; i < span.inner; ++i)
          dd[o * span.inner + i] += gs[(o * times + t) * span.inner + i];
    return std::vector<Tensor>{dx};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x.data()[i];
  Tensor out = Tensor::scalar(total);
  detail::check_finite(out, "sum");
  auto in_shape = x.shape();
  detail::maybe_record({&x}, out, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(in_shape, g.data()[0])};
  });
  return out;
}

inline Tensor sum(const Tensor& x, std::size_t axis) {
  const auto span = detail::axis_span(x.shape(), axis);
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  Tensor out = Tensor::zeros(out_shape);
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t j = 0; j < span.len; ++j)
      for (std::size_t i = 0; i < span.inner; ++i)
        dst[o * span.inner + i] += src[(o * span.len + j) * span.inner + i];
  detail::check_finite(out, "sum");
  auto in_shape = x.shape();
  detail::maybe_record({&x}, out, [in_shape, span](const Tensor& g) {
    Tensor dx = Tensor::zeros(in_shape);
    const double* gs = g.data();
    double* dd = dx.data();
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t j = 0; j < span.len; ++j)
        for (std::size_t i = 0; i < span.inner; ++i)
          dd[(o * span.len + j) * span.inner + i] = gs[o * span.inner + i];
    return std::vector<Tensor>{dx};
  });
  return out;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

inline Tensor mean(const Tensor& x, std::size_t axis) {
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_kernel(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
  // c (m x n) += a (m x k) * b (k x n); c must be zeroed by the caller.
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct MatmulPlan {
  std::size_t batch, m, k, n;
  bool a_batched, b_batched;
  std::vector<std::size_t> out_shape;
};

inline MatmulPlan matmul_plan(const std::vector<std::size_t>& sa,
                              const std::vector<std::size_t>& sb) {
  if (sa.size() < 2 || sb.size() < 2)
    throw std::invalid_argument(detail::str("matmul: operands must be rank >= 2, got ",
                                            shape_str(sa), " x ", shape_str(sb)));
  MatmulPlan p;
  p.m = sa[sa.size() - 2];
  p.k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  p.n = sb[sb.size() - 1];
  if (p.k != kb)
    throw std::invalid_argument(detail::str("matmul: inner axes disagree: ",
                                            shape_str(sa), " x ", shape_str(sb)));
  std::vector<std::size_t> lead_a(sa.begin(), sa.end() - 2);
  std::vector<std::size_t> lead_b(sb.begin(), sb.end() - 2);
  std::vector<std::size_t> lead;
  if (lead_a == lead_b) {
    lead = lead_a;
    p.a_batched = p.b_batched = !lead.empty();
  } else if (lead_b.empty()) {
    lead = lead_a;
    p.a_batched = true;
    p.b_batched = false;
  } else if (lead_a.empty()) {
    lead = lead_b;
    p.a_batched = false;
    p.b_batched = true;
  } else {
    throw std::invalid_argument(detail::str(
        "matmul: leading batch axes not broadcastable: ", shape_str(sa), " x ",
        shape_str(sb)));
  }
  p.batch = shape_product(lead);
  p.out_shape = lead;
  p.out_shape.push_back(p.m);
  p.out_shape.push_back(p.n);
  return p;
}

inline Tensor matmul_raw(const Tensor& a, const Tensor& b) {
  const MatmulPlan p = matmul_plan(a.shape(), b.shape());
  Tensor out = Tensor::zeros(p.out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  for (std::size_t bi = 0; bi < p.batch; ++bi)
    matmul_kernel(pa + (p.a_batched ? bi * p.m * p.k : 0),
                  pb + (p.b_batched ? bi * p.k * p.n : 0), pc + bi * p.m * p.n,
                  p.m, p.k, p.n);
  return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out = detail::matmul_raw(a, b);
  detail::check_finite(out, "matmul");
  Tensor av = a.detached();
  Tensor bv = b.detached();
  detail::maybe_record({&a, &b}, out, [av, bv](const Tensor& g) {
    Tensor da = detail::matmul_raw(g, transpose_last(bv));
    Tensor db = detail::matmul_raw(transpose_last(av), g);
    return std::vector<Tensor>{detail::reduce_to_shape(da, av.shape()),
                               detail::reduce_to_shape(db, bv.shape())};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and layer normalization
// ---------------------------------------------------------------------------

/// Numerically stable softmax along `axis` (max subtraction before exp).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto span = detail::axis_span(x.shape(), axis);
  Tensor out = Tensor::zeros(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t o = 0; o < span.outer; ++o) {
    for (std::size_t i = 0; i < span.inner; ++i) {
      const std::size_t base = o * span.len * span.inner + i;
      double mx = src[base];
      for (std::size_t j = 1; j < span.len; ++j)
        mx = std::max(mx, src[base + j * span.inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < span.len; ++j) {
        const double e = std::exp(src[base + j * span.inner] - mx);
        dst[base + j * span.inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < span.len; ++j) dst[base + j * span.inner] /= denom;
    }
  }
  detail::check_finite(out, "softmax");
  Tensor y = out.detached();
  detail::maybe_record({&x}, out, [y, span](const Tensor& g) {
    // dx = y * (g - sum_j g_j y_j) per slice
    Tensor dx = Tensor::zeros(g.shape());
    const double* gy = g.data();
    const double* yy = y.data();
    double* dd = dx.data();
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t i = 0; i < span.inner; ++i) {
        const std::size_t base = o * span.len * span.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < span.len; ++j)
          dot += gy[base + j * span.inner] * yy[base + j * span.inner];
        for (std::size_t j = 0; j < span.len; ++j) {
          const std::size_t p = base + j * span.inner;
          dd[p] = yy[p] * (gy[p] - dot);
        }
      }
    return std::vector<Tensor>{dx};
  });
  return out;
}

/// Layer normalization along `axis` with affine parameters gamma/beta of the
/// axis length. Population variance (1/N), eps inside the square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         std::size_t axis, double eps) {
  const auto span = detail::axis_span(x.shape(), axis);
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  if (gamma.rank() != 1 || gamma.size() != span.len || beta.rank() != 1 ||
      beta.size() != span.len)
    throw std::invalid_argument(detail::str(
        "layer_norm: gamma/beta must be rank-1 of length ", span.len, ", got ",
        detail::shape_str(gamma.shape()), " and ", detail::shape_str(beta.shape())));
  Tensor out = Tensor::zeros(x.shape());
  Tensor xhat = Tensor::zeros(x.shape());
  Tensor inv_std = Tensor::zeros({span.outer, span.inner});
  const double* src = x.data();
  const double* gm = gamma.data();
  const double* bt = beta.data();
  double* dst = out.data();
  double* xh = xhat.data();
  double* is = inv_std.data();
  const double len = static_cast<double>(span.len);
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t i = 0; i < span.inner; ++i) {
      const std::size_t base = o * span.len * span.inner + i;
      double mu = 0.0;
      for (std::size_t j = 0; j < span.len; ++j) mu += src[base + j * span.inner];
      mu /= len;
      double var = 0.0;
      for (std::size_t j = 0; j < span.len; ++j) {
        const double d = src[base + j * span.inner] - mu;
        var += d * d;
      }
      var /= len;
      const double inv = 1.0 / std::sqrt(var + eps);
      is[o * span.inner + i] = inv;
      for (std::size_t j = 0; j < span.len; ++j) {
        const std::size_t p = base + j * span.inner;
        xh[p] = (src[p] - mu) * inv;
        dst[p] = gm[j] * xh[p] + bt[j];
      }
    }
  detail::check_finite(out, "layer_norm");
  Tensor gamma_v = gamma.detached();
  detail::maybe_record({&x, &gamma, &beta}, out,
                       [xhat, inv_std, gamma_v, span](const Tensor& g) {
    Tensor dx = Tensor::zeros(g.shape());
    Tensor dgamma = Tensor::zeros({span.len});
    Tensor dbeta = Tensor::zeros({span.len});
    const double* gg = g.data();
    const double* xh = xhat.data();
    const double* is = inv_std.data();
    const double* gm = gamma_v.data();
    double* dxp = dx.data();
    double* dgp = dgamma.data();
    double* dbp = dbeta.data();
    const double len = static_cast<double>(span.len);
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t i = 0; i < span.inner; ++i) {
        const std::size_t base = o * span.len * span.inner + i;
        double sum_gh = 0.0, sum_ghx = 0.0;
        for (std::size_t j = 0; j < span.len; ++j) {
          const std::size_t p = base + j * span.inner;
          const double gh = gg[p] * gm[j];
          sum_gh += gh;
          sum_ghx += gh * xh[p];
          dgp[j] += gg[p] * xh[p];
          dbp[j] += gg[p];
        }
        const double inv = is[o * span.inner + i];
        for (std::size_t j = 0; j < span.len; ++j) {
          const std::size_t p = base + j * span.inner;
          const double gh = gg[p] * gm[j];
          dxp[p] = (gh - sum_gh / len - xh[p] * (sum_ghx / len)) * inv;
        }
      }
    return std::vector<Tensor>{dx, dgamma, dbeta};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Backward entry point (free-function form of the tape sweep)
// ---------------------------------------------------------------------------

/// Gradients of a rank-0, tape-attached loss on the active tape.
inline Gradients backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape || !loss.attached_to(tape->id()))
    throw std::invalid_argument("backward: loss is not attached to the active tape");
  return tape->backward(loss);
}

}  // namespace powerformer

#endif  // POWERFORMER_TENSOR_HPP
