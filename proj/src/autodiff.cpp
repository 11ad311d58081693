#include "vgqe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vgqe::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return *tape_;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, nullptr, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, nullptr, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
  // Frozen parameters enter as constants so no gradient is ever produced for them.
  Node node{param, param.requires_grad(), param.requires_grad() ? &param : nullptr, {}, {}};
  node.value.set_requires_grad(false);
  node.value.clear_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("op inputs come from different tapes");
    needs = needs || in.requires_grad();
  }
  Node node{std::move(value), needs, nullptr, {}, {}};
  if (needs) {
    node.backward = std::move(backward);
    ++record_count_;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

std::span<const double> Tape::grad(const Var& v) { return grad(v.id()); }

void Tape::backward(const Var& root) {
  if (&root.tape() != this) throw std::logic_error("backward root belongs to another tape");
  if (consumed_) throw std::logic_error("backward already ran on this tape");
  if (root.value().size() != 1) {
    throw ShapeError("backward needs a scalar root, got shape " + shape_string(root.shape()));
  }
  consumed_ = true;
  if (!requires_grad(root.id())) return;
  grad(root.id())[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.backward && !node.grad.empty()) {
      node.backward(*this, id);
      ++visited_records_;
    }
  }
  for (auto& node : nodes_) {
    if (!node.bound || node.grad.empty()) continue;
    auto dst = node.bound->grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
  }
}

namespace {

enum class Broadcast { full, scalar, row };

Broadcast classify(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::full;
  if (numel(b) == 1) return Broadcast::scalar;
  if (b.size() < a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return Broadcast::row;
  throw ShapeError(std::string(op) + ": cannot combine " + shape_string(a) + " with " + shape_string(b) +
                   " (only equal shapes, scalars, or trailing-dimension row broadcast)");
}

inline std::size_t bindex(Broadcast mode, std::size_t i, std::size_t bn) {
  switch (mode) {
    case Broadcast::full: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return i % bn;
  }
  return i;
}

template <typename Fn>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast mode, Fn fn) {
  Tensor out(a.shape());
  const auto bn = b.size();
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  if (mode == Broadcast::full) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i], y[i]);
  } else if (mode == Broadcast::scalar) {
    const double s = y[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i], s);
  } else {
    for (std::size_t r = 0; r < o.size(); r += bn)
      for (std::size_t j = 0; j < bn; ++j) o[r + j] = fn(x[r + j], y[j]);
  }
  return out;
}

template <typename Fn>
Var unary(const Var& a, Fn fn, Tape::BackwardFn backward) {
  Tensor out(a.shape());
  auto x = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i]);
  const Var inputs[] = {a};
  return a.tape().record(std::move(out), inputs, std::move(backward));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const auto mode = classify(a.shape(), b.shape(), "add");
  const auto ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape().record(zip(a.value(), b.value(), mode, [](double x, double y) { return x + y; }), inputs,
                         [ia, ib, mode](Tape& t, std::size_t out) {
                           auto g = t.grad(out);
                           if (t.requires_grad(ia)) {
                             auto ga = t.grad(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(mode, i, gb.size())] += g[i];
                           }
                         });
}

Var sub(const Var& a, const Var& b) {
  const auto mode = classify(a.shape(), b.shape(), "sub");
  const auto ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape().record(zip(a.value(), b.value(), mode, [](double x, double y) { return x - y; }), inputs,
                         [ia, ib, mode](Tape& t, std::size_t out) {
                           auto g = t.grad(out);
                           if (t.requires_grad(ia)) {
                             auto ga = t.grad(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(mode, i, gb.size())] -= g[i];
                           }
                         });
}

Var mul(const Var& a, const Var& b) {
  const auto mode = classify(a.shape(), b.shape(), "mul");
  const auto ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape().record(zip(a.value(), b.value(), mode, [](double x, double y) { return x * y; }), inputs,
                         [ia, ib, mode](Tape& t, std::size_t out) {
                           auto g = t.grad(out);
                           auto av = t.value(ia).data();
                           auto bv = t.value(ib).data();
                           if (t.requires_grad(ia)) {
                             auto ga = t.grad(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[bindex(mode, i, bv.size())];
                           }
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(mode, i, gb.size())] += g[i] * av[i];
                           }
                         });
}

Var elementwise(Elementwise op, const Var& a, const Var& b) {
  switch (op) {
    case Elementwise::add: return add(a, b);
    case Elementwise::sub: return sub(a, b);
    case Elementwise::mul: return mul(a, b);
  }
  throw std::invalid_argument("unknown elementwise op");
}

Var add(const Var& a, double b) {
  const auto ia = a.id();
  return unary(a, [b](double x) { return x + b; }, [ia](Tape& t, std::size_t out) {
    auto g = t.grad(out);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var scale(const Var& a, double s) {
  const auto ia = a.id();
  return unary(a, [s](double x) { return x * s; }, [ia, s](Tape& t, std::size_t out) {
    auto g = t.grad(out);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var sigmoid(const Var& a) {
  const auto ia = a.id();
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [ia](Tape& t, std::size_t out) {
        auto g = t.grad(out);
        auto y = t.value(out).data();
        auto ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

Var tanh(const Var& a) {
  const auto ia = a.id();
  return unary(a, [](double x) { return std::tanh(x); }, [ia](Tape& t, std::size_t out) {
    auto g = t.grad(out);
    auto y = t.value(out).data();
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(const Var& a) {
  const auto ia = a.id();
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [ia](Tape& t, std::size_t out) {
    auto g = t.grad(out);
    auto x = t.value(ia).data();
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

namespace {

// c[m x p] += a[m x n] * b[n x p]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    const double* ai = a + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = ai[k];
      const double* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += s * bk[j];
    }
  }
}

// ga[m x n] += g[m x p] * b[n x p]^T
void gemm_nt(const double* g, const double* b, double* ga, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * p;
    double* out = ga + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const double* bk = b + k * p;
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += gi[j] * bk[j];
      out[k] += s;
    }
  }
}

// gb[n x p] += a[m x n]^T * g[m x p]
void gemm_tn(const double* a, const double* g, double* gb, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    const double* gi = g + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = ai[k];
      if (s == 0.0) continue;
      double* out = gb + k * p;
      for (std::size_t j = 0; j < p; ++j) out[j] += s * gi[j];
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_string(as) + " * " + shape_string(bs));
  }
  const std::size_t m = as[0], n = as[1], p = bs[1];
  Tensor out({m, p});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, n, p);
  const auto ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [ia, ib, m, n, p](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    if (t.requires_grad(ia)) gemm_nt(g.data(), t.value(ib).data().data(), t.grad(ia).data(), m, n, p);
    if (t.requires_grad(ib)) gemm_tn(t.value(ia).data().data(), g.data(), t.grad(ib).data(), m, n, p);
  });
}

Var bmm(const Var& a, const Var& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
    throw ShapeError("bmm: incompatible batches " + shape_string(as) + " * " + shape_string(bs));
  }
  const std::size_t batch = as[0], m = as[1], n = as[2], p = bs[2];
  Tensor out({batch, m, p});
  const double* av = a.value().data().data();
  const double* bv = b.value().data().data();
  double* ov = out.data().data();
  for (std::size_t s = 0; s < batch; ++s) gemm_nn(av + s * m * n, bv + s * n * p, ov + s * m * p, m, n, p);
  const auto ia = a.id(), ib = b.id();
  const Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [ia, ib, batch, m, n, p](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    const double* av = t.value(ia).data().data();
    const double* bv = t.value(ib).data().data();
    double* ga = t.requires_grad(ia) ? t.grad(ia).data() : nullptr;
    double* gb = t.requires_grad(ib) ? t.grad(ib).data() : nullptr;
    for (std::size_t s = 0; s < batch; ++s) {
      const double* gs = g.data() + s * m * p;
      if (ga) gemm_nt(gs, bv + s * n * p, ga + s * m * n, m, n, p);
      if (gb) gemm_tn(av + s * m * n, gs, gb + s * n * p, m, n, p);
    }
  });
}

Var reduce(Reduce op, const Var& x, std::size_t axis) {
  const auto& xs = x.shape();
  if (axis >= xs.size()) {
    throw ShapeError("reduce: axis " + std::to_string(axis) + " invalid for shape " + shape_string(xs));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = xs[axis];
  Shape os;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (i != axis) os.push_back(xs[i]);

  Tensor out(os);
  auto in = x.value().data();
  auto o = out.data();
  std::vector<std::size_t> argmax;
  if (op == Reduce::max) argmax.assign(outer * inner, 0);
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * len * inner + c;
      double acc = op == Reduce::max ? -std::numeric_limits<double>::infinity() : 0.0;
      std::size_t best = 0;
      for (std::size_t l = 0; l < len; ++l) {
        const double v = in[base + l * inner];
        if (op == Reduce::max) {
          if (v > acc) {
            acc = v;
            best = l;
          }
        } else {
          acc += v;
        }
      }
      if (op == Reduce::mean) acc /= static_cast<double>(len);
      if (op == Reduce::max) argmax[a * inner + c] = best;
      o[a * inner + c] = acc;
    }
  }
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs,
                         [ix, op, outer, inner, len, argmax = std::move(argmax)](Tape& t, std::size_t out_id) {
                           auto g = t.grad(out_id);
                           auto gx = t.grad(ix);
                           const double w = op == Reduce::mean ? 1.0 / static_cast<double>(len) : 1.0;
                           for (std::size_t a = 0; a < outer; ++a) {
                             for (std::size_t c = 0; c < inner; ++c) {
                               const std::size_t base = a * len * inner + c;
                               const double gv = g[a * inner + c];
                               if (op == Reduce::max) {
                                 gx[base + argmax[a * inner + c] * inner] += gv;
                               } else {
                                 for (std::size_t l = 0; l < len; ++l) gx[base + l * inner] += gv * w;
                               }
                             }
                           }
                         });
}

Var sum_all(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(Tensor::scalar(acc), inputs, [ix](Tape& t, std::size_t out) {
    const double g = t.grad(out)[0];
    for (auto& v : t.grad(ix)) v += g;
  });
}

Var softmax(const Var& x) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("softmax needs at least one axis");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  auto in = xv.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * cols;
    double* yr = o.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= z;
  }
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [ix, rows, cols](Tape& t, std::size_t out_id) {
    auto g = t.grad(out_id);
    auto y = t.value(out_id).data();
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

Var l2_normalize(const Var& x, double eps) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  std::vector<double> norms(rows);
  auto in = xv.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) ss += in[r * cols + j] * in[r * cols + j];
    norms[r] = std::sqrt(ss + eps);
    for (std::size_t j = 0; j < cols; ++j) o[r * cols + j] = in[r * cols + j] / norms[r];
  }
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs,
                         [ix, rows, cols, norms = std::move(norms)](Tape& t, std::size_t out_id) {
                           auto g = t.grad(out_id);
                           auto y = t.value(out_id).data();
                           auto gx = t.grad(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
                             for (std::size_t j = 0; j < cols; ++j)
                               gx[r * cols + j] += (g[r * cols + j] - y[r * cols + j] * dot) / norms[r];
                           }
                         });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  const auto& lv = logits.value();
  if (lv.rank() != 2) throw ShapeError("cross_entropy expects [n x A] logits, got " + shape_string(lv.shape()));
  const std::size_t n = lv.dim(0), classes = lv.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                     " rows");
  }
  std::vector<double> probs(n * classes);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  auto x = lv.data();
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] >= classes) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    const double* xr = x.data() + r * classes;
    const double mx = *std::max_element(xr, xr + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - xr[tgt[r]];
    for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] = std::exp(xr[j] - lse);
  }
  const auto il = logits.id();
  const Var inputs[] = {logits};
  return logits.tape().record(
      Tensor::scalar(total / static_cast<double>(n)), inputs,
      [il, n, classes, probs = std::move(probs), tgt = std::move(tgt)](Tape& t, std::size_t out) {
        const double g = t.grad(out)[0] / static_cast<double>(n);
        auto gl = t.grad(il);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < classes; ++j) {
            const double onehot = j == tgt[r] ? 1.0 : 0.0;
            gl[r * classes + j] += g * (probs[r * classes + j] - onehot);
          }
        }
      });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [ix](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  if (xv.rank() == 0 || begin >= end || end > xv.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_string(xv.shape()));
  }
  const std::size_t rows = xv.rows(), cols = xv.cols(), w = end - begin;
  Shape os = xv.shape();
  os.back() = w;
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data().data() + r * cols + begin, w, out.data().data() + r * w);
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [ix, rows, cols, begin, w](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * cols + begin + j] += g[r * w + j];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto& first = parts[0].value();
  if (first.rank() == 0) throw ShapeError("concat_cols: scalar input");
  const std::size_t rows = first.rows();
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.rank() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw ShapeError("concat_cols: leading dims of " + shape_string(s) + " differ from " +
                       shape_string(first.shape()));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape os = lead;
  os.push_back(total);
  Tensor out(os);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * widths[k], widths[k], out.data().data() + r * total + off);
    off += widths[k];
    ids.push_back(parts[k].id());
  }
  return parts[0].tape().record(std::move(out), parts,
                                [ids = std::move(ids), widths = std::move(widths), rows, total](Tape& t, std::size_t o) {
                                  auto g = t.grad(o);
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (t.requires_grad(ids[k])) {
                                      auto gx = t.grad(ids[k]);
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          gx[r * widths[k] + j] += g[r * total + off + j];
                                    }
                                    off += widths[k];
                                  }
                                });
}

Var repeat_rows(const Var& x, std::size_t times) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || times == 0) {
    throw ShapeError("repeat_rows expects a matrix and positive count, got " + shape_string(xv.shape()));
  }
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({n * times, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < times; ++k)
      std::copy_n(xv.data().data() + r * d, d, out.data().data() + (r * times + k) * d);
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [ix, n, d, times](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < times; ++k)
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[(r * times + k) * d + j];
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> indices) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("gather_rows expects a matrix, got " + shape_string(xv.shape()));
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t rows = xv.dim(0), d = xv.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " >= " + std::to_string(rows));
    }
    std::copy_n(xv.data().data() + idx[i] * d, d, out.data().data() + i * d);
  }
  const auto ix = x.id();
  const Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [ix, d, idx = std::move(idx)](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gx[idx[i] * d + j] += g[i * d + j];
  });
}

}  // namespace vgqe::ad
