#include "optlab/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "optlab/error.hpp"

namespace optlab {

std::string_view to_string(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::dropout_mask: return "dropout_mask";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::reshape: return "reshape";
    case OpKind::transpose: return "transpose";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->eval(*this); }

Var Graph::constant(Tensor value) {
  value.check_finite("constant");
  GraphNode n;
  n.output = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& tensor) {
  tensor.check_finite("parameter");
  GraphNode n;
  n.output = tensor;
  n.parameter = &tensor;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const GraphNode& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size())
    throw Error(ErrorCode::InvalidArgument, "variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::eval(Var v) const {
  if (consumed_) throw Error(ErrorCode::GraphConsumed, "graph values were released");
  return node(v).output;
}

Var Graph::record(OpKind op, std::vector<std::size_t> inputs, Tensor output, BackwardFn backward) {
  if (consumed_) throw Error(ErrorCode::GraphConsumed, "cannot extend a released graph");
  output.check_finite(to_string(op).data());
  GraphNode n;
  n.op = op;
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                             [this](std::size_t id) { return nodes_[id].needs_grad; });
  n.inputs = std::move(inputs);
  n.output = std::move(output);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

std::span<double> Graph::adjoint(std::size_t id) {
  auto& a = adjoints_[id];
  if (a.empty()) a.assign(nodes_[id].output.size(), 0.0);
  return a;
}

std::vector<Tensor*> Graph::backward(Var loss) {
  if (consumed_) throw Error(ErrorCode::GraphConsumed, "backward on a released graph");
  const GraphNode& root = node(loss);
  if (root.output.rank() != 0)
    throw Error(ErrorCode::NotScalar, "loss has shape " + shape_string(root.output.shape()));

  adjoints_.assign(nodes_.size(), {});
  adjoint(loss.id)[0] = 1.0;
  std::vector<Tensor*> touched;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    GraphNode& n = nodes_[id];
    if (adjoints_[id].empty() || !n.needs_grad) continue;
    if (n.parameter != nullptr) {
      auto grad = n.parameter->mutable_grad();
      const auto& adj = adjoints_[id];
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += adj[i];
      touched.push_back(n.parameter);
    } else if (n.backward) {
      n.backward(*this, adjoints_[id]);
    }
    if (id != loss.id) std::vector<double>().swap(adjoints_[id]);
  }
  adjoints_.clear();
  std::reverse(touched.begin(), touched.end());
  return touched;
}

void Graph::release() {
  consumed_ = true;
  nodes_.clear();
  adjoints_.clear();
}

namespace ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const Tensor& in(Graph& g, std::size_t id) { return g.node(Var{&g, id}).output; }

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr)
    throw Error(ErrorCode::InvalidArgument, "operands belong to different graphs");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

template <class F>
Var unary(Var a, OpKind op, F&& value_and_slope) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<double> slope(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) value_and_slope(x[i], out[i], slope[i]);
  const std::size_t ia = a.id;
  return a.graph->record(op, {ia}, std::move(out),
                         [ia, slope = std::move(slope)](Graph& g, std::span<const double> dy) {
                           auto da = g.adjoint(ia);
                           for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * slope[i];
                         });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  std::size_t batch = 1, m, k, n;
  if (A.rank() == 2 && B.rank() == 2 && A.shape()[1] == B.shape()[0]) {
    m = A.shape()[0];
    k = A.shape()[1];
    n = B.shape()[1];
  } else if (A.rank() == 3 && B.rank() == 3 && A.shape()[0] == B.shape()[0] &&
             A.shape()[2] == B.shape()[1]) {
    batch = A.shape()[0];
    m = A.shape()[1];
    k = A.shape()[2];
    n = B.shape()[2];
  } else {
    shape_error("matmul", A.shape(), B.shape());
  }
  Shape out_shape = batch == 1 && A.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
  Tensor C(out_shape);
  for (std::size_t p = 0; p < batch; ++p) {
    MutMap(C.data().data() + p * m * n, m, n).noalias() =
        ConstMap(A.data().data() + p * m * k, m, k) * ConstMap(B.data().data() + p * k * n, k, n);
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(
      OpKind::matmul, {ia, ib}, std::move(C),
      [ia, ib, batch, m, k, n](Graph& g, std::span<const double> dy) {
        const Tensor& A = in(g, ia);
        const Tensor& B = in(g, ib);
        const bool need_a = g.needs_grad(ia), need_b = g.needs_grad(ib);
        for (std::size_t p = 0; p < batch; ++p) {
          ConstMap dC(dy.data() + p * m * n, m, n);
          if (need_a)
            MutMap(g.adjoint(ia).data() + p * m * k, m, k).noalias() +=
                dC * ConstMap(B.data().data() + p * k * n, k, n).transpose();
          if (need_b)
            MutMap(g.adjoint(ib).data() + p * k * n, k, n).noalias() +=
                ConstMap(A.data().data() + p * m * k, m, k).transpose() * dC;
        }
      });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const Shape& sa = A.shape();
  const Shape& sb = B.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    shape_error("add", sa, sb);
  Tensor out(sa);
  const std::size_t nb = B.size();
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i % nb];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::add, {ia, ib}, std::move(out),
                         [ia, ib, nb](Graph& g, std::span<const double> dy) {
                           if (g.needs_grad(ia)) {
                             auto da = g.adjoint(ia);
                             for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                           }
                           if (g.needs_grad(ib)) {
                             auto db = g.adjoint(ib);
                             for (std::size_t i = 0; i < dy.size(); ++i) db[i % nb] += dy[i];
                           }
                         });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error("mul", A.shape(), B.shape());
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::mul, {ia, ib}, std::move(out),
                         [ia, ib](Graph& g, std::span<const double> dy) {
                           const Tensor& A = in(g, ia);
                           const Tensor& B = in(g, ib);
                           if (g.needs_grad(ia)) {
                             auto da = g.adjoint(ia);
                             for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * B[i];
                           }
                           if (g.needs_grad(ib)) {
                             auto db = g.adjoint(ib);
                             for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * A[i];
                           }
                         });
}

Var scale(Var a, double factor) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::scale, {ia}, std::move(out),
                         [ia, factor](Graph& g, std::span<const double> dy) {
                           auto da = g.adjoint(ia);
                           for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
                         });
}

Var relu(Var a) {
  return unary(a, OpKind::relu, [](double x, double& y, double& s) {
    y = x > 0.0 ? x : 0.0;
    s = x > 0.0 ? 1.0 : 0.0;
  });
}

Var tanh(Var a) {
  return unary(a, OpKind::tanh, [](double x, double& y, double& s) {
    y = std::tanh(x);
    s = 1.0 - y * y;
  });
}

Var softmax(Var a, bool causal) {
  const Tensor& x = a.value();
  const std::size_t cols = last_dim(x.shape());
  const std::size_t rows = x.size() / cols;
  if (causal && (x.rank() < 2 || x.shape()[x.rank() - 2] != cols))
    throw Error(ErrorCode::ShapeMismatch, "causal softmax needs a square trailing block, got " +
                                              shape_string(x.shape()));
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t valid = causal ? (r % cols) + 1 : cols;
    const double* xr = x.data().data() + r * cols;
    double* yr = y.data().data() + r * cols;
    const double peak = *std::max_element(xr, xr + valid);
    double total = 0.0;
    for (std::size_t j = 0; j < valid; ++j) total += (yr[j] = std::exp(xr[j] - peak));
    for (std::size_t j = 0; j < valid; ++j) yr[j] /= total;
  }
  const std::size_t ia = a.id;
  const std::size_t out_id = a.graph->size();
  return a.graph->record(OpKind::softmax, {ia}, std::move(y),
                         [ia, out_id, rows, cols](Graph& g, std::span<const double> dy) {
                           const Tensor& y = in(g, out_id);
                           auto da = g.adjoint(ia);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const std::size_t o = r * cols;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < cols; ++j) dot += dy[o + j] * y[o + j];
                             for (std::size_t j = 0; j < cols; ++j)
                               da[o + j] += y[o + j] * (dy[o + j] - dot);
                           }
                         });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_graph(x, gain);
  require_same_graph(x, bias);
  const Tensor& X = x.value();
  const std::size_t d = last_dim(X.shape());
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    shape_error("layer_norm", X.shape(), gain.shape());
  const std::size_t rows = X.size() / d;
  const Tensor& G = gain.value();
  const Tensor& Bv = bias.value();
  Tensor y(X.shape());
  std::vector<double> xhat(X.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      y[r * d + j] = G[j] * h + Bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.graph->record(
      OpKind::layer_norm, {ix, ig, ib}, std::move(y),
      [ix, ig, ib, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](
          Graph& g, std::span<const double> dy) {
        const Tensor& G = in(g, ig);
        if (g.needs_grad(ig)) {
          auto dg = g.adjoint(ig);
          for (std::size_t i = 0; i < dy.size(); ++i) dg[i % d] += dy[i] * xhat[i];
        }
        if (g.needs_grad(ib)) {
          auto db = g.adjoint(ib);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % d] += dy[i];
        }
        if (g.needs_grad(ix)) {
          auto dx = g.adjoint(ix);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * d;
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = dy[o + j] * G[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[o + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = dy[o + j] * G[j];
              dx[o + j] += rstd[r] * (dh - mean_dh - xhat[o + j] * mean_dh_h);
            }
          }
        }
      });
}

Var embedding_lookup(Var table, std::span<const std::uint32_t> ids) {
  const Tensor& T = table.value();
  if (T.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "embedding table must be [V,D]");
  const std::size_t vocab = T.shape()[0], d = T.shape()[1];
  if (ids.empty()) throw Error(ErrorCode::ShapeMismatch, "embedding lookup of zero ids");
  Tensor out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab)
      throw Error(ErrorCode::VocabOverflow,
                  "token id " + std::to_string(ids[r]) + " >= vocab " + std::to_string(vocab));
    std::copy_n(T.data().data() + ids[r] * d, d, out.data().data() + r * d);
  }
  const std::size_t it = table.id;
  return table.graph->record(
      OpKind::embedding_lookup, {it}, std::move(out),
      [it, d, rows = std::vector<std::uint32_t>(ids.begin(), ids.end())](
          Graph& g, std::span<const double> dy) {
        auto dt = g.adjoint(it);
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) dt[rows[r] * d + j] += dy[r * d + j];
      });
}

Var dropout(Var a, double p, RngStream& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout p must be in [0,1)");
  if (p == 0.0) return a;
  const Tensor& x = a.value();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  Tensor out(x.shape());
  // One Philox block yields four 32-bit keep/drop decisions.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  std::array<std::uint32_t, 4> words{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i % 4 == 0) words = rng.next_block();
    mask[i] = words[i % 4] < threshold ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::dropout_mask, {ia}, std::move(out),
                         [ia, mask = std::move(mask)](Graph& g, std::span<const double> dy) {
                           auto da = g.adjoint(ia);
                           for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * mask[i];
                         });
}

Var cross_entropy(Var logits, std::span<const std::uint32_t> targets) {
  const Tensor& L = logits.value();
  if (L.rank() != 2 || L.shape()[0] != targets.size())
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: logits " + shape_string(L.shape()) +
                                              " vs " + std::to_string(targets.size()) + " targets");
  const std::size_t n = L.shape()[0], v = L.shape()[1];
  std::vector<double> probs(L.size());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= v)
      throw Error(ErrorCode::VocabOverflow,
                  "target " + std::to_string(targets[r]) + " >= classes " + std::to_string(v));
    const double* lr = L.data().data() + r * v;
    const double peak = *std::max_element(lr, lr + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (probs[r * v + j] = std::exp(lr[j] - peak));
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    total += std::log(z) + peak - lr[targets[r]];
  }
  const std::size_t il = logits.id;
  return logits.graph->record(
      OpKind::cross_entropy, {il}, Tensor::scalar(total / static_cast<double>(n)),
      [il, n, v, probs = std::move(probs),
       tg = std::vector<std::uint32_t>(targets.begin(), targets.end())](
          Graph& g, std::span<const double> dy) {
        auto dl = g.adjoint(il);
        const double s = dy[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < v; ++j) dl[r * v + j] += s * probs[r * v + j];
          dl[r * v + tg[r]] -= s;
        }
      });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::reshape, {ia}, std::move(out),
                         [ia](Graph& g, std::span<const double> dy) {
                           auto da = g.adjoint(ia);
                           for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                         });
}

Var transpose(Var a, std::vector<std::size_t> perm) {
  const Tensor& x = a.value();
  const std::size_t rank = x.rank();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> identity(rank);
  std::iota(identity.begin(), identity.end(), 0);
  if (sorted != identity)
    throw Error(ErrorCode::ShapeMismatch, "transpose permutation does not match rank " +
                                              std::to_string(rank));
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape()[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  // gather[k] = input offset feeding output element k
  std::vector<std::size_t> gather(x.size());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t k = 0; k < gather.size(); ++k) {
    gather[k] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t k = 0; k < gather.size(); ++k) out[k] = x[gather[k]];
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::transpose, {ia}, std::move(out),
                         [ia, gather = std::move(gather)](Graph& g, std::span<const double> dy) {
                           auto da = g.adjoint(ia);
                           for (std::size_t k = 0; k < dy.size(); ++k) da[gather[k]] += dy[k];
                         });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::sum, {ia}, Tensor::scalar(total),
                         [ia](Graph& g, std::span<const double> dy) {
                           for (double& v : g.adjoint(ia)) v += dy[0];
                         });
}

Var mean(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  const std::size_t ia = a.id;
  return a.graph->record(OpKind::mean, {ia}, Tensor::scalar(total * inv_n),
                         [ia, inv_n](Graph& g, std::span<const double> dy) {
                           for (double& v : g.adjoint(ia)) v += dy[0] * inv_n;
                         });
}

}  // namespace ops

namespace {

double evaluate_at(const ScalarBuilder& f, const Tensor& x) {
  Graph g;
  return f(g, g.constant(x)).value().item();
}

}  // namespace

CheckReport grad_check(const ScalarBuilder& f, const Tensor& x, double rel_tol) {
  if (!(rel_tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "rel_tol must be positive");
  // Below this magnitude both derivatives count as zero-scale and the
  // difference is judged on an absolute basis.
  constexpr double kScaleFloor = 1e-6;

  Tensor probe = x;
  probe.set_requires_grad(true);
  probe.zero_grad();
  double f0;
  {
    Graph g;
    Var loss = f(g, g.parameter(probe));
    f0 = loss.value().item();
    if (!std::isfinite(f0)) throw Error(ErrorCode::NonFinite, "grad_check: f(x) is not finite");
    g.backward(loss);
  }

  CheckReport report;
  report.analytic.assign(probe.grad().begin(), probe.grad().end());
  report.numeric.resize(x.size());
  Tensor shifted = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
    auto f_at = [&](double delta) {
      shifted[i] = x[i] + delta;
      const double v = evaluate_at(f, shifted);
      shifted[i] = x[i];
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "grad_check: probe is not finite");
      return v;
    };
    const double fp = f_at(h), fm = f_at(-h);
    const double central = (fp - fm) / (2.0 * h);
    report.numeric[i] = central;

    // A smooth function's one-sided slope gap shrinks linearly with the step;
    // at a kink it stays put.
    const double hs = h / 10.0;
    const double gap = (fp - 2.0 * f0 + fm) / h;
    const double gap_small = (f_at(hs) - 2.0 * f0 + f_at(-hs)) / hs;
    const bool kink = std::abs(gap) > 1e-6 * std::max(1.0, std::abs(central)) &&
                      std::abs(gap_small) > 0.5 * std::abs(gap);
    if (kink) report.kinks.push_back(i);

    const double a = report.analytic[i];
    const double rel =
        std::abs(a - central) / std::max({std::abs(a), std::abs(central), kScaleFloor});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error <= rel_tol && report.kinks.empty();
  return report;
}

}  // namespace optlab
