#include "optlab/models.hpp"

#include <algorithm>
#include <cmath>

#include "optlab/error.hpp"

namespace optlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidSpec, what);
}

}  // namespace

void validate(const ModelSpec& spec) {
  std::visit(overloaded{
                 [](const MlpSpec& s) {
                   require(s.input_dim > 0, "mlp input_dim must be positive");
                   require(!s.hidden_dims.empty(), "mlp needs at least one hidden layer");
                   require(std::all_of(s.hidden_dims.begin(), s.hidden_dims.end(),
                                       [](std::size_t d) { return d > 0; }),
                           "mlp hidden dims must be positive");
                   require(s.num_classes >= 2, "mlp needs at least two classes");
                 },
                 [](const TransformerLmSpec& s) {
                   require(s.vocab_size > 0 && s.embed_dim > 0 && s.num_layers > 0 &&
                               s.num_heads > 0 && s.ff_dim > 0,
                           "transformer dimensions must be positive");
                   require(s.embed_dim % s.num_heads == 0,
                           "embed_dim must be divisible by num_heads");
                   require(s.seq_len >= 2, "seq_len must be at least 2");
                   require(s.dropout_p >= 0.0 && s.dropout_p < 1.0, "dropout_p must be in [0,1)");
                 },
             },
             spec);
}

void ParamVector::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_)
    if (e.name == name) throw Error(ErrorCode::InvalidSpec, "duplicate parameter " + name);
  total_dim_ += tensor.size();
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor& ParamVector::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw Error(ErrorCode::InvalidArgument, "no parameter named " + name);
}

std::vector<double> ParamVector::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_dim_);
  for (const auto& e : entries_) flat.insert(flat.end(), e.tensor.data().begin(), e.tensor.data().end());
  return flat;
}

void ParamVector::assign(std::span<const double> flat) {
  if (flat.size() != total_dim_)
    throw Error(ErrorCode::ShapeMismatch, "flat vector of " + std::to_string(flat.size()) +
                                              " for " + std::to_string(total_dim_) + " parameters");
  std::size_t offset = 0;
  for (auto& e : entries_) {
    auto dst = e.tensor.data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

std::vector<double> ParamVector::flat_grad() const {
  std::vector<double> flat(total_dim_, 0.0);
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    if (e.tensor.has_grad())
      std::copy(e.tensor.grad().begin(), e.tensor.grad().end(),
                flat.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += e.tensor.size();
  }
  return flat;
}

void ParamVector::clear_grads() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

bool operator==(const ParamVector& a, const ParamVector& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor))
      return false;
  }
  return true;
}

namespace {

Tensor uniform_weight(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor w(Shape{fan_in, fan_out});
  for (auto& v : w.data()) v = bound * (2.0 * rng.uniform() - 1.0);
  return w;
}

void add_linear(ParamVector& params, const std::string& prefix, std::size_t in, std::size_t out,
                RngStream& rng) {
  params.add(prefix + ".weight", uniform_weight(in, out, rng));
  params.add(prefix + ".bias", Tensor(Shape{out}, 0.0));
}

}  // namespace

ParamVector init_model(const ModelSpec& spec, RngStream rng) {
  validate(spec);
  ParamVector params;
  std::visit(overloaded{
                 [&](const MlpSpec& s) {
                   std::size_t in = s.input_dim;
                   for (std::size_t i = 0; i < s.hidden_dims.size(); ++i) {
                     add_linear(params, "hidden." + std::to_string(i), in, s.hidden_dims[i], rng);
                     in = s.hidden_dims[i];
                   }
                   add_linear(params, "output", in, s.num_classes, rng);
                 },
                 [&](const TransformerLmSpec& s) {
                   Tensor embed(Shape{s.vocab_size, s.embed_dim});
                   for (auto& v : embed.data()) v = 0.02 * rng.normal();
                   params.add("embed.token", std::move(embed));
                   const std::size_t d = s.embed_dim;
                   for (std::size_t l = 0; l < s.num_layers; ++l) {
                     const std::string p = "layers." + std::to_string(l);
                     add_linear(params, p + ".attn.query", d, d, rng);
                     add_linear(params, p + ".attn.key", d, d, rng);
                     add_linear(params, p + ".attn.value", d, d, rng);
                     add_linear(params, p + ".attn.out", d, d, rng);
                     params.add(p + ".norm1.gain", Tensor(Shape{d}, 1.0));
                     params.add(p + ".norm1.bias", Tensor(Shape{d}, 0.0));
                     add_linear(params, p + ".ff.in", d, s.ff_dim, rng);
                     add_linear(params, p + ".ff.out", s.ff_dim, d, rng);
                     params.add(p + ".norm2.gain", Tensor(Shape{d}, 1.0));
                     params.add(p + ".norm2.bias", Tensor(Shape{d}, 0.0));
                   }
                   add_linear(params, "head", d, s.vocab_size, rng);
                 },
             },
             spec);
  return params;
}

Tensor positional_encoding(std::size_t seq_len, std::size_t dim) {
  Tensor pe(Shape{seq_len, dim});
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe[pos * dim + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < dim) pe[pos * dim + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

namespace {

// Binds every parameter once and hands out Vars by entry index.
class Bound {
 public:
  Bound(Graph& g, ParamVector& params) {
    vars_.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) vars_.push_back(g.parameter(params.at(i)));
  }
  explicit Bound(std::span<const Var> vars) : vars_(vars.begin(), vars.end()) {}
  Var next() {
    if (cursor_ >= vars_.size())
      throw Error(ErrorCode::ShapeMismatch, "model needs more parameter entries than were bound");
    return vars_[cursor_++];
  }
  bool exhausted() const { return cursor_ == vars_.size(); }

 private:
  std::vector<Var> vars_;
  std::size_t cursor_ = 0;
};

Var linear(Var x, Bound& p) {
  Var w = p.next();
  Var b = p.next();
  return ops::add(ops::matmul(x, w), b);
}

Var maybe_dropout(Var x, double p, Mode mode, RngStream& rng) {
  return mode == Mode::train ? ops::dropout(x, p, rng) : x;
}

struct Trace {
  Var loss;
  Var logits;
  std::vector<Var> attention;
};

void forward_mlp(const MlpSpec& s, Graph& g, Trace& out, Bound& p, const Batch& batch) {
  if (batch.features.rank() != 2 || batch.features.shape()[0] != batch.size ||
      batch.features.shape()[1] != s.input_dim || batch.targets.size() != batch.size)
    throw Error(ErrorCode::ShapeMismatch, "mlp batch " + shape_string(batch.features.shape()) +
                                              " does not match input_dim " +
                                              std::to_string(s.input_dim));
  Var h = g.constant(batch.features);
  for (std::size_t i = 0; i < s.hidden_dims.size(); ++i) {
    h = linear(h, p);
    h = s.activation == Activation::tanh ? ops::tanh(h) : ops::relu(h);
  }
  out.logits = linear(h, p);
  out.loss = ops::cross_entropy(out.logits, batch.targets);
}

void forward_transformer(const TransformerLmSpec& s, Graph& g, Trace& out, Bound& p,
                         const Batch& batch, Mode mode, RngStream& rng) {
  const std::size_t B = batch.size, T = s.seq_len, D = s.embed_dim, H = s.num_heads;
  const std::size_t dh = D / H;
  if (batch.tokens.size() != B * T || batch.targets.size() != B * T)
    throw Error(ErrorCode::ShapeMismatch, "language-model batch must hold size*seq_len tokens");
  for (auto id : batch.tokens)
    if (id >= s.vocab_size)
      throw Error(ErrorCode::VocabOverflow, "token id " + std::to_string(id) + " >= vocab " +
                                                std::to_string(s.vocab_size));
  const double pdrop = s.dropout_p;

  Var x = ops::embedding_lookup(p.next(), batch.tokens);
  x = ops::scale(x, std::sqrt(static_cast<double>(D)));
  x = ops::reshape(ops::add(ops::reshape(x, {B, T, D}), g.constant(positional_encoding(T, D))),
                   {B * T, D});
  x = maybe_dropout(x, pdrop, mode, rng);

  auto split_heads = [&](Var v) {
    return ops::reshape(ops::transpose(ops::reshape(v, {B, T, H, dh}), {0, 2, 1, 3}), {B * H, T, dh});
  };
  for (std::size_t l = 0; l < s.num_layers; ++l) {
    Var q = split_heads(linear(x, p));
    Var k = split_heads(linear(x, p));
    Var v = split_heads(linear(x, p));
    Var scores = ops::scale(ops::matmul(q, ops::transpose(k, {0, 2, 1})),
                            1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = ops::softmax(scores, /*causal=*/true);
    out.attention.push_back(attn);
    attn = maybe_dropout(attn, pdrop, mode, rng);
    Var ctx = ops::reshape(ops::transpose(ops::reshape(ops::matmul(attn, v), {B, H, T, dh}),
                                          {0, 2, 1, 3}),
                           {B * T, D});
    Var attn_out = maybe_dropout(linear(ctx, p), pdrop, mode, rng);
    Var gain1 = p.next(), bias1 = p.next();
    x = ops::layer_norm(ops::add(x, attn_out), gain1, bias1);

    Var ff = maybe_dropout(ops::relu(linear(x, p)), pdrop, mode, rng);
    ff = maybe_dropout(linear(ff, p), pdrop, mode, rng);
    Var gain2 = p.next(), bias2 = p.next();
    x = ops::layer_norm(ops::add(x, ff), gain2, bias2);
  }
  out.logits = linear(x, p);
  out.loss = ops::cross_entropy(out.logits, batch.targets);
}

Trace forward_into(const ModelSpec& spec, Graph& g, Bound& bound, const Batch& batch, Mode mode,
                   RngStream& dropout_rng) {
  Trace out;
  if (batch.size == 0) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  std::visit(overloaded{
                 [&](const MlpSpec& s) { forward_mlp(s, g, out, bound, batch); },
                 [&](const TransformerLmSpec& s) {
                   forward_transformer(s, g, out, bound, batch, mode, dropout_rng);
                 },
             },
             spec);
  if (!bound.exhausted())
    throw Error(ErrorCode::ShapeMismatch, "parameter entries left over after the forward pass");
  return out;
}

}  // namespace

LossGraph forward_loss(const ModelSpec& spec, ParamVector& params, const Batch& batch, Mode mode,
                       RngStream& dropout_rng) {
  LossGraph out;
  out.graph = std::make_unique<Graph>();
  Bound bound(*out.graph, params);
  Trace trace = forward_into(spec, *out.graph, bound, batch, mode, dropout_rng);
  out.loss = trace.loss;
  out.logits = trace.logits;
  out.attention = std::move(trace.attention);
  return out;
}

Var build_loss(const ModelSpec& spec, Graph& graph, std::span<const Var> params, const Batch& batch,
               Mode mode, RngStream& dropout_rng) {
  Bound bound(params);
  return forward_into(spec, graph, bound, batch, mode, dropout_rng).loss;
}

CheckReport grad_check_model(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                             Mode mode, const RngStream& dropout_rng, double rel_tol) {
  CheckReport total;
  total.passed = true;
  std::size_t offset = 0;
  for (std::size_t entry = 0; entry < params.count(); ++entry) {
    auto f = [&](Graph& g, Var x) {
      std::vector<Var> vars;
      for (std::size_t j = 0; j < params.count(); ++j)
        vars.push_back(j == entry ? x : g.constant(params.at(j)));
      RngStream replay = dropout_rng;
      return build_loss(spec, g, vars, batch, mode, replay);
    };
    CheckReport r = grad_check(f, params.at(entry), rel_tol);
    if (r.max_rel_error > total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst_index = offset + r.worst_index;
    }
    for (auto k : r.kinks) total.kinks.push_back(offset + k);
    total.analytic.insert(total.analytic.end(), r.analytic.begin(), r.analytic.end());
    total.numeric.insert(total.numeric.end(), r.numeric.begin(), r.numeric.end());
    total.passed = total.passed && r.passed;
    offset += params.at(entry).size();
  }
  return total;
}

LossAndGradient loss_and_gradient(const ModelSpec& spec, ParamVector& params, const Batch& batch,
                                  Mode mode, RngStream& dropout_rng) {
  params.clear_grads();
  LossGraph fwd = forward_loss(spec, params, batch, mode, dropout_rng);
  LossAndGradient result;
  result.loss = fwd.value();
  fwd.graph->backward(fwd.loss);
  result.gradient = params.flat_grad();
  params.clear_grads();
  return result;
}

double accuracy(const ModelSpec& spec, ParamVector& params, const Batch& batch) {
  RngStream unused(0, StreamId::dropout);
  LossGraph fwd = forward_loss(spec, params, batch, Mode::eval, unused);
  const Tensor& logits = fwd.logits.value();
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data().data() + r * cols;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    if (best == batch.targets[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

}  // namespace optlab
