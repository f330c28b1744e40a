#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "optlab/autodiff.hpp"
#include "optlab/rng.hpp"
#include "optlab/tensor.hpp"

namespace optlab {

enum class Activation { tanh, relu };

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  Activation activation = Activation::tanh;

  bool operator==(const MlpSpec&) const = default;
};

/// Post-norm encoder stack with causal self-attention and a linear readout,
/// the shape of the PyTorch word-level transformer tutorial.
struct TransformerLmSpec {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 0;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t ff_dim = 0;
  std::size_t seq_len = 0;
  double dropout_p = 0.0;

  bool operator==(const TransformerLmSpec&) const = default;
};

using ModelSpec = std::variant<MlpSpec, TransformerLmSpec>;

/// Throws InvalidSpec.
void validate(const ModelSpec& spec);

/// Named parameter tensors in a fixed order. Optimizer buffers align with
/// the flattened concatenation of the entries in this order.
class ParamVector {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void add(std::string name, Tensor tensor);

  std::size_t count() const noexcept { return entries_.size(); }
  std::size_t total_dim() const noexcept { return total_dim_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  Tensor& at(std::size_t i) { return entries_.at(i).tensor; }
  const Tensor& at(std::size_t i) const { return entries_.at(i).tensor; }
  const Tensor& get(const std::string& name) const;

  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  /// Concatenated gradients; entries without a gradient contribute zeros.
  std::vector<double> flat_grad() const;
  void clear_grads();

  friend bool operator==(const ParamVector& a, const ParamVector& b);

 private:
  std::vector<Entry> entries_;
  std::size_t total_dim_ = 0;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, layer-norm gain 1
/// and bias 0, embeddings ~ N(0, 0.02^2).
ParamVector init_model(const ModelSpec& spec, RngStream rng);

enum class Mode { train, eval };

/// Classification: `features` is [size, input_dim] and `targets` holds labels.
/// Language modeling: `tokens` and `targets` are [size, seq_len] row-major.
struct Batch {
  std::size_t size = 0;
  Tensor features;
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint32_t> targets;
};

struct LossGraph {
  std::unique_ptr<Graph> graph;
  Var loss;
  Var logits;
  /// Per-layer causal attention probabilities, [batch*heads, T, T].
  std::vector<Var> attention;

  double value() const { return loss.value().item(); }
};

/// Mean cross-entropy over samples (classification) or over every
/// (sample, position) pair (language modeling). `dropout_rng` is only
/// consumed in train mode.
LossGraph forward_loss(const ModelSpec& spec, ParamVector& params, const Batch& batch, Mode mode,
                       RngStream& dropout_rng);

/// The same loss over caller-bound parameter variables, one per
/// ParamVector entry in order. Lets a caller differentiate with respect to a
/// single entry while holding the rest constant.
Var build_loss(const ModelSpec& spec, Graph& graph, std::span<const Var> params, const Batch& batch,
               Mode mode, RngStream& dropout_rng);

/// grad_check over every parameter entry in turn; the dropout stream is
/// replayed from `dropout_rng` on every probe so masks stay fixed.
CheckReport grad_check_model(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                             Mode mode, const RngStream& dropout_rng, double rel_tol);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

LossAndGradient loss_and_gradient(const ModelSpec& spec, ParamVector& params, const Batch& batch,
                                  Mode mode, RngStream& dropout_rng);

/// Fraction of argmax predictions equal to the target.
double accuracy(const ModelSpec& spec, ParamVector& params, const Batch& batch);

/// Sinusoidal positional encoding table [seq_len, dim].
Tensor positional_encoding(std::size_t seq_len, std::size_t dim);

}  // namespace optlab
