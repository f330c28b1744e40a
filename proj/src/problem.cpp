#include "optlab/problem.hpp"

#include <algorithm>
#include <cmath>

#include "optlab/error.hpp"

namespace optlab {

namespace {

constexpr std::size_t kEvalChunk = 256;

}  // namespace

ModelProblem::ModelProblem(ModelSpec spec, Dataset train, Dataset heldout)
    : spec_(std::move(spec)), train_(std::move(train)), heldout_(std::move(heldout)) {
  validate(spec_);
  if (train_.n_samples == 0) throw Error(ErrorCode::InvalidArgument, "empty training set");
  layout_ = init_model(spec_, RngStream(0, StreamId::init));
}

std::vector<double> ModelProblem::initial_params(std::uint64_t seed) const {
  return init_model(spec_, RngStream(seed, StreamId::init)).flatten();
}

LossAndGradient ModelProblem::gradient(std::span<const double> x, std::span<const std::size_t> samples,
                                       Mode mode, RngStream& dropout_rng) const {
  ParamVector params = layout_;
  params.assign(x);
  return loss_and_gradient(spec_, params, train_.gather(samples), mode, dropout_rng);
}

ModelProblem::Totals ModelProblem::totals(std::span<const double> x, const Dataset& data) const {
  ParamVector params = layout_;
  params.assign(x);
  RngStream unused(0, StreamId::dropout);
  Totals t;
  for (std::size_t first = 0; first < data.n_samples; first += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, data.n_samples - first);
    const Batch batch = data.gather_range(first, count);
    LossGraph fwd = forward_loss(spec_, params, batch, Mode::eval, unused);
    const Tensor& logits = fwd.logits.value();
    const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
    std::size_t hits = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = logits.data().data() + r * cols;
      if (static_cast<std::size_t>(std::max_element(row, row + cols) - row) == batch.targets[r]) ++hits;
    }
    const double w = static_cast<double>(count) / static_cast<double>(data.n_samples);
    t.loss += w * fwd.value();
    t.accuracy += w * static_cast<double>(hits) / static_cast<double>(rows);
  }
  return t;
}

double ModelProblem::train_loss(std::span<const double> x) const { return totals(x, train_).loss; }

double ModelProblem::evaluate(std::span<const double> x, EvalMetric metric) const {
  const Dataset& data = heldout_.n_samples ? heldout_ : train_;
  const Totals t = totals(x, data);
  switch (metric == EvalMetric::automatic ? default_metric() : metric) {
    case EvalMetric::perplexity: return std::exp(t.loss);
    case EvalMetric::accuracy: return t.accuracy;
    default: return t.loss;
  }
}

EvalMetric ModelProblem::default_metric() const {
  return std::holds_alternative<TransformerLmSpec>(spec_) ? EvalMetric::perplexity : EvalMetric::accuracy;
}

QuadraticProblem::QuadraticProblem(std::size_t n, std::size_t dim, double noise, std::uint64_t data_seed)
    : n_(n), dim_(dim), centers_(n * dim, 0.0) {
  if (n == 0 || dim == 0) throw Error(ErrorCode::InvalidSpec, "quadratic needs n and dim");
  RngStream rng(data_seed, StreamId::synthetic);
  if (noise != 0.0)
    for (double& c : centers_) c = noise * rng.normal();
}

std::vector<double> QuadraticProblem::initial_params(std::uint64_t seed) const {
  RngStream rng(seed, StreamId::init);
  std::vector<double> x(dim_);
  for (double& v : x) v = rng.normal();
  return x;
}

LossAndGradient QuadraticProblem::gradient(std::span<const double> x, std::span<const std::size_t> samples,
                                           Mode, RngStream&) const {
  LossAndGradient out;
  out.gradient.assign(dim_, 0.0);
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i : samples) {
    const double* c = centers_.data() + i * dim_;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double r = x[j] - c[j];
      out.loss += 0.5 * r * r * inv;
      out.gradient[j] += r * inv;
    }
  }
  return out;
}

double QuadraticProblem::train_loss(std::span<const double> x) const {
  std::vector<std::size_t> all(n_);
  for (std::size_t i = 0; i < n_; ++i) all[i] = i;
  RngStream unused(0, StreamId::dropout);
  return gradient(x, all, Mode::eval, unused).loss;
}

double QuadraticProblem::evaluate(std::span<const double> x, EvalMetric metric) const {
  if (metric != EvalMetric::automatic && metric != EvalMetric::loss)
    throw Error(ErrorCode::InvalidArgument, "the quadratic probe only reports loss");
  return train_loss(x);
}

std::shared_ptr<const Problem> make_problem(const ProblemConfig& config) {
  if (config.kind == ProblemKind::quadratic)
    return std::make_shared<QuadraticProblem>(config.n, config.dim, config.noise, config.data_seed);

  ModelSpec spec = config.model;
  Dataset data;
  if (config.kind == ProblemKind::char_lm) {
    auto* lm = std::get_if<TransformerLmSpec>(&spec);
    if (!lm) throw Error(ErrorCode::InvalidSpec, "a char_lm problem needs a transformer model");
    if (config.corpus.empty()) throw Error(ErrorCode::InvalidSpec, "a char_lm problem needs a corpus path");
    std::string text = read_text_file(config.corpus);
    if (config.max_bytes && text.size() > config.max_bytes) text.resize(config.max_bytes);
    TokenizedCorpus corpus = tokenize_corpus(text, lm->seq_len);
    if (lm->vocab_size == 0) lm->vocab_size = corpus.vocab.size();
    if (lm->vocab_size < corpus.vocab.size())
      throw Error(ErrorCode::VocabOverflow, "corpus has " + std::to_string(corpus.vocab.size()) +
                                                " symbols, model vocabulary " + std::to_string(lm->vocab_size));
    data = std::move(corpus.dataset);
  } else {
    auto* mlp = std::get_if<MlpSpec>(&spec);
    if (!mlp) throw Error(ErrorCode::InvalidSpec, "a classification problem needs an mlp model");
    if (config.kind == ProblemKind::synthetic)
      data = synth_classification(config.n, config.dim, config.classes,
                                  RngStream(config.data_seed, StreamId::synthetic), config.separation);
    else
      data = load_idx(config.images, config.labels);
    if (mlp->input_dim == 0) mlp->input_dim = data.input_dim;
    if (mlp->num_classes == 0) mlp->num_classes = data.num_classes;
    if (mlp->input_dim != data.input_dim || mlp->num_classes < data.num_classes)
      throw Error(ErrorCode::InvalidSpec, "model dimensions do not match the dataset");
  }
  auto [train, heldout] = split_holdout(data, config.holdout_fraction);
  return std::make_shared<ModelProblem>(std::move(spec), std::move(train), std::move(heldout));
}

}  // namespace optlab
