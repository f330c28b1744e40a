#include "optlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "optlab/error.hpp"

namespace optlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::GraphConsumed: return "GraphConsumed";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::VocabOverflow: return "VocabOverflow";
    case ErrorCode::ZeroGradient: return "ZeroGradient";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::TrimTooLarge: return "TrimTooLarge";
    case ErrorCode::BatchTooLarge: return "BatchTooLarge";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::LadderTooTall: return "LadderTooTall";
    case ErrorCode::AllDiverged: return "AllDiverged";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptySelection: return "EmptySelection";
  }
  return "Unknown";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
    throw Error(ErrorCode::ShapeMismatch, "zero-length dimension in " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                              " does not match shape " + shape_string(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw Error(ErrorCode::NotScalar, "item() on " + shape_string(shape_));
  return data_[0];
}

std::span<double> Tensor::mutable_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw Error(ErrorCode::ShapeMismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::check_finite(const char* context) const {
  // x * 0 is 0 for finite x and NaN otherwise, so one vectorizable sum suffices.
  double probe = 0.0;
  for (double v : data_) probe += v * 0.0;
  if (probe != 0.0 || std::isnan(probe))
    throw Error(ErrorCode::NonFinite, std::string(context) + " produced NaN/Inf");
}

}  // namespace optlab
