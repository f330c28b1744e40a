#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optlab/models.hpp"
#include "optlab/rng.hpp"

namespace optlab {

enum class DatasetKind { classification, language_modeling };

/// Immutable after construction. Classification samples are rows of
/// `inputs` [n_samples, input_dim]; language-modeling samples are windows of
/// `seq_len` tokens with next-token targets, both stored row-major.
struct Dataset {
  DatasetKind kind = DatasetKind::classification;
  std::size_t n_samples = 0;

  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> inputs;
  std::vector<std::uint32_t> labels;

  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint32_t> targets;

  /// Copies the listed samples, in order, into a model batch.
  Batch gather(std::span<const std::size_t> indices) const;
  Batch gather_range(std::size_t first, std::size_t count) const;
  /// The first `count` samples of the canonical order as a new dataset.
  Dataset prefix(std::size_t count) const;
  /// Samples [first, n_samples).
  Dataset suffix(std::size_t first) const;
};

/// Splits off the last `fraction` of the canonical order as held-out data.
/// Returns {train, heldout}; heldout is empty-sized (n_samples 0) when the
/// fraction rounds to no samples.
std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction);

/// An unsigned-byte IDX array: big-endian magic 0x000008NN where NN is the
/// number of dimensions, then NN big-endian u32 sizes, then the payload.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  bool operator==(const IdxArray&) const = default;
};

/// Throws BadMagic or TruncatedFile (also for trailing bytes after the payload).
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& array);
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Images (magic 0x803, [count, rows, cols]) scaled to [0,1] and labels
/// (magic 0x801). Throws BadMagic, TruncatedFile, CountMismatch, IoError.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Byte-level vocabulary: the sorted set of distinct bytes in the corpus.
struct Vocabulary {
  std::vector<std::uint8_t> symbols;
  std::array<std::int32_t, 256> ids{};

  std::size_t size() const noexcept { return symbols.size(); }
};

struct TokenizedCorpus {
  Dataset dataset;
  Vocabulary vocab;
};

/// floor((len - 1) / seq_len) non-overlapping windows; the partial tail is
/// discarded. Throws CorpusTooSmall when len < seq_len + 1.
TokenizedCorpus tokenize_corpus(std::string_view text, std::size_t seq_len);

std::string read_text_file(const std::filesystem::path& path);

/// English-like text from a small phrase grammar over an invented lexicon
/// with Zipf-distributed word choice. Exactly `bytes` long, ASCII only.
std::string synthetic_text(std::size_t bytes, RngStream rng);

enum class BatchLabel { S, M, L, XL, Full };

std::string_view to_string(BatchLabel label);
/// Throws InvalidArgument.
BatchLabel parse_batch_label(std::string_view text);
inline constexpr std::array<BatchLabel, 5> kBatchLabels{BatchLabel::S, BatchLabel::M, BatchLabel::L,
                                                        BatchLabel::XL, BatchLabel::Full};

inline constexpr double kMaxFullTrim = 0.005;

/// Largest multiple of `batch_size` not exceeding n_samples. For a Full
/// plan `batch_size` is the accumulation micro-batch and a trim above 0.5%
/// raises TrimTooLarge. Throws BatchTooLarge when batch_size > n_samples.
std::size_t trim_for_even_division(std::size_t n_samples, std::size_t batch_size, bool full);

/// One epoch of minibatches over the kept samples.
struct BatchPlan {
  std::size_t batch_size = 0;
  std::size_t micro_batch = 0;
  std::size_t dropped = 0;
  std::vector<std::size_t> order;

  std::size_t num_batches() const noexcept { return batch_size ? order.size() / batch_size : 0; }
  std::span<const std::size_t> batch(std::size_t i) const;
};

/// Trims the tail of the canonical order, then shuffles the kept indices with
/// a stream derived from `rng` and `epoch_index`. A Full plan has one
/// unshuffled batch of all kept samples, evaluated in micro-batches of
/// `micro_batch`; other
/// plans use micro_batch == batch_size unless a divisor is given.
BatchPlan make_batches(std::size_t n_samples, std::size_t batch_size, std::uint64_t epoch_index,
                       const RngStream& rng, bool full = false, std::size_t micro_batch = 0);
inline BatchPlan make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t epoch_index,
                              const RngStream& rng, bool full = false, std::size_t micro_batch = 0) {
  return make_batches(data.n_samples, batch_size, epoch_index, rng, full, micro_batch);
}

/// Gaussian blobs with unit covariance, class k centred at
/// (separation / sqrt 2) e_k so every pair of means is `separation` apart.
/// Sample i has label i mod classes. Requires dim >= classes.
Dataset synth_classification(std::size_t n, std::size_t dim, std::size_t classes, RngStream rng,
                             double separation = 6.0);

}  // namespace optlab
