#include "optlab/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

#include "optlab/error.hpp"

namespace optlab {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at) {
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch b;
  b.size = indices.size();
  if (kind == DatasetKind::classification) {
    b.features = Tensor(Shape{indices.size(), input_dim});
    auto dst = b.features.data();
    b.targets.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t i = indices[r];
      std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(i * input_dim), input_dim,
                  dst.begin() + static_cast<std::ptrdiff_t>(r * input_dim));
      b.targets.push_back(labels[i]);
    }
  } else {
    b.tokens.reserve(indices.size() * seq_len);
    b.targets.reserve(indices.size() * seq_len);
    for (std::size_t i : indices) {
      const auto from = static_cast<std::ptrdiff_t>(i * seq_len);
      const auto to = from + static_cast<std::ptrdiff_t>(seq_len);
      b.tokens.insert(b.tokens.end(), tokens.begin() + from, tokens.begin() + to);
      b.targets.insert(b.targets.end(), targets.begin() + from, targets.begin() + to);
    }
  }
  return b;
}

Batch Dataset::gather_range(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), first);
  return gather(idx);
}

Dataset Dataset::prefix(std::size_t count) const {
  if (count > n_samples) throw Error(ErrorCode::InvalidArgument, "prefix longer than dataset");
  Dataset d = *this;
  d.n_samples = count;
  if (kind == DatasetKind::classification) {
    d.inputs.resize(count * input_dim);
    d.labels.resize(count);
  } else {
    d.tokens.resize(count * seq_len);
    d.targets.resize(count * seq_len);
  }
  return d;
}

Dataset Dataset::suffix(std::size_t first) const {
  if (first > n_samples) throw Error(ErrorCode::InvalidArgument, "suffix starts past the end");
  Dataset d = *this;
  d.n_samples = n_samples - first;
  auto drop = [](auto& v, std::size_t n) { v.erase(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)); };
  if (kind == DatasetKind::classification) {
    drop(d.inputs, first * input_dim);
    drop(d.labels, first);
  } else {
    drop(d.tokens, first * seq_len);
    drop(d.targets, first * seq_len);
  }
  return d;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "held-out fraction must be in [0,1)");
  const auto held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.n_samples)));
  const std::size_t train = data.n_samples - held;
  if (train == 0) throw Error(ErrorCode::InvalidArgument, "held-out split leaves no training data");
  return {data.prefix(train), data.suffix(train)};
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "missing IDX magic");
  const std::uint32_t magic = read_be32(bytes, 0);
  const std::uint32_t ndims = magic & 0xFF;
  if ((magic >> 8) != 0x08 || ndims == 0)
    throw Error(ErrorCode::BadMagic, "unsupported IDX magic 0x" + [&] {
      char buf[9];
      std::snprintf(buf, sizeof buf, "%08X", magic);
      return std::string(buf);
    }());
  const std::size_t header = 4 + 4 * std::size_t{ndims};
  if (bytes.size() < header) throw Error(ErrorCode::TruncatedFile, "IDX header cut short");
  IdxArray out;
  std::size_t count = 1;
  for (std::uint32_t d = 0; d < ndims; ++d) {
    out.dims.push_back(read_be32(bytes, 4 + 4 * d));
    count *= out.dims.back();
  }
  if (bytes.size() < header + count)
    throw Error(ErrorCode::TruncatedFile, "IDX body has " + std::to_string(bytes.size() - header) +
                                              " bytes, header declares " + std::to_string(count));
  if (bytes.size() > header + count)
    throw Error(ErrorCode::TruncatedFile, "trailing bytes after IDX payload");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& array) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * array.dims.size() + array.data.size());
  append_be32(out, 0x0800u | static_cast<std::uint32_t>(array.dims.size()));
  for (auto d : array.dims) append_be32(out, d);
  out.insert(out.end(), array.data.begin(), array.data.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) { return parse_idx(read_bytes(path)); }

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = serialize_idx(array);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_bytes(images);
  const auto label_bytes = read_bytes(labels);
  if (image_bytes.size() >= 4 && read_be32(image_bytes, 0) != kImageMagic)
    throw Error(ErrorCode::BadMagic, images.string() + " is not an IDX image file");
  if (label_bytes.size() >= 4 && read_be32(label_bytes, 0) != kLabelMagic)
    throw Error(ErrorCode::BadMagic, labels.string() + " is not an IDX label file");
  const IdxArray img = parse_idx(image_bytes);
  const IdxArray lab = parse_idx(label_bytes);
  if (img.dims[0] != lab.dims[0])
    throw Error(ErrorCode::CountMismatch, std::to_string(img.dims[0]) + " images but " +
                                              std::to_string(lab.dims[0]) + " labels");
  if (img.dims[0] == 0) throw Error(ErrorCode::CountMismatch, "IDX files contain no samples");

  Dataset d;
  d.kind = DatasetKind::classification;
  d.n_samples = img.dims[0];
  d.input_dim = std::size_t{img.dims[1]} * img.dims[2];
  d.inputs.reserve(img.data.size());
  for (auto px : img.data) d.inputs.push_back(px / 255.0);
  d.labels.assign(lab.data.begin(), lab.data.end());
  const auto top = *std::max_element(d.labels.begin(), d.labels.end());
  d.num_classes = std::max<std::size_t>(2, std::size_t{top} + 1);
  return d;
}

TokenizedCorpus tokenize_corpus(std::string_view text, std::size_t seq_len) {
  if (seq_len == 0) throw Error(ErrorCode::InvalidArgument, "seq_len must be positive");
  if (text.size() < seq_len + 1)
    throw Error(ErrorCode::CorpusTooSmall, "corpus of " + std::to_string(text.size()) +
                                               " bytes cannot fill one window of " +
                                               std::to_string(seq_len));
  TokenizedCorpus out;
  std::array<bool, 256> seen{};
  for (char c : text) seen[static_cast<std::uint8_t>(c)] = true;
  out.vocab.ids.fill(-1);
  for (std::size_t b = 0; b < 256; ++b) {
    if (!seen[b]) continue;
    out.vocab.ids[b] = static_cast<std::int32_t>(out.vocab.symbols.size());
    out.vocab.symbols.push_back(static_cast<std::uint8_t>(b));
  }

  Dataset& d = out.dataset;
  d.kind = DatasetKind::language_modeling;
  d.seq_len = seq_len;
  d.vocab_size = out.vocab.size();
  d.n_samples = (text.size() - 1) / seq_len;
  const std::size_t used = d.n_samples * seq_len;
  auto id = [&](std::size_t i) {
    return static_cast<std::uint32_t>(out.vocab.ids[static_cast<std::uint8_t>(text[i])]);
  };
  d.tokens.reserve(used);
  d.targets.reserve(used);
  for (std::size_t i = 0; i < used; ++i) {
    d.tokens.push_back(id(i));
    d.targets.push_back(id(i + 1));
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

namespace {

class TextGrammar {
 public:
  explicit TextGrammar(RngStream& rng) : rng_(rng) {
    nouns_ = lexicon(600, 1, 3);
    verbs_ = lexicon(300, 1, 2);
    adjectives_ = lexicon(200, 1, 2);
    for (auto& v : verbs_)
      if (rng_.uniform() < 0.4) v += rng_.uniform() < 0.5 ? "s" : "ed";
    for (auto& a : adjectives_)
      if (rng_.uniform() < 0.3) a += "y";
  }

  void sentence(std::string& out) {
    std::string s;
    clause(s);
    if (rng_.uniform() < 0.3) {
      s += ", ";
      s += pick_uniform(kConjunctions);
      s += ' ';
      clause(s);
    }
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    const double u = rng_.uniform();
    s += u < 0.8 ? '.' : u < 0.9 ? '?' : '!';
    out += s;
  }

 private:
  static constexpr const char* kOnsets[] = {"b",  "c",  "d",  "f",  "g",  "h",  "j",  "k",  "l",  "m",  "n",
                                            "p",  "r",  "s",  "t",  "v",  "w",  "z",  "br", "cl", "dr", "fl",
                                            "gr", "pl", "pr", "sh", "st", "th", "tr", ""};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "ou", "oo", "y"};
  static constexpr const char* kCodas[] = {"", "", "", "n", "r", "s", "t", "l", "nd", "st", "ck", "m"};
  static constexpr const char* kDeterminers[] = {"the", "a", "this", "every", "some", "no", "my", "our", "that"};
  static constexpr const char* kPrepositions[] = {"of", "in", "on", "with", "under", "near", "from", "over", "to"};
  static constexpr const char* kConjunctions[] = {"and", "but", "while", "because", "so"};

  template <std::size_t N>
  const char* pick_uniform(const char* const (&list)[N]) {
    return list[rng_.uniform_index(N)];
  }

  std::vector<std::string> lexicon(std::size_t count, std::size_t min_syl, std::size_t max_syl) {
    std::vector<std::string> words;
    while (words.size() < count) {
      std::string w;
      const std::size_t syl = min_syl + rng_.uniform_index(max_syl - min_syl + 1);
      for (std::size_t i = 0; i < syl; ++i) {
        w += pick_uniform(kOnsets);
        w += pick_uniform(kVowels);
        if (i + 1 == syl || rng_.uniform() < 0.3) w += pick_uniform(kCodas);
      }
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    }
    return words;
  }

  // Zipf(1.1) rank over a list.
  const std::string& zipf(const std::vector<std::string>& words, std::vector<double>& cdf) {
    if (cdf.empty()) {
      double total = 0.0;
      for (std::size_t r = 1; r <= words.size(); ++r) cdf.push_back(total += std::pow(static_cast<double>(r), -1.1));
      for (double& c : cdf) c /= total;
    }
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), rng_.uniform());
    return words[std::min<std::size_t>(it - cdf.begin(), words.size() - 1)];
  }

  void noun_phrase(std::string& s, int depth) {
    s += pick_uniform(kDeterminers);
    s += ' ';
    if (rng_.uniform() < 0.4) {
      s += zipf(adjectives_, adjective_cdf_);
      s += ' ';
    }
    s += zipf(nouns_, noun_cdf_);
    if (depth < 2 && rng_.uniform() < 0.25) {
      s += ' ';
      s += pick_uniform(kPrepositions);
      s += ' ';
      noun_phrase(s, depth + 1);
    }
  }

  void clause(std::string& s) {
    noun_phrase(s, 0);
    s += ' ';
    s += zipf(verbs_, verb_cdf_);
    if (rng_.uniform() < 0.7) {
      s += ' ';
      noun_phrase(s, 1);
    }
    if (rng_.uniform() < 0.3) {
      s += ' ';
      s += pick_uniform(kPrepositions);
      s += ' ';
      noun_phrase(s, 1);
    }
  }

  RngStream& rng_;
  std::vector<std::string> nouns_, verbs_, adjectives_;
  std::vector<double> noun_cdf_, verb_cdf_, adjective_cdf_;
};

}  // namespace

std::string synthetic_text(std::size_t bytes, RngStream rng) {
  TextGrammar grammar(rng);
  std::string out;
  out.reserve(bytes + 256);
  while (out.size() < bytes) {
    const std::size_t sentences = 3 + rng.uniform_index(6);
    for (std::size_t i = 0; i < sentences; ++i) {
      if (i) out += ' ';
      grammar.sentence(out);
    }
    out += '\n';
  }
  out.resize(bytes);
  return out;
}

std::string_view to_string(BatchLabel label) {
  switch (label) {
    case BatchLabel::S: return "S";
    case BatchLabel::M: return "M";
    case BatchLabel::L: return "L";
    case BatchLabel::XL: return "XL";
    case BatchLabel::Full: return "Full";
  }
  return "?";
}

BatchLabel parse_batch_label(std::string_view text) {
  for (auto label : kBatchLabels)
    if (to_string(label) == text) return label;
  throw Error(ErrorCode::InvalidArgument, "unknown batch label '" + std::string(text) + "'");
}

std::size_t trim_for_even_division(std::size_t n_samples, std::size_t batch_size, bool full) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  if (batch_size > n_samples)
    throw Error(ErrorCode::BatchTooLarge, "batch of " + std::to_string(batch_size) + " exceeds " +
                                              std::to_string(n_samples) + " samples");
  const std::size_t dropped = n_samples % batch_size;
  const double share = static_cast<double>(dropped) / static_cast<double>(n_samples);
  if (full && share > kMaxFullTrim)
    throw Error(ErrorCode::TrimTooLarge, "dividing " + std::to_string(n_samples) + " samples by " +
                                             std::to_string(batch_size) + " drops " +
                                             std::to_string(dropped));
  return n_samples - dropped;
}

std::span<const std::size_t> BatchPlan::batch(std::size_t i) const {
  if (i >= num_batches()) throw Error(ErrorCode::InvalidArgument, "batch index out of range");
  return std::span<const std::size_t>(order).subspan(i * batch_size, batch_size);
}

BatchPlan make_batches(std::size_t n_samples, std::size_t batch_size, std::uint64_t epoch_index,
                       const RngStream& rng, bool full, std::size_t micro_batch) {
  BatchPlan plan;
  std::size_t kept = 0;
  if (full) {
    plan.micro_batch = micro_batch ? micro_batch : n_samples;
    kept = trim_for_even_division(n_samples, plan.micro_batch, true);
    plan.batch_size = kept;
  } else {
    kept = trim_for_even_division(n_samples, batch_size, false);
    plan.batch_size = batch_size;
    plan.micro_batch = micro_batch ? micro_batch : batch_size;
    if (batch_size % plan.micro_batch != 0)
      throw Error(ErrorCode::InvalidArgument, "micro-batch must divide the batch size");
  }
  plan.dropped = n_samples - kept;
  plan.order.resize(kept);
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  if (full) return plan;  // one batch either way; canonical order keeps the sum reproducible
  RngStream shuffle = rng.derive(epoch_index);
  for (std::size_t i = kept; i > 1; --i) std::swap(plan.order[i - 1], plan.order[shuffle.uniform_index(i)]);
  return plan;
}

Dataset synth_classification(std::size_t n, std::size_t dim, std::size_t classes, RngStream rng,
                             double separation) {
  if (classes < 2 || n < classes || dim < classes)
    throw Error(ErrorCode::InvalidArgument, "synthetic data needs n >= classes >= 2 and dim >= classes");
  Dataset d;
  d.kind = DatasetKind::classification;
  d.n_samples = n;
  d.input_dim = dim;
  d.num_classes = classes;
  d.inputs.resize(n * dim);
  d.labels.resize(n);
  const double offset = separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(i % classes);
    d.labels[i] = label;
    for (std::size_t j = 0; j < dim; ++j)
      d.inputs[i * dim + j] = rng.normal() + (j == label ? offset : 0.0);
  }
  return d;
}

}  // namespace optlab
