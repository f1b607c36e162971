#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "eened/errors.hpp"
#include "eened/model.hpp"
#include "eened/rng.hpp"

namespace eened {

struct RawRecord {
  std::string id;
  std::vector<double> features;
  int label5 = 0;
};

/// Comma-separated, '.' decimal point, optional header row and leading id column.
/// The last column is always the 1..5 class label.
struct CsvOptions {
  bool has_header = true;
  bool id_column = true;
};

namespace detail {

inline std::string_view trim_field(std::string_view f) {
  while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
  while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
  return f;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim_field(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Rounds to the nearest float. The volatile store keeps GCC 11's SLP
/// vectorizer from folding adjacent double->float->double pairs away.
inline double round_to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Parses CSV text; `source` names the input in diagnostics.
inline std::vector<RawRecord> parse_csv_text(std::string_view text, CsvOptions opts, const std::string& source = "csv") {
  std::vector<RawRecord> records;
  std::size_t expected_cols = 0;
  std::size_t line_no = 0;
  bool header_pending = opts.has_header;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto fields = detail::split_fields(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (expected_cols == 0) {
      expected_cols = fields.size();
      const std::size_t fixed = opts.id_column ? 2 : 1;
      if (expected_cols <= fixed) throw DataError(where + ": too few columns (" + std::to_string(expected_cols) + ")");
    } else if (fields.size() != expected_cols) {
      throw DataError(where + ": expected " + std::to_string(expected_cols) + " columns, got " +
                      std::to_string(fields.size()));
    }
    if (header_pending) {
      header_pending = false;
      continue;
    }
    RawRecord rec;
    std::size_t col = 0;
    if (opts.id_column) rec.id = std::string(fields[col++]);
    const std::size_t n_features = expected_cols - col - 1;
    rec.features.reserve(n_features);
    for (std::size_t i = 0; i < n_features; ++i, ++col) {
      auto v = detail::parse_number(fields[col]);
      if (!v) {
        throw DataError(where + ", column " + std::to_string(col + 1) + ": non-numeric feature '" +
                        std::string(fields[col]) + "'");
      }
      rec.features.push_back(*v);
    }
    auto label = detail::parse_number(fields[col]);
    if (!label || *label != std::floor(*label) || *label < 1 || *label > 5) {
      throw DataError(where + ": label must be an integer in 1..5, got '" + std::string(fields[col]) + "'");
    }
    rec.label5 = static_cast<int>(*label);
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw DataError(source + ": no data rows");
  return records;
}

inline std::vector<RawRecord> parse_csv(const std::filesystem::path& path, CsvOptions opts = {}) {
  return parse_csv_text(detail::read_file(path), opts, path.string());
}

/// Class 1 (seizure activity) -> 1, classes 2..5 -> 0.
inline std::vector<std::uint8_t> binarize_labels(std::span<const RawRecord> records) {
  std::vector<std::uint8_t> y;
  y.reserve(records.size());
  for (const auto& r : records) {
    if (r.label5 < 1 || r.label5 > 5) throw DataError("label out of range 1..5: " + std::to_string(r.label5));
    y.push_back(r.label5 == 1 ? 1 : 0);
  }
  return y;
}

enum class Split : std::uint8_t { unassigned = 0, train = 1, test = 2, unused = 3 };

struct Dataset {
  std::size_t t_in = 0;
  std::vector<double> x;  // row-major N × t_in
  std::vector<std::uint8_t> y;
  std::vector<Split> split;
  NormStats norm;
  bool normalized = false;

  std::size_t size() const { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * t_in, t_in}; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  std::size_t count(Split s, int label) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i)
      if (split[i] == s && y[i] == label) ++n;
    return n;
  }

  std::size_t positives() const { return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1)); }
};

inline Dataset make_dataset(std::span<const RawRecord> records) {
  if (records.empty()) throw DataError("no records");
  Dataset ds;
  ds.t_in = records.front().features.size();
  ds.x.reserve(records.size() * ds.t_in);
  for (const auto& r : records) {
    if (r.features.size() != ds.t_in) throw DataError("records differ in feature count");
    ds.x.insert(ds.x.end(), r.features.begin(), r.features.end());
  }
  ds.y = binarize_labels(records);
  ds.split.assign(records.size(), Split::unassigned);
  return ds;
}

/// Per-class row counts for each side of a split.
struct SplitPlan {
  std::size_t train_pos = 0, train_neg = 0, test_pos = 0, test_neg = 0;

  /// 7360 train / 1840 test rows with 1461 test negatives; the train side keeps
  /// the test side's class ratio (1516 = 4 * 379 positives).
  static constexpr SplitPlan published() { return {1516, 5844, 379, 1461}; }

  /// Every row used, `test_fraction` of each class held out.
  static SplitPlan stratified(const Dataset& ds, double test_fraction) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
      throw ConfigError("test fraction must be in (0, 1), got " + std::to_string(test_fraction));
    }
    const std::size_t pos = ds.positives(), neg = ds.size() - pos;
    SplitPlan p;
    p.test_pos = static_cast<std::size_t>(std::llround(static_cast<double>(pos) * test_fraction));
    p.test_neg = static_cast<std::size_t>(std::llround(static_cast<double>(neg) * test_fraction));
    p.train_pos = pos - p.test_pos;
    p.train_neg = neg - p.test_neg;
    return p;
  }

  std::size_t train_size() const { return train_pos + train_neg; }
  std::size_t test_size() const { return test_pos + test_neg; }
};

/// Seeded stratified assignment. Rows beyond the plan are tagged `unused`.
inline void split(Dataset& ds, const SplitPlan& plan, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.y[i] ? pos : neg).push_back(i);
  if (pos.size() < plan.train_pos + plan.test_pos || neg.size() < plan.train_neg + plan.test_neg) {
    throw DataError("dataset too small for split: need " + std::to_string(plan.train_pos + plan.test_pos) +
                    " positives and " + std::to_string(plan.train_neg + plan.test_neg) + " negatives, have " +
                    std::to_string(pos.size()) + " and " + std::to_string(neg.size()));
  }
  const Rng rng = Rng(seed).split("split");
  Rng pos_rng = rng.split("positive"), neg_rng = rng.split("negative");
  pos_rng.shuffle(std::span<std::size_t>(pos));
  neg_rng.shuffle(std::span<std::size_t>(neg));
  ds.split.assign(ds.size(), Split::unused);
  auto assign = [&](const std::vector<std::size_t>& rows, std::size_t n_test, std::size_t n_train) {
    for (std::size_t i = 0; i < n_test; ++i) ds.split[rows[i]] = Split::test;
    for (std::size_t i = n_test; i < n_test + n_train; ++i) ds.split[rows[i]] = Split::train;
  };
  assign(pos, plan.test_pos, plan.train_pos);
  assign(neg, plan.test_neg, plan.train_neg);
}

/// Global z-score of every value using train-split statistics only. Mean and
/// standard deviation are rounded to f32 so a checkpoint can carry them exactly.
inline void normalize(Dataset& ds) {
  if (ds.normalized) throw ContractError("dataset is already normalized");
  const auto train = ds.indices(Split::train);
  if (train.empty()) throw DataError("normalize: train split is empty");
  double total = 0;
  for (auto i : train)
    for (double v : ds.row(i)) total += v;
  const double n = static_cast<double>(train.size() * ds.t_in);
  const double mean = total / n;
  double sq = 0;
  for (auto i : train)
    for (double v : ds.row(i)) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / n);
  if (!(stddev > 0.0) || !std::isfinite(stddev)) throw DataError("normalize: train values have zero variance");
  ds.norm = {detail::round_to_f32(mean), detail::round_to_f32(stddev)};
  for (auto& v : ds.x) v = ds.norm.apply(v);
  ds.normalized = true;
}

struct Batch {
  std::vector<double> x;  // B × t_in
  std::vector<std::uint8_t> y;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

/// One epoch over a split in seeded random order (or index order when unshuffled).
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, Split which, std::size_t batch_size, std::uint64_t shuffle_seed, bool shuffle = true)
      : ds_(&ds), batch_size_(batch_size), order_(ds.indices(which)) {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (order_.empty()) throw DataError("cannot batch an empty split");
    if (shuffle) {
      Rng rng = Rng(shuffle_seed).split("batches");
      rng.shuffle(std::span<std::size_t>(order_));
    }
  }

  std::optional<Batch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
    Batch b;
    for (; pos_ < end; ++pos_) {
      const std::size_t i = order_[pos_];
      b.indices.push_back(i);
      b.y.push_back(ds_->y[i]);
      auto r = ds_->row(i);
      b.x.insert(b.x.end(), r.begin(), r.end());
    }
    return b;
  }

  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline BatchIterator batches(const Dataset& ds, Split which, std::size_t batch_size, std::uint64_t shuffle_seed) {
  return BatchIterator(ds, which, batch_size, shuffle_seed);
}

// Dataset cache layout (little-endian): "EENEDDS1", u64 rows, u64 t_in,
// rows × t_in f32 features, rows u8 labels, rows u8 split tags.
inline constexpr std::string_view kDatasetMagic = "EENEDDS1";

inline void save_dataset_cache(const Dataset& ds, const std::filesystem::path& path) {
  std::string out(kDatasetMagic);
  auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put_u64(ds.size());
  put_u64(ds.t_in);
  for (double v : ds.x) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  for (auto label : ds.y) out.push_back(static_cast<char>(label));
  for (auto tag : ds.split) out.push_back(static_cast<char>(tag));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

inline bool is_dataset_cache(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  char magic[8] = {};
  return f.read(magic, 8) && std::string_view(magic, 8) == kDatasetMagic;
}

inline Dataset load_dataset_cache(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw DataError(path.string() + ": truncated dataset cache");
  };
  need(8);
  if (std::string_view(bytes).substr(0, 8) != kDatasetMagic) throw DataError(path.string() + ": bad dataset magic");
  pos = 8;
  auto get_u64 = [&] {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  };
  Dataset ds;
  const std::uint64_t rows = get_u64();
  ds.t_in = get_u64();
  if (rows == 0 || ds.t_in == 0 || rows > bytes.size() || ds.t_in > bytes.size()) {
    throw DataError(path.string() + ": implausible dataset cache header");
  }
  need(rows * ds.t_in * 4 + rows * 2);
  ds.x.resize(rows * ds.t_in);
  for (auto& v : ds.x) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    v = std::bit_cast<float>(bits);
  }
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto label = static_cast<std::uint8_t>(bytes[pos++]);
    if (label > 1) throw DataError(path.string() + ": label byte must be 0 or 1");
    ds.y.push_back(label);
  }
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto tag = static_cast<std::uint8_t>(bytes[pos++]);
    if (tag > 3) throw DataError(path.string() + ": invalid split tag");
    ds.split.push_back(static_cast<Split>(tag));
  }
  if (pos != bytes.size()) throw DataError(path.string() + ": trailing bytes in dataset cache");
  return ds;
}

/// Synthetic two-class waveforms: positives carry a narrow, tall Gaussian spike,
/// negatives a broad, low bump, both on Gaussian noise. Classes alternate by row.
inline Dataset make_toy_dataset(std::size_t rows, std::size_t t_in, std::uint64_t seed) {
  if (rows < 2 || t_in < 4) throw ConfigError("toy dataset needs at least 2 rows and 4 samples per row");
  Rng rng = Rng(seed).split("toy_dataset");
  Dataset ds;
  ds.t_in = t_in;
  ds.x.reserve(rows * t_in);
  const double len = static_cast<double>(t_in);
  for (std::size_t r = 0; r < rows; ++r) {
    const bool positive = r % 2 == 0;
    const double center = rng.uniform(0.2 * len, 0.8 * len);
    const double width = positive ? 1.5 : 6.0;
    const double amplitude = positive ? 3.0 : 1.5;
    for (std::size_t t = 0; t < t_in; ++t) {
      const double dt = static_cast<double>(t) - center;
      const double clean = amplitude * std::exp(-dt * dt / (2 * width * width));
      ds.x.push_back(40.0 * (clean + 0.5 * rng.normal()) - 5.0);
    }
    ds.y.push_back(positive ? 1 : 0);
  }
  ds.split.assign(rows, Split::unassigned);
  return ds;
}

}  // namespace eened
