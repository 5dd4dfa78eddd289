#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "batod/errors.hpp"
#include "batod/image.hpp"
#include "batod/rng.hpp"

namespace batod {

/// A float image with its 1-based class label.
struct LabeledSample {
  Image image;
  int label = 0;  // in [1, K]
};

using SampleList = std::vector<LabeledSample>;

struct ManifestRow {
  std::string relative_path;
  int label = 0;
  std::string split;  // train | test | synthetic
};

inline bool valid_split_tag(const std::string& s) {
  return s == "train" || s == "test" || s == "synthetic";
}

/// Parses a dataset manifest: UTF-8 text, one record per line,
/// `relative_path<TAB>label<TAB>split`. Does not touch the images.
inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::missing_file, "cannot open manifest " + manifest_path.string());

  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      fail(ErrorCode::config_error, "manifest line " + std::to_string(lineno) +
                                        " is not path<TAB>label<TAB>split");
    ManifestRow row;
    row.relative_path = line.substr(0, t1);
    const std::string label_str = line.substr(t1 + 1, t2 - t1 - 1);
    row.split = line.substr(t2 + 1);
    try {
      row.label = std::stoi(label_str);
    } catch (const std::exception&) {
      fail(ErrorCode::bad_label, "non-integer label '" + label_str + "' at manifest line " +
                                     std::to_string(lineno));
    }
    if (row.label < 1)
      fail(ErrorCode::bad_label, "label must be >= 1, got " + std::to_string(row.label) +
                                     " at manifest line " + std::to_string(lineno));
    if (!valid_split_tag(row.split))
      fail(ErrorCode::config_error,
           "unknown split tag '" + row.split + "' at manifest line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::empty_manifest, "manifest is empty: " + manifest_path.string());
  return rows;
}

inline void write_manifest(const std::filesystem::path& manifest_path,
                           const std::vector<ManifestRow>& rows) {
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write manifest " + manifest_path.string());
  for (const auto& r : rows) out << r.relative_path << '\t' << r.label << '\t' << r.split << '\n';
  if (!out) fail(ErrorCode::io_error, "short write on " + manifest_path.string());
}

/// Loads every sample referenced by a manifest, in manifest order. Image paths
/// resolve relative to the manifest's directory. Labels must cover 1..K with
/// no gaps; K is the maximum label. All samples must share one shape.
inline std::pair<SampleList, int> load_dataset(const std::filesystem::path& manifest_path) {
  const auto rows = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();

  int k = 0;
  for (const auto& r : rows) k = std::max(k, r.label);
  std::vector<char> seen(static_cast<std::size_t>(k) + 1, 0);
  for (const auto& r : rows) seen[static_cast<std::size_t>(r.label)] = 1;
  for (int j = 1; j <= k; ++j)
    if (!seen[static_cast<std::size_t>(j)])
      fail(ErrorCode::label_gap, "no samples with label " + std::to_string(j) +
                                     " although max label is " + std::to_string(k));

  SampleList samples;
  samples.reserve(rows.size());
  for (const auto& r : rows) {
    LabeledSample s;
    s.image = read_pnm(base / r.relative_path);
    s.label = r.label;
    if (!samples.empty() && !s.image.same_shape(samples.front().image))
      fail(ErrorCode::shape_mismatch, "image shape differs within dataset: " + r.relative_path);
    samples.push_back(std::move(s));
  }
  return {std::move(samples), k};
}

/// Loads only rows whose split tag matches `split`.
inline std::pair<SampleList, int> load_dataset(const std::filesystem::path& manifest_path,
                                               const std::string& split) {
  auto rows = read_manifest(manifest_path);
  std::erase_if(rows, [&](const ManifestRow& r) { return r.split != split; });
  if (rows.empty())
    fail(ErrorCode::empty_manifest,
         "manifest has no rows with split '" + split + "': " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  int k = 0;
  for (const auto& r : rows) k = std::max(k, r.label);
  SampleList samples;
  samples.reserve(rows.size());
  for (const auto& r : rows) {
    LabeledSample s;
    s.image = read_pnm(base / r.relative_path);
    s.label = r.label;
    samples.push_back(std::move(s));
  }
  return {std::move(samples), k};
}

/// The attacker's view of the training data: the available 10% and the rest.
struct DatasetSplits {
  SampleList available;    // D_a
  SampleList unavailable;  // D_u
  std::vector<std::size_t> available_indices;  // indices into the source list
  int class_count = 0;
  std::uint64_t seed = 0;
};

/// Stratified split: per class, round(fraction * class size) samples go to the
/// available set, drawn by a seeded shuffle of the class's indices.
inline DatasetSplits split_available(const SampleList& dataset, double fraction,
                                     std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::precondition,
          "fraction must lie in (0,1), got " + std::to_string(fraction));
  require(!dataset.empty(), ErrorCode::precondition, "dataset is empty");

  int k = 0;
  for (const auto& s : dataset) k = std::max(k, s.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k) + 1);
  for (std::size_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset[i].label)].push_back(i);

  const std::size_t min_class = static_cast<std::size_t>(std::ceil(1.0 / fraction));
  std::vector<char> chosen(dataset.size(), 0);
  for (int j = 1; j <= k; ++j) {
    auto& idx = by_class[static_cast<std::size_t>(j)];
    if (idx.size() < min_class)
      fail(ErrorCode::precondition, "class " + std::to_string(j) + " has " +
                                        std::to_string(idx.size()) +
                                        " samples, too few to stratify at fraction " +
                                        std::to_string(fraction));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
    rng.shuffle(idx);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t t = 0; t < take; ++t) chosen[idx[t]] = 1;
  }

  DatasetSplits out;
  out.class_count = k;
  out.seed = seed;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (chosen[i]) {
      out.available.push_back(dataset[i]);
      out.available_indices.push_back(i);
    } else {
      out.unavailable.push_back(dataset[i]);
    }
  }
  return out;
}

/// The poisoning scheme replicates each selected sample K times, and the
/// out-poison set must fit in half of the available data, hence 2K^2 <= |D_a|.
inline void validate_capacity(int class_count, std::size_t n_available) {
  require(class_count >= 2, ErrorCode::precondition, "need at least 2 classes");
  require(n_available >= 1, ErrorCode::precondition, "available set is empty");
  const std::uint64_t need = 2ULL * static_cast<std::uint64_t>(class_count) * class_count;
  if (need > n_available)
    fail(ErrorCode::capacity, "2*K^2 = " + std::to_string(need) + " exceeds |D_a| = " +
                                  std::to_string(n_available) + " (K = " +
                                  std::to_string(class_count) + ")");
}

}  // namespace batod
