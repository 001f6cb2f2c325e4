#pragma once

// Train/val/test pair pools built from a config: a fixed synthetic pool or
// patient volumes split at the patient level.

#include <string>
#include <vector>

#include "mrtrans/config.hpp"
#include "mrtrans/data.hpp"
#include "mrtrans/volume_io.hpp"

namespace mrtrans {

enum class Split { train, val, test };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

struct PairDataset {
  std::vector<SlicePair> train, val, test;
  PatientSplit patients;  // empty for synthetic data

  const std::vector<SlicePair>& split(Split s) const {
    return s == Split::train ? train : (s == Split::val ? val : test);
  }
};

namespace dataset_detail {
inline constexpr std::uint64_t kSyntheticStream = 0x5f1;
}

/// Synthetic pool: pair k of split s comes from its own derived generator, so
/// pools of different sizes share their leading pairs.
inline PairDataset synthetic_dataset(std::uint64_t seed, int size, int n_train, int n_val, int n_test) {
  PairDataset d;
  auto fill = [&](std::vector<SlicePair>& out, int n, std::uint64_t split) {
    for (int k = 0; k < n; ++k) {
      auto rng = derive_rng(seed, dataset_detail::kSyntheticStream, split, static_cast<std::uint64_t>(k));
      out.push_back(make_synthetic_pair(rng, size));
    }
  };
  fill(d.train, n_train, 0);
  fill(d.val, n_val, 1);
  fill(d.test, n_test, 2);
  return d;
}

inline std::vector<SlicePair> load_patient_pairs(const io::PatientFiles& p, float threshold) {
  const Volume3D src = normalize_volume(io::read_volume(p.source));
  const Volume3D tgt = normalize_volume(io::read_volume(p.target));
  return slice_pairs(src, tgt, threshold);
}

inline PairDataset volume_dataset(const DataConfig& cfg, std::uint64_t seed) {
  const auto files = io::scan_patients(cfg.root, cfg.source_modality, cfg.target_modality);
  if (files.empty()) throw std::runtime_error("no patients with both modalities under " + cfg.root);
  std::vector<std::string> ids;
  for (const auto& f : files) ids.push_back(f.id);
  PairDataset d;
  d.patients = split_patients(ids, cfg.split, seed);
  auto load = [&](const std::vector<std::string>& group, std::vector<SlicePair>& out) {
    for (const auto& id : group) {
      const auto it = std::find_if(files.begin(), files.end(), [&](const auto& f) { return f.id == id; });
      for (auto& pair : load_patient_pairs(*it, cfg.blank_threshold)) {
        if (pair.source.rows() != cfg.image_size || pair.source.cols() != cfg.image_size)
          throw std::runtime_error("patient " + id + ": slices are " + std::to_string(pair.source.rows()) + "x" +
                                   std::to_string(pair.source.cols()) + " but data.image_size is " +
                                   std::to_string(cfg.image_size));
        out.push_back(std::move(pair));
      }
    }
  };
  load(d.patients.train, d.train);
  load(d.patients.val, d.val);
  load(d.patients.test, d.test);
  return d;
}

inline PairDataset load_dataset(const ExperimentConfig& c) {
  if (c.data.synthetic)
    return synthetic_dataset(c.seed, c.data.image_size, c.data.train_pairs, c.data.val_pairs, c.data.test_pairs);
  return volume_dataset(c.data, c.seed);
}

struct SplitCounts {
  std::size_t patients = 0;
  std::size_t slices = 0;
};

struct DatasetInspection {
  std::size_t patients_found = 0;
  SplitCounts train, val, test;
};

/// Counts patients and retained slices per split without keeping the slices.
inline DatasetInspection inspect_dataset(const DataConfig& cfg, std::uint64_t seed) {
  const auto files = io::scan_patients(cfg.root, cfg.source_modality, cfg.target_modality);
  std::vector<std::string> ids;
  for (const auto& f : files) ids.push_back(f.id);
  DatasetInspection out;
  out.patients_found = files.size();
  if (files.empty()) return out;
  const PatientSplit split = split_patients(ids, cfg.split, seed);
  auto count = [&](const std::vector<std::string>& group, SplitCounts& c) {
    c.patients = group.size();
    for (const auto& id : group) {
      const auto it = std::find_if(files.begin(), files.end(), [&](const auto& f) { return f.id == id; });
      c.slices += load_patient_pairs(*it, cfg.blank_threshold).size();
    }
  };
  count(split.train, out.train);
  count(split.val, out.val);
  count(split.test, out.test);
  return out;
}

}  // namespace mrtrans
