#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "ipreid/datasets.hpp"
#include "ipreid/models.hpp"

namespace ipreid {

struct TranslationJob {
  ModelParams generator;
  DatasetManifest source;
  std::vector<int> target_cameras;  // non-empty, each in [1, L]
  std::filesystem::path out_dir;
  long seed = 0;

  void validate() const;
};

// Styles every source image toward each requested target camera; outputs
// inherit the source identity label and record their provenance. The
// source-style fake (domain 0) is never generated.
DatasetManifest translate_dataset(const TranslationJob& job);

// Same pipeline with an arbitrary single-image transform standing in for the
// generator (used to validate the quantization path in isolation).
using TranslateFn = std::function<Tensor(const Tensor& image, int target_camera)>;
DatasetManifest translate_dataset_with(const TranslateFn& fn, const DatasetManifest& source,
                                       const std::vector<int>& target_cameras,
                                       int num_cameras_out,
                                       const std::filesystem::path& out_dir);

}  // namespace ipreid
