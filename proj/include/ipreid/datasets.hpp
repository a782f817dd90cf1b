#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ipreid/rng.hpp"
#include "ipreid/tensor.hpp"

namespace ipreid {

enum class Split { kTrain, kQuery, kGallery };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct ImageRecord {
  std::string image_ref;  // path, possibly relative to the manifest directory
  int identity = 0;       // >= 0; -1 marks junk/distractor (gallery only)
  int camera = 1;         // [1, L]
  Split split = Split::kTrain;
  bool is_synthetic = false;
  std::string provenance;  // empty = none

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  int num_cameras = 0;    // L
  int num_identities = 0; // N: distinct non-negative identities among train records
  int height = 0, width = 0, channels = 0;
  std::string name;
  std::optional<long> seed;
  std::filesystem::path base_dir;  // resolution root for relative refs; not serialized

  void validate() const;
  std::filesystem::path resolve(const ImageRecord& r) const;

  // Serialized fields only (base_dir excluded).
  bool equals(const DatasetManifest& other) const;
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Image I/O: binary PPM (P6) / PGM (P5), 8-bit; tensor value = p / 127.5 - 1.

void save_image(const Tensor& img, const std::filesystem::path& path);
Tensor load_image(const std::filesystem::path& path, int height, int width,
                  int channels);
Tensor load_record_image(const DatasetManifest& m, std::size_t index);
// All records of a manifest stacked into one (N, C, H, W) tensor.
Tensor load_all_images(const DatasetManifest& m);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct GlyphParams {
  int pattern = 0;     // shape family
  double hue = 0.0;    // base color hue, degrees
  double sat = 1.0;    // color saturation [0,1]
  double size = 0.6;   // glyph extent relative to image
  double aspect = 1.0; // width/height ratio of the glyph
  double phase = 0.0;  // stripe/checker phase offset

  bool operator==(const GlyphParams&) const = default;
};

struct CameraStyleParams {
  double hue_degrees = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;
  double noise_sigma = 0.0;

  bool operator==(const CameraStyleParams&) const = default;
};

struct SyntheticSpec {
  int num_identities = 20;  // per side; source and target identity sets are disjoint
  int num_cameras = 4;      // per side; source and target style families are disjoint
  int images_per_identity_per_camera = 2;
  int height = 32, width = 16, channels = 3;
  std::vector<GlyphParams> source_glyphs, target_glyphs;        // per identity
  std::vector<CameraStyleParams> source_styles, target_styles;  // per camera

  // Populates empty glyph/style tables with the built-in disjoint families.
  void fill_defaults();
  void validate() const;
};

struct SyntheticDataset {
  DatasetManifest source_train, target_train, query, gallery;
};

// Deterministic for fixed (spec, seed); images written under out_dir.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, long seed,
                                            const std::filesystem::path& out_dir);

// hue rotation, then contrast gain, then brightness offset, then additive
// Gaussian noise, then clamp to [-1, 1]. camera is a 1-based index into styles.
Tensor apply_camera_style(const Tensor& image, int camera,
                          const std::vector<CameraStyleParams>& styles, Rng& noise_rng);

// Renders one glyph image (1, C, H, W) on a light background; jitter_rng
// drives the per-image geometry jitter.
Tensor render_glyph(const GlyphParams& glyph, int height, int width, int channels,
                    Rng& jitter_rng);

// ---------------------------------------------------------------------------
// Real-layout ingestion

// "<id>_c<camera>..." with id a possibly zero-padded integer or -1.
std::pair<int, int> parse_reid_filename(const std::string& name);

struct IngestedDataset {
  DatasetManifest train, query, gallery;
};

// Directory tree with bounding_box_train/, query/, bounding_box_test/.
IngestedDataset ingest_real_layout(const std::filesystem::path& root,
                                   const std::string& name, int height, int width,
                                   int channels);

}  // namespace ipreid
