#include "ipreid/translation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace ipreid {

namespace fs = std::filesystem;

void TranslationJob::validate() const {
  check_config(!target_cameras.empty(), "translation: target camera list is empty");
  check(generator.arch == "generator", "translation: checkpoint is not a generator");
  GeneratorConfig gcfg = GeneratorConfig::from_json(generator.config);
  const int L = gcfg.num_domains - 1;
  for (int cam : target_cameras) {
    check(cam >= 1 && cam <= L,
          "translation: camera " + std::to_string(cam) +
              " outside the generator's domain vocabulary [1, " + std::to_string(L) + "]");
  }
  check(gcfg.height == source.height && gcfg.width == source.width &&
            gcfg.channels == source.channels,
        "translation: generator input size does not match source manifest");
}

namespace {

DatasetManifest translate_core(const TranslateFn& fn, const DatasetManifest& source,
                               const std::vector<int>& target_cameras, int num_cameras_out,
                               const fs::path& out_dir) {
  fs::create_directories(out_dir / "images");
  DatasetManifest out;
  out.name = source.name + "-translated";
  out.num_cameras = num_cameras_out;
  out.height = source.height;
  out.width = source.width;
  out.channels = source.channels;
  out.seed = source.seed;
  out.base_dir = out_dir;

  for (std::size_t i = 0; i < source.records.size(); ++i) {
    const ImageRecord& src = source.records[i];
    Tensor img = load_record_image(source, i);
    for (int cam : target_cameras) {
      Tensor styled = fn(img, cam);
      check(styled.shape() == img.shape(), "translation: transform changed image shape");
      char buf[96];
      std::snprintf(buf, sizeof(buf), "images/%04d_c%d_%05zu.ppm", src.identity, cam, i);
      std::string rel = buf;
      save_image(styled, out_dir / rel);
      ImageRecord r;
      r.image_ref = rel;
      r.identity = src.identity;  // inherited verbatim
      r.camera = cam;
      r.split = Split::kTrain;
      r.is_synthetic = true;
      r.provenance = "translated-from:" + src.image_ref;
      out.records.push_back(std::move(r));
    }
  }
  std::set<int> ids;
  for (const auto& r : out.records)
    if (r.split == Split::kTrain && r.identity >= 0) ids.insert(r.identity);
  out.num_identities = static_cast<int>(ids.size());
  out.validate();
  return out;
}

}  // namespace

DatasetManifest translate_dataset_with(const TranslateFn& fn, const DatasetManifest& source,
                                       const std::vector<int>& target_cameras,
                                       int num_cameras_out, const fs::path& out_dir) {
  check(!target_cameras.empty(), "translation: target camera list is empty");
  return translate_core(fn, source, target_cameras, num_cameras_out, out_dir);
}

DatasetManifest translate_dataset(const TranslationJob& job) {
  job.validate();
  Generator gen = Generator::from_params(job.generator);
  const int L = gen.config().num_domains - 1;
  auto fn = [&](const Tensor& image, int cam) {
    return gen.forward(image, {cam}, job.generator);
  };
  DatasetManifest out = translate_core(fn, job.source, job.target_cameras, L, job.out_dir);
  return out;
}

}  // namespace ipreid
