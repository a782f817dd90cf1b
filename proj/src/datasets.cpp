#include "ipreid/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ipreid/common.hpp"

namespace ipreid {

namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  throw std::runtime_error("bad split");
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "query") return Split::kQuery;
  if (s == "gallery") return Split::kGallery;
  throw IoError("unknown split '" + s + "'");
}

// ---------------------------------------------------------------------------
// Manifest

void DatasetManifest::validate() const {
  check(num_cameras >= 0, "manifest: negative camera count");
  check(height > 0 && width > 0 && channels > 0, "manifest: invalid image size");
  std::set<int> train_ids;
  for (const auto& r : records) {
    check(r.camera >= 1 && r.camera <= num_cameras,
          "manifest '" + name + "': record '" + r.image_ref + "' camera out of range (" +
              std::to_string(r.camera) + " with L=" + std::to_string(num_cameras) + ")");
    check(r.identity >= -1, "manifest '" + name + "': identity below -1");
    if (r.identity == -1)
      check(r.split == Split::kGallery,
            "manifest '" + name + "': junk identity -1 outside gallery split");
    if (r.split == Split::kTrain && r.identity >= 0) train_ids.insert(r.identity);
  }
  check(static_cast<int>(train_ids.size()) == num_identities,
        "manifest '" + name + "': N=" + std::to_string(num_identities) +
            " but train split has " + std::to_string(train_ids.size()) +
            " distinct identities");
}

fs::path DatasetManifest::resolve(const ImageRecord& r) const {
  fs::path p(r.image_ref);
  if (p.is_absolute()) return p;
  return base_dir / p;
}

bool DatasetManifest::equals(const DatasetManifest& other) const {
  return records == other.records && num_cameras == other.num_cameras &&
         num_identities == other.num_identities && height == other.height &&
         width == other.width && channels == other.channels && name == other.name &&
         seed == other.seed;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open manifest for writing: " + path.string());
  f << "name=" << m.name << "\n";
  f << "L=" << m.num_cameras << "\n";
  f << "N=" << m.num_identities << "\n";
  f << "H=" << m.height << "\n";
  f << "W=" << m.width << "\n";
  f << "C=" << m.channels << "\n";
  if (m.seed) f << "seed=" << *m.seed << "\n";
  for (const auto& r : m.records) {
    f << r.image_ref << '\t' << r.identity << '\t' << r.camera << '\t'
      << split_name(r.split) << '\t' << (r.provenance.empty() ? "-" : r.provenance)
      << "\n";
  }
  if (!f) throw IoError("manifest write failed: " + path.string());
}

namespace {

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("manifest: bad integer for " + what + ": '" + s + "'");
  }
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("manifest file missing: " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  bool in_header = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (in_header && line.find('\t') == std::string::npos) {
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw IoError("manifest: malformed header line '" + line + "'");
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 1);
      if (key == "name") m.name = val;
      else if (key == "L") m.num_cameras = parse_int(val, "L");
      else if (key == "N") m.num_identities = parse_int(val, "N");
      else if (key == "H") m.height = parse_int(val, "H");
      else if (key == "W") m.width = parse_int(val, "W");
      else if (key == "C") m.channels = parse_int(val, "C");
      else if (key == "seed") m.seed = parse_int(val, "seed");
      else
        throw IoError("manifest: header key '" + key +
                      "' not recognized (format version mismatch?)");
      continue;
    }
    in_header = false;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw IoError("manifest: record needs 5 tab-separated fields, got " +
                    std::to_string(fields.size()) + " in '" + line + "'");
    ImageRecord r;
    r.image_ref = fields[0];
    r.identity = parse_int(fields[1], "identity");
    r.camera = parse_int(fields[2], "camera");
    r.split = split_from_name(fields[3]);
    r.provenance = fields[4] == "-" ? "" : fields[4];
    r.is_synthetic = !r.provenance.empty();
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Image I/O

void save_image(const Tensor& img, const fs::path& path) {
  const Shape& s = img.shape();
  check(s.n == 1, "save_image: expected a single image, got batch " + s.str());
  check(s.c == 3 || s.c == 1, "save_image: only 1 or 3 channels supported");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open image for writing: " + path.string());
  f << (s.c == 3 ? "P6" : "P5") << "\n" << s.w << " " << s.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(s.w) * s.c);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < s.c; ++c) {
        double v = (img.at(0, c, y, x) + 1.0) * 127.5;
        v = std::min(255.0, std::max(0.0, std::round(v)));
        row[static_cast<std::size_t>(x) * s.c + c] = static_cast<unsigned char>(v);
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("image write failed: " + path.string());
}

namespace {

int read_pnm_token(std::istream& f) {
  // skips whitespace and '#' comments
  while (true) {
    int ch = f.peek();
    if (ch == '#') {
      std::string dummy;
      std::getline(f, dummy);
    } else if (std::isspace(ch)) {
      f.get();
    } else {
      break;
    }
  }
  int v;
  f >> v;
  if (!f) throw IoError("corrupt PNM header");
  return v;
}

Tensor bilinear_resize(const Tensor& in, int oh, int ow) {
  const Shape& s = in.shape();
  if (s.h == oh && s.w == ow) return in;
  Tensor out(Shape{s.n, s.c, oh, ow});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < oh; ++y) {
        double fy = (oh > 1) ? static_cast<double>(y) * (s.h - 1) / (oh - 1) : 0.0;
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, s.h - 1);
        double ty = fy - y0;
        for (int x = 0; x < ow; ++x) {
          double fx = (ow > 1) ? static_cast<double>(x) * (s.w - 1) / (ow - 1) : 0.0;
          int x0 = static_cast<int>(fx);
          int x1 = std::min(x0 + 1, s.w - 1);
          double tx = fx - x0;
          double v = (1 - ty) * ((1 - tx) * in.at(n, c, y0, x0) + tx * in.at(n, c, y0, x1)) +
                     ty * ((1 - tx) * in.at(n, c, y1, x0) + tx * in.at(n, c, y1, x1));
          out.at(n, c, y, x) = v;
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor load_image(const fs::path& path, int height, int width, int channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("image file missing: " + path.string());
  char p, kind;
  f.get(p);
  f.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw IoError("unsupported image format (want binary PPM/PGM): " + path.string());
  int fc = (kind == '6') ? 3 : 1;
  int w = read_pnm_token(f);
  int h = read_pnm_token(f);
  int maxval = read_pnm_token(f);
  if (maxval != 255) throw IoError("unsupported PNM maxval: " + path.string());
  f.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * fc);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw IoError("truncated image data: " + path.string());
  Tensor img(Shape{1, fc, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < fc; ++c)
        img.at(0, c, y, x) =
            raw[(static_cast<std::size_t>(y) * w + x) * fc + c] / 127.5 - 1.0;
  if (fc != channels) {
    Tensor conv(Shape{1, channels, h, w});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (fc == 1) {
          for (int c = 0; c < channels; ++c) conv.at(0, c, y, x) = img.at(0, 0, y, x);
        } else if (channels == 1) {
          double s = 0;
          for (int c = 0; c < fc; ++c) s += img.at(0, c, y, x);
          conv.at(0, 0, y, x) = s / fc;
        } else {
          throw IoError("channel mismatch loading " + path.string());
        }
      }
    }
    img = std::move(conv);
  }
  return bilinear_resize(img, height, width);
}

Tensor load_record_image(const DatasetManifest& m, std::size_t index) {
  check(index < m.records.size(), "record index out of range");
  return load_image(m.resolve(m.records[index]), m.height, m.width, m.channels);
}

Tensor load_all_images(const DatasetManifest& m) {
  Tensor out(Shape{static_cast<int>(m.records.size()), m.channels, m.height, m.width});
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    Tensor one = load_record_image(m, i);
    out.set_sample(static_cast<int>(i), one, 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticSpec::fill_defaults() {
  auto make_glyph = [&](int side, int i) {
    GlyphParams g;
    g.pattern = i % 8;
    g.hue = std::fmod(137.50776405 * (i + 1) + side * 61.7, 360.0);
    g.sat = 0.8 + 0.2 * ((i * 7) % 10) / 10.0;
    g.size = 0.55 + 0.3 * ((i * 3) % 5) / 5.0;
    g.aspect = 0.7 + 0.6 * ((i * 5) % 7) / 7.0;
    g.phase = (i % 4) * 0.25;
    return g;
  };
  if (source_glyphs.empty())
    for (int i = 0; i < num_identities; ++i) source_glyphs.push_back(make_glyph(0, i));
  if (target_glyphs.empty())
    for (int i = 0; i < num_identities; ++i) target_glyphs.push_back(make_glyph(1, i));
  // Styles are strong, mutually well separated, and the source family is
  // disjoint from the target family (opposite hue rotation signs).
  if (source_styles.empty()) {
    for (int k = 0; k < num_cameras; ++k) {
      CameraStyleParams s;
      s.hue_degrees = -12.0 - 16.0 * k;
      s.brightness = 0.18 - 0.11 * k;
      s.contrast = 1.25 - 0.13 * k;
      s.noise_sigma = 0.02;
      source_styles.push_back(s);
    }
  }
  if (target_styles.empty()) {
    for (int k = 0; k < num_cameras; ++k) {
      CameraStyleParams s;
      s.hue_degrees = 12.0 + 16.0 * k;
      s.brightness = -0.18 + 0.11 * k;
      s.contrast = 0.78 + 0.13 * k;
      s.noise_sigma = 0.02;
      target_styles.push_back(s);
    }
  }
}

void SyntheticSpec::validate() const {
  check_config(num_identities >= 1, "synthetic spec: need at least one identity");
  check_config(num_cameras >= 2,
               "synthetic spec: num_cameras must be >= 2 (single-camera translation "
               "is vacuous)");
  check_config(images_per_identity_per_camera >= 1,
               "synthetic spec: images_per_identity_per_camera must be >= 1");
  check_config(height >= 8 && width >= 8, "synthetic spec: image size too small");
  check_config(channels == 3, "synthetic spec: glyph rendering requires 3 channels");
  auto check_distinct = [](const auto& v, const std::string& what) {
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = i + 1; j < v.size(); ++j)
        check_config(!(v[i] == v[j]), "synthetic spec: duplicate " + what +
                                          " parameters at indices " + std::to_string(i) +
                                          " and " + std::to_string(j));
  };
  if (!source_glyphs.empty()) {
    check_config(static_cast<int>(source_glyphs.size()) == num_identities &&
                     static_cast<int>(target_glyphs.size()) == num_identities,
                 "synthetic spec: glyph table size mismatch");
    check_distinct(source_glyphs, "source glyph");
    check_distinct(target_glyphs, "target glyph");
  }
  if (!source_styles.empty()) {
    check_config(static_cast<int>(source_styles.size()) == num_cameras &&
                     static_cast<int>(target_styles.size()) == num_cameras,
                 "synthetic spec: style table size mismatch");
    check_distinct(source_styles, "source style");
    check_distinct(target_styles, "target style");
  }
}

namespace {

// HSV (h in degrees) to RGB in [0,1].
void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  int i = static_cast<int>(h) % 6;
  double f = h - std::floor(h);
  double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

bool glyph_hit(const GlyphParams& g, double u, double v) {
  if (std::abs(u) > 1 || std::abs(v) > 1) return false;
  auto frac = [](double x) { return x - std::floor(x); };
  switch (g.pattern) {
    case 0: return true;                                   // filled rectangle
    case 1: return u * u + v * v <= 1.0;                   // ellipse
    case 2: return std::abs(u) >= 0.4;                     // two vertical bars
    case 3: return frac((v + 1.0) * 1.5 + g.phase) < 0.5;  // horizontal stripes
    case 4: return (frac((u + 1.0) * 1.0 + g.phase) < 0.5) ==
                   (frac((v + 1.0) * 1.0) < 0.5);          // checker
    case 5: return frac((u + v) * 1.2 + g.phase) < 0.5;    // diagonal stripes
    case 6: {                                              // ring
      double r2 = u * u + v * v;
      return r2 >= 0.35 && r2 <= 1.0;
    }
    default: return std::abs(u) <= 0.35 || std::abs(v) <= 0.35;  // cross
  }
}

}  // namespace

Tensor render_glyph(const GlyphParams& glyph, int height, int width, int channels,
                    Rng& jitter_rng) {
  check(channels == 3, "render_glyph: requires 3 channels");
  // per-image jitter: position, scale, background level
  double cx = 0.5 * width * (1.0 + 0.16 * (jitter_rng.uniform() - 0.5));
  double cy = 0.5 * height * (1.0 + 0.16 * (jitter_rng.uniform() - 0.5));
  double scale = 1.0 + 0.2 * (jitter_rng.uniform() - 0.5);
  double bg = 0.10 + 0.12 * (jitter_rng.uniform() - 0.5);

  double rgb[3];
  hsv_to_rgb(glyph.hue, glyph.sat, 0.92, rgb);
  double hw = 0.5 * glyph.size * scale * width * glyph.aspect;
  double hh = 0.5 * glyph.size * scale * height;
  hw = std::max(hw, 1.5);
  hh = std::max(hh, 1.5);

  Tensor img(Shape{1, channels, height, width}, bg);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double u = (x + 0.5 - cx) / hw;
      double v = (y + 0.5 - cy) / hh;
      if (glyph_hit(glyph, u, v)) {
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = rgb[c] * 2.0 - 1.0;
      }
    }
  }
  return img;
}

Tensor apply_camera_style(const Tensor& image, int camera,
                          const std::vector<CameraStyleParams>& styles, Rng& noise_rng) {
  check(camera >= 1 && camera <= static_cast<int>(styles.size()),
        "apply_camera_style: unknown camera id " + std::to_string(camera));
  const CameraStyleParams& st = styles[static_cast<std::size_t>(camera - 1)];
  const Shape& s = image.shape();
  Tensor out = image;
  if (st.hue_degrees != 0.0) {
    check(s.c == 3, "apply_camera_style: hue rotation requires 3 channels");
    double th = st.hue_degrees * std::numbers::pi / 180.0;
    double c = std::cos(th), sn = std::sin(th);
    // gray-axis-preserving hue rotation (feColorMatrix hueRotate coefficients)
    double M[3][3] = {
        {0.213 + 0.787 * c - 0.213 * sn, 0.715 - 0.715 * c - 0.715 * sn,
         0.072 - 0.072 * c + 0.928 * sn},
        {0.213 - 0.213 * c + 0.143 * sn, 0.715 + 0.285 * c + 0.140 * sn,
         0.072 - 0.072 * c - 0.283 * sn},
        {0.213 - 0.213 * c - 0.787 * sn, 0.715 - 0.715 * c + 0.715 * sn,
         0.072 + 0.928 * c + 0.072 * sn}};
    for (int n = 0; n < s.n; ++n) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          double r = image.at(n, 0, y, x), g = image.at(n, 1, y, x),
                 b = image.at(n, 2, y, x);
          for (int ch = 0; ch < 3; ++ch)
            out.at(n, ch, y, x) = M[ch][0] * r + M[ch][1] * g + M[ch][2] * b;
        }
      }
    }
  }
  for (long i = 0; i < out.count(); ++i) {
    double v = out.data()[i] * st.contrast + st.brightness;
    if (st.noise_sigma > 0) v += st.noise_sigma * noise_rng.normal();
    out.data()[i] = std::min(1.0, std::max(-1.0, v));
  }
  return out;
}

namespace {

std::string record_filename(int identity, int camera, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d_c%d_%03d.ppm", identity, camera, index);
  return buf;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec_in, long seed,
                                            const fs::path& out_dir) {
  SyntheticSpec spec = spec_in;
  spec.validate();
  spec.fill_defaults();
  spec.validate();

  fs::create_directories(out_dir);
  SyntheticDataset ds;

  struct CorpusPlan {
    DatasetManifest* manifest;
    std::string dir;
    std::uint64_t tag;
    bool target_side;   // glyph + style family
    Split split;
    int images_per_cell;
  };
  ds.source_train.name = "synthetic-source-train";
  ds.target_train.name = "synthetic-target-train";
  ds.query.name = "synthetic-query";
  ds.gallery.name = "synthetic-gallery";
  const int ipc = spec.images_per_identity_per_camera;
  CorpusPlan plans[] = {
      {&ds.source_train, "source_train", 0xA1, false, Split::kTrain, ipc},
      {&ds.target_train, "target_train", 0xB2, true, Split::kTrain, ipc},
      {&ds.query, "query", 0xC3, true, Split::kQuery, 1},
      {&ds.gallery, "gallery", 0xD4, true, Split::kGallery, ipc},
  };

  for (auto& plan : plans) {
    DatasetManifest& m = *plan.manifest;
    m.num_cameras = spec.num_cameras;
    m.height = spec.height;
    m.width = spec.width;
    m.channels = spec.channels;
    m.seed = seed;
    m.base_dir = out_dir;
    fs::create_directories(out_dir / plan.dir);
    const auto& glyphs = plan.target_side ? spec.target_glyphs : spec.source_glyphs;
    const auto& styles = plan.target_side ? spec.target_styles : spec.source_styles;
    long index_in_corpus = 0;
    for (int i = 0; i < spec.num_identities; ++i) {
      // target-side identity labels live above the source range
      int identity = plan.target_side ? spec.num_identities + i : i;
      for (int cam = 1; cam <= spec.num_cameras; ++cam) {
        for (int j = 0; j < plan.images_per_cell; ++j) {
          Rng rng(mix_seed(static_cast<std::uint64_t>(seed), plan.tag,
                           static_cast<std::uint64_t>(index_in_corpus)));
          Tensor img = render_glyph(glyphs[static_cast<std::size_t>(i)], spec.height,
                                    spec.width, spec.channels, rng);
          Tensor styled = apply_camera_style(img, cam, styles, rng);
          std::string rel = plan.dir + "/" + record_filename(identity, cam, j);
          save_image(styled, out_dir / rel);
          ImageRecord r;
          r.image_ref = rel;
          r.identity = identity;
          r.camera = cam;
          r.split = plan.split;
          r.is_synthetic = true;
          r.provenance = "synthetic";
          m.records.push_back(std::move(r));
          ++index_in_corpus;
        }
      }
    }
    std::set<int> train_ids;
    for (const auto& r : m.records)
      if (r.split == Split::kTrain && r.identity >= 0) train_ids.insert(r.identity);
    m.num_identities = static_cast<int>(train_ids.size());
    m.validate();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Real-layout ingestion

std::pair<int, int> parse_reid_filename(const std::string& name) {
  auto fail = [&](const std::string& tok) -> std::pair<int, int> {
    throw IoError("cannot parse identity/camera from '" + name + "' (offending token '" +
                  tok + "')");
  };
  std::size_t us = name.find('_');
  if (us == std::string::npos || us == 0) return fail(name);
  std::string id_tok = name.substr(0, us);
  std::size_t p = (id_tok[0] == '-') ? 1 : 0;
  if (p == id_tok.size()) return fail(id_tok);
  for (std::size_t i = p; i < id_tok.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(id_tok[i]))) return fail(id_tok);
  int identity = std::stoi(id_tok);
  if (us + 1 >= name.size() || name[us + 1] != 'c') return fail(name.substr(us + 1));
  std::size_t cs = us + 2;
  std::size_t ce = cs;
  while (ce < name.size() && std::isdigit(static_cast<unsigned char>(name[ce]))) ++ce;
  if (ce == cs) return fail(name.substr(us + 1));
  int camera = std::stoi(name.substr(cs, ce - cs));
  return {identity, camera};
}

IngestedDataset ingest_real_layout(const fs::path& root, const std::string& name,
                                   int height, int width, int channels) {
  struct Part {
    const char* dir;
    Split split;
    DatasetManifest* manifest;
  };
  IngestedDataset out;
  Part parts[] = {{"bounding_box_train", Split::kTrain, &out.train},
                  {"query", Split::kQuery, &out.query},
                  {"bounding_box_test", Split::kGallery, &out.gallery}};
  int max_camera = 0;
  for (auto& part : parts) {
    fs::path dir = root / part.dir;
    check(fs::is_directory(dir), "ingest: missing directory " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    for (const auto& fn : names) {
      auto [identity, camera] = parse_reid_filename(fn);
      check(identity >= 0 || part.split == Split::kGallery,
            "ingest: junk identity -1 in non-gallery file " + fn);
      ImageRecord r;
      r.image_ref = std::string(part.dir) + "/" + fn;
      r.identity = identity;
      r.camera = camera;
      r.split = part.split;
      part.manifest->records.push_back(std::move(r));
      max_camera = std::max(max_camera, camera);
    }
  }
  for (auto& part : parts) {
    DatasetManifest& m = *part.manifest;
    m.name = name + "-" + part.dir;
    m.num_cameras = max_camera;
    m.height = height;
    m.width = width;
    m.channels = channels;
    m.base_dir = root;
    std::set<int> train_ids;
    for (const auto& r : m.records)
      if (r.split == Split::kTrain && r.identity >= 0) train_ids.insert(r.identity);
    m.num_identities = static_cast<int>(train_ids.size());
    m.validate();
  }
  return out;
}

}  // namespace ipreid
