#include "conceptmem/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "json.hpp"

#include "conceptmem/error.hpp"
#include "conceptmem/rng.hpp"

namespace fs = std::filesystem;

namespace cmem {

namespace {

// Box-filter resampling: each output pixel averages the input area it covers,
// with fractional weights at the borders.
std::vector<double> area_resize(const std::vector<double>& in, std::size_t w, std::size_t h, std::size_t side) {
  std::vector<double> out(side * side, 0.0);
  const double sx = static_cast<double>(w) / static_cast<double>(side);
  const double sy = static_cast<double>(h) / static_cast<double>(side);
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double y0 = static_cast<double>(oy) * sy;
    const double y1 = y0 + sy;
    for (std::size_t ox = 0; ox < side; ++ox) {
      const double x0 = static_cast<double>(ox) * sx;
      const double x1 = x0 + sx;
      double acc = 0.0;
      for (auto iy = static_cast<std::size_t>(y0); iy < h && static_cast<double>(iy) < y1; ++iy) {
        const double wy = std::min(y1, iy + 1.0) - std::max(y0, static_cast<double>(iy));
        for (auto ix = static_cast<std::size_t>(x0); ix < w && static_cast<double>(ix) < x1; ++ix) {
          const double wx = std::min(x1, ix + 1.0) - std::max(x0, static_cast<double>(ix));
          acc += wx * wy * in[iy * w + ix];
        }
      }
      out[oy * side + ox] = acc / (sx * sy);
    }
  }
  return out;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Array load_glyph(const fs::path& file, std::size_t side) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, file.c_str())) {
    throw LoadError("cannot decode image " + file.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw LoadError("cannot decode image " + file.string() + ": " + msg);
  }
  const std::size_t w = image.width;
  const std::size_t h = image.height;
  std::vector<double> ink(w * h);
  for (std::size_t i = 0; i < w * h; ++i) ink[i] = 1.0 - static_cast<double>(pixels[i]) / 255.0;
  return Array({1, side, side}, area_resize(ink, w, h, side));
}

OmniglotSplit load_omniglot(const fs::path& root, std::size_t side) {
  const fs::path parts[] = {root / "images_background", root / "images_evaluation"};
  for (const auto& p : parts) {
    if (!fs::is_directory(p)) {
      throw LoadError("omniglot root " + root.string() +
                      " must contain images_background/ and images_evaluation/ (alphabet/character/*.png); missing " +
                      p.string());
    }
  }
  std::vector<fs::path> characters;
  for (const auto& p : parts) {
    for (const auto& alphabet : sorted_entries(p, true)) {
      for (const auto& ch : sorted_entries(alphabet, true)) characters.push_back(ch);
    }
  }
  std::sort(characters.begin(), characters.end());
  if (characters.empty()) throw LoadError("omniglot root " + root.string() + " holds no character directories");

  Dataset all;
  all.input_shape = {1, side, side};
  for (const auto& ch : characters) {
    std::vector<Array> samples;
    for (const auto& f : sorted_entries(ch, false)) samples.push_back(load_glyph(f, side));
    if (samples.empty()) throw LoadError("character directory " + ch.string() + " has no PNG files");
    all.classes.push_back(std::move(samples));
    all.names.push_back(fs::relative(ch, root).generic_string());
  }
  const std::size_t cut = std::min(kOmniglotTrainClasses, all.num_classes());
  return {subset_classes(all, 0, cut), subset_classes(all, cut, all.num_classes())};
}

Array rotate90(const Array& image) {
  const Shape& s = image.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    throw ConfigError("rotation augmentation needs square images, got " + to_string(s));
  }
  const std::size_t n = s.back();
  const std::size_t planes = image.size() / (n * n);
  Array out(s);
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * n * n;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) out[base + (n - 1 - c) * n + r] = image[base + r * n + c];
    }
  }
  return out;
}

Dataset augment_rotations(const Dataset& dataset) {
  Dataset out;
  out.input_shape = dataset.input_shape;
  for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
    std::vector<Array> current = dataset.classes[c];
    for (int k = 0; k < 4; ++k) {
      const std::string name =
          (c < dataset.names.size() ? dataset.names[c] : std::to_string(c)) + "@rot" + std::to_string(90 * k);
      out.classes.push_back(current);
      out.names.push_back(name);
      for (auto& img : current) img = rotate90(img);
    }
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synthetic.n_classes: must be at least 2");
  if (dimension == 0) throw ConfigError("synthetic.dimension: must be positive");
  if (!(center_scale >= 0.0)) throw ConfigError("synthetic.center_scale: must be non-negative");
  if (!(noise_sigma > 0.0)) throw ConfigError("synthetic.noise_sigma: must be positive");
  if (samples_per_class == 0) throw ConfigError("synthetic.samples_per_class: must be positive");
}

double separability_ratio(const std::vector<Array>& centers, double sigma) {
  double best = INFINITY;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < centers[i].size(); ++d) {
        const double diff = centers[i][d] - centers[j][d];
        s += diff * diff;
      }
      best = std::min(best, std::sqrt(s));
    }
  }
  return best / sigma;
}

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Array> centers;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    Array center({spec.dimension});
    for (double& v : center.data()) v = spec.center_scale * rng.normal();
    centers.push_back(std::move(center));
  }
  SyntheticData out;
  out.dataset.input_shape = {spec.dimension};
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<Array> samples;
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      Array x = centers[c];
      for (double& v : x.data()) v += spec.noise_sigma * rng.normal();
      samples.push_back(std::move(x));
    }
    out.dataset.classes.push_back(std::move(samples));
    out.dataset.names.push_back("class" + std::to_string(c));
  }
  out.separability = separability_ratio(centers, spec.noise_sigma);
  out.centers = std::move(centers);
  return out;
}

void write_synthetic(const SyntheticData& data, const SyntheticSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t c = 0; c < data.dataset.num_classes(); ++c) {
    std::ofstream out(dir / (data.dataset.names[c] + ".csv"));
    if (!out) throw LoadError("cannot write " + (dir / (data.dataset.names[c] + ".csv")).string());
    out << std::setprecision(17);
    for (const auto& x : data.dataset.classes[c]) {
      for (std::size_t i = 0; i < x.size(); ++i) out << (i ? "," : "") << x[i];
      out << '\n';
    }
  }
  nlohmann::json meta = {{"n_classes", spec.n_classes},         {"dimension", spec.dimension},
                         {"center_scale", spec.center_scale},   {"noise_sigma", spec.noise_sigma},
                         {"samples_per_class", spec.samples_per_class}, {"seed", spec.seed},
                         {"separability_ratio", data.separability}};
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& c : data.centers) centers.push_back(c.values());
  meta["centers"] = std::move(centers);
  std::ofstream out(dir / "meta.json");
  if (!out) throw LoadError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

}  // namespace cmem
