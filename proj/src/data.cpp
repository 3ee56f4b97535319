#include "gatevit/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gatevit/rng.hpp"

namespace gatevit {

namespace fs = std::filesystem;

nd::Tensor<float> Dataset::images(const std::vector<std::size_t>& indices) const {
  const std::size_t e = image_elems();
  nd::Tensor<float> out({indices.size(), image_size, image_size, channels});
  auto dst = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw std::out_of_range("Dataset::images: index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * e), e,
                dst.begin() + static_cast<std::ptrdiff_t>(i * e));
  }
  return out;
}

std::vector<int> Dataset::labels_at(const std::vector<std::size_t>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.image_size = image_size;
  d.channels = channels;
  d.num_classes = num_classes;
  d.split = split;
  const std::size_t e = image_elems();
  for (std::size_t i : indices) {
    d.pixels.insert(d.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * e),
                    pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * e));
    d.labels.push_back(labels.at(i));
    d.difficulty.push_back(difficulty.at(i));
  }
  return d;
}

// ---------------------------------------------------------------------------
// synthetic

namespace {

// 3x3 glyphs with five lit pixels each.
constexpr std::array<std::array<std::uint8_t, 9>, 4> kGlyphs = {{
    {0, 1, 0, 1, 1, 1, 0, 1, 0},  // plus
    {1, 0, 1, 0, 1, 0, 1, 0, 1},  // cross
    {1, 0, 0, 1, 0, 0, 1, 1, 1},  // ell
    {1, 1, 1, 0, 1, 0, 0, 1, 0},  // tee
}};

std::vector<int> hard_glyph_types(int label, std::size_t k, std::size_t classes, Rng& rng) {
  // Rejection-sample a multiset where `label` wins by exactly one glyph.
  std::vector<int> types(k);
  for (int attempt = 0; attempt < 200000; ++attempt) {
    std::vector<std::size_t> counts(classes, 0);
    for (auto& t : types) {
      t = static_cast<int>(rng.below(classes));
      ++counts[static_cast<std::size_t>(t)];
    }
    std::size_t best_other = 0;
    for (std::size_t c = 0; c < classes; ++c)
      if (static_cast<int>(c) != label) best_other = std::max(best_other, counts[c]);
    if (counts[static_cast<std::size_t>(label)] == best_other + 1) return types;
  }
  // Unreachable for sane specs; fall back to a strict majority construction.
  std::fill(types.begin(), types.end(), label);
  return types;
}

struct Spot {
  std::size_t y, x;  // top-left pixel of the 3x3 glyph
};

// One spot per glyph: random offset inside distinct cells, or free positions
// whose 3x3 boxes keep a one pixel gap. Empty result when free placement jams.
std::vector<Spot> place_glyphs(std::size_t count, const SyntheticTaskSpec& spec, Rng& rng) {
  const std::size_t S = spec.image_size, cell = spec.cell_size;
  std::vector<Spot> spots;
  if (spec.placement == "cell") {
    const std::size_t grid = S / cell, slack = cell - 3;
    std::vector<std::size_t> order(grid * grid);
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    rng.shuffle(order.begin(), order.end());
    for (std::size_t g = 0; g < count; ++g) {
      const std::size_t oy = slack ? rng.below(slack + 1) : 0;
      const std::size_t ox = slack ? rng.below(slack + 1) : 0;
      spots.push_back({order[g] / grid * cell + oy, order[g] % grid * cell + ox});
    }
    return spots;
  }
  for (int attempt = 0; attempt < 2000 && spots.size() < count; ++attempt) {
    const Spot c{rng.below(S - 2), rng.below(S - 2)};
    bool ok = true;
    for (const Spot& o : spots) {
      const std::size_t dy = c.y > o.y ? c.y - o.y : o.y - c.y;
      const std::size_t dx = c.x > o.x ? c.x - o.x : o.x - c.x;
      if (dy < 4 && dx < 4) ok = false;
    }
    if (ok) spots.push_back(c);
  }
  if (spots.size() < count) spots.clear();
  return spots;
}

void draw_glyph(std::vector<float>& img, std::size_t S, Spot at, int type, const SyntheticTaskSpec& spec, Rng& rng) {
  std::array<std::uint8_t, 9> g = kGlyphs[static_cast<std::size_t>(type)];
  if (spec.occlusion_fraction > 0.0 && rng.bernoulli(spec.occlusion_fraction)) {
    std::size_t lit = rng.below(5);
    for (auto& v : g)
      if (v && lit-- == 0) {
        v = 0;
        break;
      }
  }
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x)
      if (g[y * 3 + x]) img[(at.y + y) * S + at.x + x] = 1.0f;
}

}  // namespace

Dataset generate_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t count,
                           const std::string& split) {
  spec.validate();
  const std::size_t S = spec.image_size;
  Dataset d;
  d.image_size = S;
  d.channels = 1;
  d.num_classes = spec.num_classes;
  d.split = split;
  d.pixels.assign(count * S * S, 0.0f);
  d.labels.resize(count);
  d.difficulty.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, i);
    const int label = static_cast<int>(i % spec.num_classes);
    const bool hard = rng.bernoulli(spec.hard_fraction);
    std::vector<float> img(S * S, 0.0f);
    std::vector<int> types;
    if (hard) {
      const std::size_t k = spec.hard_glyphs_min + rng.below(spec.hard_glyphs_max - spec.hard_glyphs_min + 1);
      types = hard_glyph_types(label, k, spec.num_classes, rng);
    } else {
      types.assign(spec.easy_glyphs, label);
    }
    std::vector<Spot> spots;
    for (int tries = 0; spots.empty(); ++tries) {
      if (tries == 100)
        throw DataError("synthetic generator cannot fit " + std::to_string(types.size()) + " glyphs into a " +
                        std::to_string(S) + "x" + std::to_string(S) + " image");
      spots = place_glyphs(types.size(), spec, rng);
    }
    for (std::size_t g = 0; g < types.size(); ++g) draw_glyph(img, S, spots[g], types[g], spec, rng);
    if (hard && spec.clutter_density > 0.0) {
      // Poisson-distributed stray pixels.
      const double limit = std::exp(-spec.clutter_density);
      double prod = rng.uniform();
      while (prod > limit) {
        img[rng.below(S * S)] = static_cast<float>(0.5 + 0.5 * rng.uniform());
        prod *= rng.uniform();
      }
    }
    for (auto& v : img) v += static_cast<float>(spec.noise_std * rng.normal());
    std::copy(img.begin(), img.end(), d.pixels.begin() + static_cast<std::ptrdiff_t>(i * S * S));
    d.labels[i] = label;
    d.difficulty[i] = hard ? Difficulty::Hard : Difficulty::Easy;
  }
  return d;
}

DataSplits make_synthetic_splits(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  return {generate_synthetic(spec, Rng::mix(seed ^ 0x7261696eULL), spec.train_samples, "train"),
          generate_synthetic(spec, Rng::mix(seed ^ 0x74657374ULL), spec.test_samples, "test")};
}

// ---------------------------------------------------------------------------
// image files

namespace {

RawImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("cannot read image " + path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RawImage out;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  out.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode image " + path + ": " + image.message);
  }
  return out;
}

RawImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw DataError("unsupported PNM variant in " + path);
  auto next_int = [&]() {
    int v = -1;
    while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
    in >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw DataError("malformed PNM header in " + path);
  in.get();
  RawImage out;
  out.width = static_cast<std::size_t>(w);
  out.height = static_cast<std::size_t>(h);
  out.channels = magic == "P6" ? 3 : 1;
  out.data.resize(out.width * out.height * out.channels);
  in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(out.data.size())) throw DataError("truncated PNM data in " + path);
  return out;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

// Bilinear resize to size x size with `channels` output channels (RGB <-> gray
// converted by averaging / replication).
std::vector<float> resize_to(const RawImage& img, std::size_t size, std::size_t channels) {
  std::vector<float> out(size * size * channels);
  auto sample = [&](std::size_t y, std::size_t x, std::size_t c) -> float {
    const std::uint8_t* px = img.data.data() + (y * img.width + x) * img.channels;
    if (channels == img.channels) return px[c];
    if (channels == 1) {
      float s = 0;
      for (std::size_t k = 0; k < img.channels; ++k) s += px[k];
      return s / static_cast<float>(img.channels);
    }
    return px[0];
  };
  for (std::size_t oy = 0; oy < size; ++oy) {
    const double fy = std::max(0.0, (oy + 0.5) * static_cast<double>(img.height) / size - 0.5);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), img.height - 1);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < size; ++ox) {
      const double fx = std::max(0.0, (ox + 0.5) * static_cast<double>(img.width) / size - 0.5);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), img.width - 1);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * sample(y0, x0, c) + wx * sample(y0, x1, c)) +
                         wy * ((1 - wx) * sample(y1, x0, c) + wx * sample(y1, x1, c));
        out[(oy * size + ox) * channels + c] = static_cast<float>(v / 255.0);
      }
    }
  }
  return out;
}

}  // namespace

RawImage read_image(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? read_png(path) : read_pnm(path);
}

Dataset load_image_folder(const std::string& path, std::size_t image_size, std::size_t channels,
                          const NormalizationStats* stats, NormalizationStats* stats_out) {
  if (!fs::is_directory(path)) throw DataError("image folder " + path + " does not exist");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw DataError("image folder " + path + " has no class sub-folders");

  Dataset d;
  d.image_size = image_size;
  d.channels = channels;
  d.num_classes = classes.size();
  d.split = fs::path(path).filename().string();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[c]))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("class folder " + classes[c].string() + " contains no images");
    for (const auto& f : files) {
      const std::vector<float> px = resize_to(read_image(f.string()), image_size, channels);
      d.pixels.insert(d.pixels.end(), px.begin(), px.end());
      d.labels.push_back(static_cast<int>(c));
      d.difficulty.push_back(Difficulty::Unknown);
    }
  }

  NormalizationStats st;
  if (stats) {
    st = *stats;
  } else {
    st.mean.assign(channels, 0.0);
    st.stddev.assign(channels, 0.0);
    const std::size_t per_channel = d.pixels.size() / channels;
    for (std::size_t i = 0; i < d.pixels.size(); ++i) st.mean[i % channels] += d.pixels[i];
    for (auto& m : st.mean) m /= static_cast<double>(per_channel);
    for (std::size_t i = 0; i < d.pixels.size(); ++i) {
      const double dv = d.pixels[i] - st.mean[i % channels];
      st.stddev[i % channels] += dv * dv;
    }
    for (auto& s : st.stddev) s = std::sqrt(s / static_cast<double>(per_channel));
  }
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    const std::size_t c = i % channels;
    const double sd = st.stddev[c] > 0 ? st.stddev[c] : 1.0;
    d.pixels[i] = static_cast<float>((d.pixels[i] - st.mean[c]) / sd);
  }
  if (stats_out) *stats_out = st;
  return d;
}

}  // namespace gatevit
