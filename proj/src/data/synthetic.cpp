#include "stnet/data/synthetic.hpp"

#include "stnet/core/errors.hpp"
#include "stnet/core/image.hpp"
#include "stnet/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

namespace fs = std::filesystem;

namespace stnet::data {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1.0 - s);
  double q = v * (1.0 - f * s);
  double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

enum class Motif { stripes, checker, dots };

struct ItemStyle {
  double hue = 0.0;
  double sat = 0.8;
  double val = 0.8;
  Motif motif = Motif::stripes;
  double freq = 4.0;
  double angle = 0.0;
  double phase = 0.0;
};

// +1 / -1 texture indicator at unit coordinates (x,y in [0,1))
double motif_value(const ItemStyle& st, double x, double y) {
  switch (st.motif) {
    case Motif::stripes: {
      double u = x * std::cos(st.angle) + y * std::sin(st.angle);
      return std::sin(2.0 * M_PI * st.freq * u + st.phase) > 0.0 ? 1.0 : -1.0;
    }
    case Motif::checker: {
      int cx = static_cast<int>(std::floor(x * st.freq + st.phase));
      int cy = static_cast<int>(std::floor(y * st.freq + st.phase));
      return ((cx + cy) & 1) ? 1.0 : -1.0;
    }
    case Motif::dots: {
      double fx = x * st.freq + st.phase;
      double fy = y * st.freq + st.phase;
      double dx = fx - std::floor(fx) - 0.5;
      double dy = fy - std::floor(fy) - 0.5;
      return (dx * dx + dy * dy < 0.09) ? 1.0 : -1.0;
    }
  }
  return 1.0;
}

Image render(const ItemStyle& st, bool upper, int res, Rng& noise_rng, Rng& jitter_rng) {
  Image im = Image::blank(res, res);
  Rgb primary = hsv_to_rgb(st.hue, st.sat, st.val);
  Rgb accent = hsv_to_rgb(st.hue + 0.5, std::min(1.0, st.sat * 0.9 + 0.05), st.val * 0.55);
  Rgb bg_hi = hsv_to_rgb(st.hue, 0.08, 0.93);

  // garment silhouette: an ellipse weighted toward the top (upper domain) or
  // bottom (lower domain), with small per-image jitter
  double cy = (upper ? 0.36 : 0.66) + jitter_rng.uniform(-0.03, 0.03);
  double cx = 0.5 + jitter_rng.uniform(-0.03, 0.03);
  double ry = (upper ? 0.26 : 0.28) + jitter_rng.uniform(-0.02, 0.02);
  double rx = (upper ? 0.30 : 0.24) + jitter_rng.uniform(-0.02, 0.02);

  for (int i = 0; i < res; ++i) {
    for (int j = 0; j < res; ++j) {
      double y = (i + 0.5) / res;
      double x = (j + 0.5) / res;
      double dy = (y - cy) / ry;
      double dx = (x - cx) / rx;
      bool inside = dx * dx + dy * dy <= 1.0;
      double m = motif_value(st, x, y);
      Rgb c;
      if (inside) {
        c = m > 0.0 ? primary : accent;
      } else {
        // faint same-hue background carrying a whisper of the motif, so any
        // crop retains item identity
        double a = 0.03 * m;
        c = Rgb{bg_hi.r - a, bg_hi.g - a, bg_hi.b - a};
      }
      auto put = [&](int ch, double v) {
        v += noise_rng.uniform(-0.004, 0.004);
        im.at(ch, i, j) = std::clamp(v, 0.0, 1.0);
      };
      put(0, c.r);
      put(1, c.g);
      put(2, c.b);
    }
  }
  return im;
}

std::string item_name(const std::string& domain, int idx) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d", domain.c_str(), idx);
  return buf;
}

}  // namespace

void make_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.n_per_domain < 16) throw ConfigError("make-synthetic: need at least 16 items per domain");
  if (spec.resolution < 8) throw ConfigError("make-synthetic: resolution too small");

  fs::path root(spec.out_dir);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!spec.force) throw ConfigError("output directory not empty (use --force): " + spec.out_dir);
    fs::remove_all(root);
  }
  fs::create_directories(root / "upper");
  fs::create_directories(root / "lower");

  const int n = spec.n_per_domain;
  Rng params = Rng::derive(spec.seed, "corpus.params");
  Rng noise = Rng::derive(spec.seed, "corpus.noise");
  Rng jitter = Rng::derive(spec.seed, "corpus.jitter");
  Rng permrng = Rng::derive(spec.seed, "corpus.perm");
  Rng duprng = Rng::derive(spec.seed, "corpus.dupes");

  std::vector<ItemStyle> styles(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    ItemStyle& st = styles[static_cast<size_t>(k)];
    // low-discrepancy hues keep items distinguishable even for small n
    st.hue = std::fmod(0.61803398874989485 * k + params.uniform(0.0, 0.02), 1.0);
    st.sat = params.uniform(0.55, 0.95);
    st.val = params.uniform(0.60, 0.95);
    st.motif = static_cast<Motif>(params.below(3));
    st.freq = static_cast<double>(params.range(3, 6));
    st.angle = params.uniform(0.0, M_PI);
    st.phase = params.uniform(0.0, 2.0 * M_PI);
  }

  // lower-domain filename indices are a permutation of item indices
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  permrng.shuffle(perm);

  std::vector<Image> uppers;
  std::vector<Image> lowers(static_cast<size_t>(n));
  uppers.reserve(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    uppers.push_back(render(styles[static_cast<size_t>(k)], true, spec.resolution, noise, jitter));
    lowers[static_cast<size_t>(perm[static_cast<size_t>(k)])] =
        render(styles[static_cast<size_t>(k)], false, spec.resolution, noise, jitter);
  }
  for (int i = 0; i < n; ++i) {
    save_image((root / "upper" / (item_name("upper", i) + ".png")).string(), uppers[static_cast<size_t>(i)]);
    save_image((root / "lower" / (item_name("lower", i) + ".png")).string(), lowers[static_cast<size_t>(i)]);
  }

  {
    std::ofstream pairs(root / "pairs.txt");
    if (!pairs) throw std::runtime_error("cannot write pairs sidecar");
    for (int k = 0; k < n; ++k) {
      pairs << item_name("upper", k) << "\t" << item_name("lower", perm[static_cast<size_t>(k)]) << "\n";
    }
  }

  // planted near-duplicates: tiny noise on top of an existing item, far below
  // any reasonable dedup threshold
  for (int d = 0; d < spec.near_duplicates; ++d) {
    for (const char* domain : {"upper", "lower"}) {
      int src_idx = static_cast<int>(duprng.below(n));
      const Image& src = std::string(domain) == "upper" ? uppers[static_cast<size_t>(src_idx)]
                                                        : lowers[static_cast<size_t>(src_idx)];
      Image copy = src;
      for (int64_t i = 0; i < copy.chw.size(); ++i) {
        copy.chw[i] = std::clamp(copy.chw[i] + duprng.uniform(-0.005, 0.005), 0.0, 1.0);
      }
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_dup%02d_of_%04d.png", domain, d, src_idx);
      save_image((root / domain / buf).string(), copy);
    }
  }
}

}  // namespace stnet::data
