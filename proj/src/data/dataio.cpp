#include "stnet/data/dataio.hpp"

#include "stnet/core/errors.hpp"
#include "stnet/core/kv.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace stnet::data {

std::string domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain '" + s + "' (use source|target)");
}

std::vector<ImageRecord> load_dataset(const std::string& root, Domain domain, int resolution,
                                      LoadReport* report) {
  if (!fs::is_directory(root)) throw MissingDependencyError("dataset directory not found: " + root);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_regular_file()) paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  std::vector<ImageRecord> out;
  for (const auto& p : paths) {
    Image im;
    try {
      im = load_image(p.string());
    } catch (const std::exception&) {
      std::cerr << "warning: skipping " << p.string() << ": undecodable image\n";
      if (report) report->skipped.emplace_back(p.string(), "undecodable");
      continue;
    }
    ImageRecord rec;
    rec.id = p.stem().string();
    rec.domain = domain;
    rec.pixels = resize_image(im, resolution, resolution);
    rec.path = p.string();
    out.push_back(std::move(rec));
    if (report) report->loaded += 1;
  }
  return out;
}

void save_load_report(const std::string& path, const LoadReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write load report: " + path);
  out << "loaded = " << r.loaded << "\n";
  out << "skipped = " << r.skipped.size() << "\n";
  for (const auto& [p, reason] : r.skipped) out << "skip\t" << p << "\t" << reason << "\n";
}

ColorHistogram compute_color_histogram(const Image& img, int L) {
  if (L < 2) throw std::invalid_argument("histogram: L must be at least 2");
  ColorHistogram h;
  h.L = L;
  h.bins = Tensor::zeros({3, L});
  const int64_t n = static_cast<int64_t>(img.h) * img.w;
  if (n == 0) throw std::invalid_argument("histogram: empty image");
  for (int c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < n; ++i) {
      double v = img.chw[c * n + i];
      int bin = static_cast<int>(v * L);
      if (bin > L - 1) bin = L - 1;  // value 1.0 belongs to the last bin
      if (bin < 0) bin = 0;
      h.bins.data[static_cast<int64_t>(c) * L + bin] += 1.0;
    }
    h.bins.mat(3, L).row(c) /= static_cast<double>(n);
  }
  return h;
}

ColorHistogram compute_color_histogram(const ImageRecord& rec, int L) {
  return compute_color_histogram(rec.pixels, L);
}

PatchPair crop_patch_pair(const ImageRecord& img, int P, Rng& rng) {
  const Image& im = img.pixels;
  if (P < 1 || P > im.h || P > im.w) throw std::invalid_argument("crop: patch side exceeds image");
  auto crop = [&](int r0, int c0) {
    Image p = Image::blank(P, P);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) p.at(c, i, j) = im.at(c, r0 + i, c0 + j);
    return p;
  };
  PatchPair pp;
  pp.parent_id = img.id;
  pp.anchor_row = static_cast<int>(rng.below(im.h - P + 1));
  pp.anchor_col = static_cast<int>(rng.below(im.w - P + 1));
  pp.positive_row = static_cast<int>(rng.below(im.h - P + 1));
  pp.positive_col = static_cast<int>(rng.below(im.w - P + 1));
  pp.anchor = crop(pp.anchor_row, pp.anchor_col);
  pp.positive = crop(pp.positive_row, pp.positive_col);
  return pp;
}

double downsampled_mean_abs_distance(const Image& a, const Image& b) {
  Image da = resize_image(a, 16, 16);
  Image db = resize_image(b, 16, 16);
  return (da.chw - db.chw).abs().mean();
}

SimilarityGraph build_similarity_graph(const std::vector<ImageRecord>& records, const DistFn& dist,
                                       double threshold) {
  SimilarityGraph g;
  g.ids.reserve(records.size());
  for (const auto& r : records) g.ids.push_back(r.id);
  const int n = static_cast<int>(records.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (dist(records[static_cast<size_t>(i)].pixels, records[static_cast<size_t>(j)].pixels) < threshold) {
        g.edges.emplace_back(i, j);
      }
    }
  }
  return g;
}

SplitManifest split_dataset(const SimilarityGraph& graph, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must be in (0,1)");
  const int n = static_cast<int>(graph.ids.size());
  if (n == 0) return SplitManifest{{}, {}, ratio, 0.0};

  // union-find over similarity components
  std::vector<int> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  for (const auto& [a, b] : graph.edges) parent[static_cast<size_t>(find(a))] = find(b);

  std::vector<std::vector<int>> comps;
  std::vector<int> comp_of(static_cast<size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    int r = find(i);
    if (comp_of[static_cast<size_t>(r)] < 0) {
      comp_of[static_cast<size_t>(r)] = static_cast<int>(comps.size());
      comps.emplace_back();
    }
    comps[static_cast<size_t>(comp_of[static_cast<size_t>(r)])].push_back(i);
  }

  if (comps.size() == 1 && n > 1) {
    throw ConfigError("cannot split: corpus is one duplicate cluster");
  }

  // seeded tie-breaking between equal-sized components, then largest first
  std::vector<int> order(comps.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return comps[static_cast<size_t>(a)].size() > comps[static_cast<size_t>(b)].size();
  });

  const double target = ratio * n;
  int train_count = 0;
  SplitManifest m;
  m.ratio = ratio;
  for (int ci : order) {
    const auto& comp = comps[static_cast<size_t>(ci)];
    double with = std::abs(train_count + static_cast<double>(comp.size()) - target);
    double without = std::abs(train_count - target);
    auto& dst = (with < without) ? m.train_ids : m.test_ids;
    if (with < without) train_count += static_cast<int>(comp.size());
    for (int i : comp) dst.push_back(graph.ids[static_cast<size_t>(i)]);
  }
  std::sort(m.train_ids.begin(), m.train_ids.end());
  std::sort(m.test_ids.begin(), m.test_ids.end());

  double achieved = static_cast<double>(m.train_ids.size()) / n;
  if (std::abs(achieved - ratio) > 0.05) {
    std::ostringstream os;
    os << "cannot split: component granularity only reaches train fraction " << achieved << " (target "
       << ratio << ")";
    throw ConfigError(os.str());
  }
  if (m.test_ids.empty() || m.train_ids.empty()) {
    throw ConfigError("cannot split: one side of the split is empty");
  }
  return m;
}

void save_split_manifest(const std::string& path, const SplitManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split manifest: " + path);
  out << "ratio = " << format_double(m.ratio) << "\n";
  out << "threshold = " << format_double(m.threshold) << "\n";
  out << "train_count = " << m.train_ids.size() << "\n";
  out << "test_count = " << m.test_ids.size() << "\n";
  out << "[train]\n";
  for (const auto& id : m.train_ids) out << id << "\n";
  out << "[test]\n";
  for (const auto& id : m.test_ids) out << id << "\n";
}

SplitManifest load_split_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDependencyError("split manifest not found: " + path);
  SplitManifest m;
  std::string line;
  int section = 0;  // 0 header, 1 train, 2 test
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "[train]") {
      section = 1;
      continue;
    }
    if (line == "[test]") {
      section = 2;
      continue;
    }
    if (section == 0) {
      size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      }
      std::string key = line.substr(0, eq);
      key.erase(key.find_last_not_of(" \t") + 1);
      std::string value = line.substr(eq + 1);
      value.erase(0, value.find_first_not_of(" \t"));
      if (key == "ratio") m.ratio = std::stod(value);
      if (key == "threshold") m.threshold = std::stod(value);
    } else if (section == 1) {
      m.train_ids.push_back(line);
    } else {
      m.test_ids.push_back(line);
    }
  }
  return m;
}

}  // namespace stnet::data
