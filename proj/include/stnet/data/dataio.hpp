#ifndef STNET_DATA_DATAIO_HPP
#define STNET_DATA_DATAIO_HPP

#include "stnet/core/image.hpp"
#include "stnet/core/rng.hpp"
#include "stnet/core/tensor.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace stnet::data {

enum class Domain { source, target };

std::string domain_name(Domain d);
Domain parse_domain(const std::string& s);

struct ImageRecord {
  std::string id;
  Domain domain = Domain::source;
  Image pixels;  // square, values in [0,1]
  std::string path;
};

struct LoadReport {
  int loaded = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // path, reason
};

/// Loads every decodable raster image under `root` (non-recursive), resized
/// to resolution x resolution, ordered by id (filename stem). Undecodable
/// files are skipped and recorded.
std::vector<ImageRecord> load_dataset(const std::string& root, Domain domain, int resolution,
                                      LoadReport* report = nullptr);

void save_load_report(const std::string& path, const LoadReport& r);

/// Per-channel histogram over L equal-width bins of [0,1]; rows normalized to
/// sum 1. Value 1.0 falls in the last bin.
struct ColorHistogram {
  int L = 0;
  Tensor bins;  // [3, L]
};

ColorHistogram compute_color_histogram(const Image& img, int L);
ColorHistogram compute_color_histogram(const ImageRecord& rec, int L);

/// Two independent uniform-random P x P crops of one image, offsets recorded.
struct PatchPair {
  Image anchor;
  Image positive;
  std::string parent_id;
  int anchor_row = 0, anchor_col = 0;
  int positive_row = 0, positive_col = 0;
};

PatchPair crop_patch_pair(const ImageRecord& img, int P, Rng& rng);

/// Undirected graph over record ids; edge iff dist < threshold (strict).
struct SimilarityGraph {
  std::vector<std::string> ids;            // node i is ids[i]
  std::vector<std::pair<int, int>> edges;  // i < j
};

using DistFn = std::function<double(const Image&, const Image&)>;

/// Mean absolute pixel difference after 16x16 area downsampling. Cheap
/// stand-in for a learned perceptual metric; pluggable via DistFn.
double downsampled_mean_abs_distance(const Image& a, const Image& b);

SimilarityGraph build_similarity_graph(const std::vector<ImageRecord>& records, const DistFn& dist,
                                       double threshold);

struct SplitManifest {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double ratio = 0.0;
  double threshold = 0.0;
};

/// Assigns whole connected components greedily (largest first, seeded
/// tie-breaking) so no similarity edge crosses the split and the train
/// fraction lands within 0.05 of `ratio`.
SplitManifest split_dataset(const SimilarityGraph& graph, double ratio, Rng& rng);

void save_split_manifest(const std::string& path, const SplitManifest& m);
SplitManifest load_split_manifest(const std::string& path);

}  // namespace stnet::data

#endif
