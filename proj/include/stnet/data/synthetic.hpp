#ifndef STNET_DATA_SYNTHETIC_HPP
#define STNET_DATA_SYNTHETIC_HPP

#include <cstdint>
#include <string>

namespace stnet::data {

/// Synthetic two-domain corpus.
///
/// Each item k has a palette (dominant hue plus complementary accent) and a
/// texture motif (stripes, checker, or dots). The "upper" rendering places a
/// top-weighted garment shape, the "lower" rendering a bottom-weighted one.
/// A true pair shares palette and motif; that correspondence is written to a
/// sidecar file consumed only by evaluation, never by training. Lower-domain
/// file indices are permuted so filenames do not encode the pairing.
struct SyntheticSpec {
  std::string out_dir;
  int n_per_domain = 64;
  int resolution = 32;
  uint64_t seed = 0;
  int near_duplicates = 0;  // planted near-copies per domain, for split tests
  bool force = false;       // overwrite a non-empty out_dir
};

void make_synthetic_corpus(const SyntheticSpec& spec);

}  // namespace stnet::data

#endif
