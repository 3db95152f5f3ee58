#include "stnet/core/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace stnet {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::derive(uint64_t master_seed, const std::string& stream) {
  uint64_t h = fnv1a64(stream.data(), stream.size());
  uint64_t x = master_seed ^ h;
  // A couple of mixing rounds so nearby seeds give unrelated streams.
  uint64_t s = splitmix64(x);
  s ^= splitmix64(x);
  return Rng(s);
}

double Rng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int64_t Rng::below(int64_t n) {
  if (n <= 0) throw std::invalid_argument("rng: below(n) needs n >= 1");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  // Box-Muller, first branch only. u1 is kept away from 0.
  double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw std::runtime_error("rng: bad serialized state");
}

uint64_t fnv1a64(const void* bytes, size_t n, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace stnet
