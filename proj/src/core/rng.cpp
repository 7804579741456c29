#include "dkaf/core/rng.hpp"

#include <cmath>
#include <cstdio>

#include <openssl/sha.h>

namespace dkaf {

double Rng::normal() {
  // Box-Muller; one value per call keeps the stream position simple.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& name) {
  std::string msg = std::to_string(root) + "/" + name;
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(msg.data()), msg.size(), md);
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s = (s << 8) | md[i];
  return s;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), md);
  char buf[2 * SHA256_DIGEST_LENGTH + 1];
  for (int i = 0; i < SHA256_DIGEST_LENGTH; ++i) std::snprintf(buf + 2 * i, 3, "%02x", md[i]);
  return std::string(buf, 2 * SHA256_DIGEST_LENGTH);
}

}  // namespace dkaf
