#include "dkaf/arb/mapo.hpp"

#include <algorithm>

#include "dkaf/core/error.hpp"

namespace dkaf::arb {

void MapoBuffer::record(const std::string& state, const std::vector<double>& rewards) {
  auto& slot = buffer_[state];
  for (std::size_t a = 0; a < rewards.size(); ++a)
    if (rewards[a] > 0) slot[static_cast<int>(a)] = rewards[a];
}

const std::map<int, double>& MapoBuffer::actions(const std::string& state) const {
  static const std::map<int, double> empty;
  auto it = buffer_.find(state);
  return it == buffer_.end() ? empty : it->second;
}

std::vector<double> mapo_weights(const std::vector<double>& probs, const std::vector<double>& rewards,
                                 const std::map<int, double>& buffer, double w_floor) {
  if (probs.size() != rewards.size()) throw InvalidInput("mapo: probs and rewards differ in size");
  std::vector<double> c(probs.size(), 0.0);
  double pi_b = 0.0;
  for (const auto& [a, _] : buffer) pi_b += probs.at(a);
  const double w = buffer.empty() ? 0.0 : std::max(pi_b, w_floor);
  for (const auto& [a, r] : buffer)
    if (pi_b > 0) c[a] += w * probs[a] / pi_b * r;
  for (std::size_t a = 0; a < probs.size(); ++a) c[a] += (1.0 - w) * probs[a] * rewards[a];
  return c;
}

double expected_reward(const std::vector<double>& probs, const std::vector<double>& rewards) {
  double s = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) s += probs[a] * rewards[a];
  return s;
}

int sign_with_tolerance(double x, double tolerance) {
  if (x > tolerance) return 1;
  if (x < -tolerance) return -1;
  return 0;
}

}  // namespace dkaf::arb
