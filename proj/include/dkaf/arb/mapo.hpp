#pragma once

#include <map>
#include <string>
#include <vector>

namespace dkaf::arb {

// Memory of actions that earned a strictly positive reward, per state.
class MapoBuffer {
 public:
  // Stores every positive-reward action of a state; repeated calls keep actions unique.
  void record(const std::string& state, const std::vector<double>& rewards);
  const std::map<int, double>& actions(const std::string& state) const;
  bool contains(const std::string& state) const { return buffer_.count(state) != 0; }
  std::size_t size() const { return buffer_.size(); }

 private:
  std::map<std::string, std::map<int, double>> buffer_;
};

// Per-action weights c(a) of the surrogate loss -sum_a c(a) log pi(a) for one state whose
// rewards are fully enumerated. The buffer term weighs positive-reward actions by the
// policy renormalized over the buffer, with weight w = max(pi(buffer), w_floor); the
// on-policy term is the exact expectation under pi.
std::vector<double> mapo_weights(const std::vector<double>& probs, const std::vector<double>& rewards,
                                 const std::map<int, double>& buffer, double w_floor);

// Expected reward of a state under the policy.
double expected_reward(const std::vector<double>& probs, const std::vector<double>& rewards);

// Sign with a dead zone: 0 when |x| <= tolerance.
int sign_with_tolerance(double x, double tolerance);

}  // namespace dkaf::arb
