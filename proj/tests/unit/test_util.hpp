#pragma once

#include <memory>
#include <vector>

#include "sq/mdp.hpp"

namespace sq::testing {

// One-hot instance with explicit rewards [H][S][A] and transitions
// [H][S][A][S]; no terminal, no mu.
inline LowRankMdp tabular_instance(int H, int S, int A, const std::vector<double>& reward,
                                   const std::vector<double>& trans, const std::vector<double>& start) {
  LowRankMdp m;
  m.allocate(H, S, A, S * A);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) m.phi[m.sa(h, s, a)](s * A + a) = 1.0;
  m.reward = reward;
  m.trans = trans;
  for (int s = 0; s < S; ++s) m.start(s) = start[s];
  return m;
}

inline std::shared_ptr<const Policy> constant_policy(int H, int S, int A, int action) {
  return Policy::tabular(TabularPolicy::deterministic(H, S, A, std::vector<int>(H * S, action)));
}

}  // namespace sq::testing
