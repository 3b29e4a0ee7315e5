#include "tmt/decode.hpp"

namespace tmt {

std::vector<TokenId> Hypothesis::body() const {
  std::vector<TokenId> out;
  for (TokenId t : tokens) {
    if (t != kBos && t != kEos) out.push_back(t);
  }
  return out;
}

}  // namespace tmt
