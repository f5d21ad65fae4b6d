#pragma once

#include "seqopt/frozen_lm.hpp"

namespace seqopt {

/// A complete length-L token sequence with its terminal reward.
struct Episode {
  TokenSeq tokens;
  double reward = 0.0;

  bool operator==(const Episode&) const = default;
};

}  // namespace seqopt
