#pragma once

#include <stdexcept>
#include <vector>

#include "taggant/audio.hpp"

namespace taggant {

/// Black-box access to a suspect classifier: ranked class indices only.
class TopKOracle {
 public:
  virtual ~TopKOracle() = default;
  virtual int num_classes() const = 0;
  /// The k highest-ranked classes for `clip`, best first.
  virtual std::vector<int> topk(const AudioClip& clip, int k) const = 0;
};

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace taggant
