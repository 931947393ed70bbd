#pragma once

#include <cstddef>

namespace adapt {

struct TransformerConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d = 32;
  std::size_t d_k = 8;
  std::size_t d_v = 8;
  std::size_t ffn_multiplier = 4;

  // n_heads * d_k == d and n_heads * d_v == d.
  void validate() const;
};

}  // namespace adapt
