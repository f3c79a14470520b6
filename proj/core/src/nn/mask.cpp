#include "stpi/nn/mask.hpp"

#include <stdexcept>

namespace stpi::nn {

AttentionMask::AttentionMask(std::size_t queries, std::size_t keys, bool fill)
    : queries_(queries), keys_(keys), allow_(queries * keys, fill ? 1 : 0) {}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m(n, n, false);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k <= q; ++k) m.set(q, k);
  }
  return m;
}

void AttentionMask::set_block(std::size_t q0, std::size_t q1, std::size_t k0, std::size_t k1, bool on) {
  if (q1 > queries_ || k1 > keys_) throw std::out_of_range("AttentionMask::set_block");
  for (std::size_t q = q0; q < q1; ++q) {
    for (std::size_t k = k0; k < k1; ++k) set(q, k, on);
  }
}

std::size_t AttentionMask::allowed_in_row(std::size_t q) const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < keys_; ++k) n += allow_[q * keys_ + k];
  return n;
}

void AttentionMask::validate() const {
  for (std::size_t q = 0; q < queries_; ++q) {
    if (allowed_in_row(q) == 0) {
      throw std::invalid_argument("attention mask row " + std::to_string(q) + " allows no keys");
    }
  }
}

std::string AttentionMask::to_string() const {
  std::string out;
  out.reserve(queries_ * (keys_ + 1));
  for (std::size_t q = 0; q < queries_; ++q) {
    for (std::size_t k = 0; k < keys_; ++k) out.push_back(allowed(q, k) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

}  // namespace stpi::nn
