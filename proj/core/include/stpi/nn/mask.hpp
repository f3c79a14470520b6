#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace stpi::nn {

// Boolean (query x key) visibility matrix. A query row must allow at least
// one key; masked_attention rejects masks that violate this.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys, bool fill = false);

  static AttentionMask full(std::size_t n) { return AttentionMask(n, n, true); }
  static AttentionMask causal(std::size_t n);

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }

  bool allowed(std::size_t q, std::size_t k) const { return allow_[q * keys_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool on = true) { allow_[q * keys_ + k] = on ? 1 : 0; }
  void set_block(std::size_t q0, std::size_t q1, std::size_t k0, std::size_t k1, bool on = true);

  std::size_t allowed_in_row(std::size_t q) const;
  // Throws std::invalid_argument naming the first query row with no allowed key.
  void validate() const;

  bool operator==(const AttentionMask&) const = default;

  // One line per query, '1' for allowed; for tests and debugging.
  std::string to_string() const;

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allow_;
};

}  // namespace stpi::nn
