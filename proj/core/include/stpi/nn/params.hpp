#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stpi/nn/autodiff.hpp"

namespace stpi::nn {

// Named parameter registry. Paths are dot-separated module names
// ("planner.backbone.0.attn.q.weight"); iteration order is lexicographic.
// Buffers are stored alongside parameters but never receive gradients.
class ParameterSet {
 public:
  Var add(const std::string& path, Tensor init);
  Var add_buffer(const std::string& path, Tensor init);

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  const Var& at(const std::string& path) const;
  Var& at(const std::string& path);
  bool is_buffer(const std::string& path) const { return buffers_.count(path) != 0; }

  const std::map<std::string, Var>& entries() const { return entries_; }
  std::vector<std::string> paths() const;
  std::vector<std::string> paths_with_prefix(const std::string& prefix) const;

  // requires_grad := true for every non-buffer parameter.
  void unfreeze_all();
  // requires_grad := false for every parameter whose path starts with any prefix.
  // Throws std::invalid_argument if a prefix matches nothing.
  void freeze(const std::vector<std::string>& prefixes);
  std::vector<std::string> trainable_paths() const;

  void zero_grad();
  std::size_t parameter_count() const;

  // FNV-1a over the raw bytes of the selected entries, in path order.
  std::uint64_t hash(const std::vector<std::string>& paths) const;
  std::uint64_t hash_all() const { return hash(paths()); }

 private:
  std::map<std::string, Var> entries_;
  std::set<std::string> buffers_;
};

bool path_has_prefix(const std::string& path, const std::string& prefix);

}  // namespace stpi::nn
