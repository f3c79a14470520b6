#include "stpi/nn/params.hpp"

#include <cstring>
#include <stdexcept>

namespace stpi::nn {

bool path_has_prefix(const std::string& path, const std::string& prefix) {
  if (prefix.empty()) return true;
  if (path.compare(0, prefix.size(), prefix) != 0) return false;
  return path.size() == prefix.size() || path[prefix.size()] == '.' || prefix.back() == '.';
}

Var ParameterSet::add(const std::string& path, Tensor init) {
  if (entries_.count(path)) throw std::invalid_argument("duplicate parameter path " + path);
  Var v(std::move(init), true);
  entries_.emplace(path, v);
  return v;
}

Var ParameterSet::add_buffer(const std::string& path, Tensor init) {
  if (entries_.count(path)) throw std::invalid_argument("duplicate parameter path " + path);
  Var v(std::move(init), false);
  entries_.emplace(path, v);
  buffers_.insert(path);
  return v;
}

const Var& ParameterSet::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter path " + path);
  return it->second;
}

Var& ParameterSet::at(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter path " + path);
  return it->second;
}

std::vector<std::string> ParameterSet::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [p, _] : entries_) out.push_back(p);
  return out;
}

std::vector<std::string> ParameterSet::paths_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [p, _] : entries_) {
    if (path_has_prefix(p, prefix)) out.push_back(p);
  }
  return out;
}

void ParameterSet::unfreeze_all() {
  for (auto& [p, v] : entries_) v.set_requires_grad(!buffers_.count(p));
}

void ParameterSet::freeze(const std::vector<std::string>& prefixes) {
  for (const std::string& prefix : prefixes) {
    bool matched = false;
    for (auto& [p, v] : entries_) {
      if (path_has_prefix(p, prefix)) {
        v.set_requires_grad(false);
        matched = true;
      }
    }
    if (!matched) throw std::invalid_argument("freeze: no parameter under '" + prefix + "'");
  }
}

std::vector<std::string> ParameterSet::trainable_paths() const {
  std::vector<std::string> out;
  for (const auto& [p, v] : entries_) {
    if (v.requires_grad()) out.push_back(p);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, v] : entries_) v.zero_grad();
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [p, v] : entries_) {
    if (!buffers_.count(p)) n += v.value().size();
  }
  return n;
}

std::uint64_t ParameterSet::hash(const std::vector<std::string>& paths) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const std::string& p : paths) {
    const Tensor& t = at(p).value();
    feed(p.data(), p.size());
    feed(t.data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace stpi::nn
