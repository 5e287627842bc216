#include "bsrl/param_store.hpp"

#include <algorithm>

#include "bsrl/errors.hpp"

namespace bsrl {

Slice ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ContractViolation("parameter '" + name + "' has an empty shape");
  }
  const bool duplicate = std::any_of(entries_.begin(), entries_.end(),
                                     [&](const ParamEntry& e) { return e.name == name; });
  if (duplicate) {
    throw ContractViolation("duplicate parameter name '" + name + "'");
  }
  Slice s{size_, rows, cols};
  size_ += s.size();
  entries_.push_back({std::move(name), s});
  return s;
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (size_ != other.size_ || entries_.size() != other.entries_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !(entries_[i].slice == other.entries_[i].slice)) {
      return false;
    }
  }
  return true;
}

ParamStore::ParamStore(ParamLayout layout) : layout_(std::move(layout)), values_(layout_.size(), 0.0) {}

const Slice& ParamStore::slice(std::string_view name) const {
  for (const auto& e : layout_.entries()) {
    if (e.name == name) {
      return e.slice;
    }
  }
  throw ContractViolation("unknown parameter '" + std::string(name) + "'");
}

bool ParamStore::contains(std::string_view name) const {
  const auto& es = layout_.entries();
  return std::any_of(es.begin(), es.end(), [&](const ParamEntry& e) { return e.name == name; });
}

}  // namespace bsrl
