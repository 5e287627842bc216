#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bsrl {

/// A named rows x cols region of the flat parameter vector (row-major).
/// Vectors are stored as rows x 1.
struct Slice {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Slice&) const = default;
};

struct ParamEntry {
  std::string name;
  Slice slice;
};

/// Ordered list of named shapes. Offsets are assigned contiguously, so the
/// slices are disjoint and cover [0, size()).
class ParamLayout {
 public:
  Slice add(std::string name, std::size_t rows, std::size_t cols = 1);

  std::size_t size() const { return size_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  bool operator==(const ParamLayout&) const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t size_ = 0;
};

/// Flat parameter vector plus its immutable layout.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(ParamLayout layout);

  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  const Slice& slice(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> view(const Slice& s) { return std::span<double>(values_).subspan(s.offset, s.size()); }
  std::span<const double> view(const Slice& s) const {
    return std::span<const double>(values_).subspan(s.offset, s.size());
  }
  std::span<double> view(std::string_view name) { return view(slice(name)); }
  std::span<const double> view(std::string_view name) const { return view(slice(name)); }

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

}  // namespace bsrl
