#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "piper/dataset.hpp"

namespace piper {

/// Features of one part, one row per instance on which the part activated
/// (the global part has a row for every instance).
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::uint32_t part_id, std::size_t dim);

  std::uint32_t part_id() const { return part_id_; }
  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return ids_.size(); }
  bool normalized() const { return normalized_; }

  /// Throws on dimension mismatch, non-finite values or a repeated id.
  void add(InstanceId id, std::span<const double> row);

  InstanceId id(std::size_t r) const { return ids_[r]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
  std::optional<std::span<const double>> find(InstanceId id) const;
  bool contains(InstanceId id) const { return index_.count(id) != 0; }

  /// Scales every nonzero row to unit Euclidean norm and sets the flag.
  void l2_normalize();
  void set_normalized_flag(bool v) { normalized_ = v; }

 private:
  std::uint32_t part_id_ = 0;
  std::size_t dim_ = 0;
  bool normalized_ = false;
  std::vector<InstanceId> ids_;
  std::vector<double> data_;
  std::unordered_map<InstanceId, std::size_t> index_;
};

// PFV1 binary layout, all little-endian:
//   "PFV1" | part_id u32 | d u32 | n u32 | normalized u8 | n x (instance_id u64, d x f32)
// Rows are written in ascending instance id order.
void write_features(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix read_features(std::istream& in);
void save_features(const std::filesystem::path& path, const FeatureMatrix& m);
/// Loads a feature file; rows are L2-normalized here unless the header says
/// they already are.
FeatureMatrix load_features(const std::filesystem::path& path, bool normalize = true);

std::filesystem::path feature_file_name(std::uint32_t part_id);

namespace le {

void put_u8(std::ostream& out, std::uint8_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f32(std::ostream& out, float v);
std::uint8_t get_u8(std::istream& in);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
float get_f32(std::istream& in);

}  // namespace le

}  // namespace piper
