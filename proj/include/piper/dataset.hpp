#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "piper/geometry.hpp"

namespace piper {

using IdentityId = std::uint32_t;
using InstanceId = std::uint64_t;

enum class Split { Train, Val, Test, Leftover };

const char* to_string(Split split);
Split parse_split(std::string_view name);

/// One line of the dataset index file, before identity re-indexing.
struct IndexRecord {
  InstanceId instance_id = 0;
  std::string photo_id;
  std::string album_id;
  std::string uploader_id;
  BBox head;
  std::string identity_label;
  Split split = Split::Train;
};

/// One annotated person occurrence. `identity` is dense within its split.
struct Instance {
  InstanceId instance_id = 0;
  std::string photo_id;
  std::string album_id;
  std::string uploader_id;
  BBox head;
  IdentityId identity = 0;
  Split split = Split::Train;
};

/// Validated, immutable collection of instances.
///
/// Identity labels are re-indexed densely per split in ascending label order,
/// so the mapping does not depend on file order. Construction rejects
/// identities shared between train/val/test, uploaders spanning several
/// splits, duplicate instance ids and duplicate head boxes within a photo.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<IndexRecord> records);

  const std::vector<Instance>& instances() const { return instances_; }
  std::vector<const Instance*> in_split(Split split) const;
  std::size_t identity_count(Split split) const;
  const std::string& identity_label(Split split, IdentityId id) const;
  const Instance* find(InstanceId id) const;
  std::vector<IndexRecord> records() const;

 private:
  std::vector<Instance> instances_;
  std::vector<std::vector<std::string>> labels_;  // indexed by Split
  std::unordered_map<InstanceId, std::size_t> by_id_;
};

Dataset read_dataset(std::istream& in);
Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const std::vector<IndexRecord>& records);
void save_dataset(const std::filesystem::path& path, const std::vector<IndexRecord>& records);

enum class PartKind { Global, Poselet, Face };

const char* to_string(PartKind kind);
PartKind parse_part_kind(std::string_view name);

struct PartInfo {
  std::uint32_t part_id = 0;
  std::string name;
  PartKind kind = PartKind::Poselet;
};

/// Part 0 is always the global part; ids are contiguous.
class PartRegistry {
 public:
  PartRegistry() = default;
  explicit PartRegistry(std::vector<PartInfo> parts);

  const std::vector<PartInfo>& parts() const { return parts_; }
  std::size_t size() const { return parts_.size(); }
  /// Number of non-global parts.
  std::size_t k() const { return parts_.empty() ? 0 : parts_.size() - 1; }
  const PartInfo& operator[](std::size_t id) const { return parts_.at(id); }
  std::optional<std::uint32_t> face_part() const;

 private:
  std::vector<PartInfo> parts_;
};

PartRegistry load_registry(const std::filesystem::path& path);
void save_registry(const std::filesystem::path& path, const PartRegistry& registry);

// Shortest round-trip decimal formatting, used by every text writer.
std::string format_double(double v);
double parse_double(std::string_view s);
std::uint64_t parse_u64(std::string_view s);
std::vector<std::string_view> split_tabs(std::string_view line);

}  // namespace piper
