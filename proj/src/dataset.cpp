#include "piper/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "piper/error.hpp"

namespace piper {

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Leftover: return "leftover";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  if (name == "leftover") return Split::Leftover;
  throw Error(ErrorCode::Format, "unknown split '" + std::string(name) + "'");
}

const char* to_string(PartKind kind) {
  switch (kind) {
    case PartKind::Global: return "global";
    case PartKind::Poselet: return "poselet";
    case PartKind::Face: return "face";
  }
  return "?";
}

PartKind parse_part_kind(std::string_view name) {
  if (name == "global") return PartKind::Global;
  if (name == "poselet") return PartKind::Poselet;
  if (name == "face") return PartKind::Face;
  throw Error(ErrorCode::Format, "unknown part kind '" + std::string(name) + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Format, "bad number '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Format, "bad integer '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

namespace {

constexpr std::size_t kSplitCount = 4;

bool evaluated(Split s) { return s != Split::Leftover; }

}  // namespace

Dataset::Dataset(std::vector<IndexRecord> records) : labels_(kSplitCount) {
  std::map<std::string, Split> identity_split;
  std::map<std::string, Split> uploader_split;
  std::set<std::tuple<std::string, double, double, double, double>> heads;
  std::vector<std::set<std::string>> split_labels(kSplitCount);

  for (const auto& r : records) {
    if (!r.head.valid()) {
      throw Error(ErrorCode::InvalidGeometry,
                  "instance " + std::to_string(r.instance_id) + " has a degenerate head box");
    }
    if (by_id_.count(r.instance_id) != 0) {
      throw Error(ErrorCode::Format, "duplicate instance id " + std::to_string(r.instance_id));
    }
    by_id_.emplace(r.instance_id, by_id_.size());

    if (evaluated(r.split)) {
      auto [it, fresh] = identity_split.emplace(r.identity_label, r.split);
      if (!fresh && it->second != r.split) {
        throw Error(ErrorCode::Format, "identity '" + r.identity_label + "' appears in both " +
                                           to_string(it->second) + " and " + to_string(r.split));
      }
    }
    auto [up, up_fresh] = uploader_split.emplace(r.uploader_id, r.split);
    if (!up_fresh && up->second != r.split) {
      throw Error(ErrorCode::Format, "uploader '" + r.uploader_id + "' spans several splits");
    }
    if (!heads.emplace(r.photo_id, r.head.x, r.head.y, r.head.w, r.head.h).second) {
      throw Error(ErrorCode::Format, "duplicate head box in photo '" + r.photo_id + "'");
    }
    split_labels[static_cast<std::size_t>(r.split)].insert(r.identity_label);
  }

  std::vector<std::map<std::string, IdentityId>> dense(kSplitCount);
  for (std::size_t s = 0; s < kSplitCount; ++s) {
    for (const auto& label : split_labels[s]) {
      dense[s].emplace(label, static_cast<IdentityId>(labels_[s].size()));
      labels_[s].push_back(label);
    }
  }

  instances_.reserve(records.size());
  for (auto& r : records) {
    const auto s = static_cast<std::size_t>(r.split);
    instances_.push_back(Instance{r.instance_id, std::move(r.photo_id), std::move(r.album_id),
                                  std::move(r.uploader_id), r.head, dense[s].at(r.identity_label),
                                  r.split});
  }
}

std::vector<const Instance*> Dataset::in_split(Split split) const {
  std::vector<const Instance*> out;
  for (const auto& inst : instances_) {
    if (inst.split == split) out.push_back(&inst);
  }
  std::sort(out.begin(), out.end(),
            [](const Instance* a, const Instance* b) { return a->instance_id < b->instance_id; });
  return out;
}

std::size_t Dataset::identity_count(Split split) const {
  return labels_.empty() ? 0 : labels_[static_cast<std::size_t>(split)].size();
}

const std::string& Dataset::identity_label(Split split, IdentityId id) const {
  return labels_.at(static_cast<std::size_t>(split)).at(id);
}

const Instance* Dataset::find(InstanceId id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &instances_[it->second];
}

std::vector<IndexRecord> Dataset::records() const {
  std::vector<IndexRecord> out;
  out.reserve(instances_.size());
  for (const auto& inst : instances_) {
    out.push_back(IndexRecord{inst.instance_id, inst.photo_id, inst.album_id, inst.uploader_id,
                              inst.head, identity_label(inst.split, inst.identity), inst.split});
  }
  return out;
}

Dataset read_dataset(std::istream& in) {
  std::vector<IndexRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 10) {
      throw Error(ErrorCode::Format, "dataset line " + std::to_string(lineno) + ": expected 10 fields, got " +
                                         std::to_string(f.size()));
    }
    IndexRecord r;
    r.instance_id = parse_u64(f[0]);
    r.photo_id = f[1];
    r.album_id = f[2];
    r.uploader_id = f[3];
    r.head = BBox{parse_double(f[4]), parse_double(f[5]), parse_double(f[6]), parse_double(f[7])};
    r.identity_label = f[8];
    r.split = parse_split(f[9]);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const std::vector<IndexRecord>& records) {
  for (const auto& r : records) {
    out << r.instance_id << '\t' << r.photo_id << '\t' << r.album_id << '\t' << r.uploader_id << '\t'
        << format_double(r.head.x) << '\t' << format_double(r.head.y) << '\t' << format_double(r.head.w)
        << '\t' << format_double(r.head.h) << '\t' << r.identity_label << '\t' << to_string(r.split)
        << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const std::vector<IndexRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_dataset(out, records);
}

PartRegistry::PartRegistry(std::vector<PartInfo> parts) : parts_(std::move(parts)) {
  if (parts_.empty() || parts_[0].kind != PartKind::Global) {
    throw Error(ErrorCode::InvalidArgument, "part 0 must be the global part");
  }
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    if (parts_[i].part_id != i) {
      throw Error(ErrorCode::InvalidArgument, "part ids must be contiguous from 0");
    }
    if (i > 0 && parts_[i].kind == PartKind::Global) {
      throw Error(ErrorCode::InvalidArgument, "only part 0 may be global");
    }
  }
}

std::optional<std::uint32_t> PartRegistry::face_part() const {
  for (const auto& p : parts_) {
    if (p.kind == PartKind::Face) return p.part_id;
  }
  return std::nullopt;
}

PartRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<PartInfo> parts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) throw Error(ErrorCode::Format, "registry line needs 3 fields");
    parts.push_back(PartInfo{static_cast<std::uint32_t>(parse_u64(f[0])), std::string(f[1]),
                             parse_part_kind(f[2])});
  }
  return PartRegistry(std::move(parts));
}

void save_registry(const std::filesystem::path& path, const PartRegistry& registry) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& p : registry.parts()) {
    out << p.part_id << '\t' << p.name << '\t' << to_string(p.kind) << '\n';
  }
}

}  // namespace piper
