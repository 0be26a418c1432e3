#include "piper/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "piper/error.hpp"
#include "piper/simd.hpp"

namespace piper {

namespace le {

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

namespace {
void read_exact(std::istream& in, unsigned char* b, std::size_t n) {
  in.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw Error(ErrorCode::Format, "unexpected end of file");
}
}  // namespace

std::uint8_t get_u8(std::istream& in) {
  unsigned char b;
  read_exact(in, &b, 1);
  return b;
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, b, 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace le

FeatureMatrix::FeatureMatrix(std::uint32_t part_id, std::size_t dim) : part_id_(part_id), dim_(dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "feature dimension must be positive");
}

void FeatureMatrix::add(InstanceId id, std::span<const double> row) {
  if (row.size() != dim_) {
    throw Error(ErrorCode::DimensionMismatch, "feature row has " + std::to_string(row.size()) +
                                                  " values, expected " + std::to_string(dim_));
  }
  if (!std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
    throw Error(ErrorCode::InvalidArgument, "non-finite feature for instance " + std::to_string(id));
  }
  if (!index_.emplace(id, ids_.size()).second) {
    throw Error(ErrorCode::InvalidArgument, "duplicate feature row for instance " + std::to_string(id));
  }
  ids_.push_back(id);
  data_.insert(data_.end(), row.begin(), row.end());
}

std::optional<std::span<const double>> FeatureMatrix::find(InstanceId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return row(it->second);
}

void FeatureMatrix::l2_normalize() {
  for (std::size_t r = 0; r < rows(); ++r) {
    std::span<double> v{data_.data() + r * dim_, dim_};
    const double norm = std::sqrt(simd::dot(v, v));
    if (norm > 0) simd::scale(1.0 / norm, v);
  }
  normalized_ = true;
}

void write_features(std::ostream& out, const FeatureMatrix& m) {
  out.write("PFV1", 4);
  le::put_u32(out, m.part_id());
  le::put_u32(out, static_cast<std::uint32_t>(m.dim()));
  le::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  le::put_u8(out, m.normalized() ? 1 : 0);
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m.id(a) < m.id(b); });
  for (std::size_t r : order) {
    le::put_u64(out, m.id(r));
    for (double v : m.row(r)) le::put_f32(out, static_cast<float>(v));
  }
}

FeatureMatrix read_features(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "PFV1", 4) != 0) {
    throw Error(ErrorCode::Format, "not a PFV1 feature file");
  }
  const auto part_id = le::get_u32(in);
  const auto dim = le::get_u32(in);
  const auto n = le::get_u32(in);
  const auto flag = le::get_u8(in);
  if (flag > 1) throw Error(ErrorCode::Format, "bad normalization flag");
  FeatureMatrix m(part_id, dim);
  std::vector<double> row(dim);
  for (std::uint32_t r = 0; r < n; ++r) {
    const auto id = le::get_u64(in);
    for (auto& v : row) v = le::get_f32(in);
    m.add(id, row);
  }
  m.set_normalized_flag(flag == 1);
  return m;
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_features(out, m);
}

FeatureMatrix load_features(const std::filesystem::path& path, bool normalize) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  auto m = read_features(in);
  if (normalize && !m.normalized()) m.l2_normalize();
  return m;
}

std::filesystem::path feature_file_name(std::uint32_t part_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part_%03u.pfv", part_id);
  return buf;
}

}  // namespace piper
