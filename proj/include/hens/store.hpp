#pragma once

// Binary container for 4-D ensemble fields.
//
// File layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "HENS"
//   4       2     format version (1)
//   6       1     axis order: 0 = (ensemble, lead, lat, lon), 1 = (lead, lat, ensemble, lon)
//   7       1     dtype code: 1 = IEEE-754 binary32
//   8       16    n_ensemble, n_lead, n_lat, n_lon as u32
//   24      16    variable name, NUL padded
//   40      20    init time (ISO-8601 text), NUL padded
//   60      4     reserved, zero
//   64      ...   payload, 4 * n_ensemble * n_lead * n_lat * n_lon bytes
//
// A chunk is the unit of contiguous storage: one (lead, lat) slab holding
// every member at every longitude in analysis order, one (member, lead)
// field of lat x lon values in generation order.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hens::store {

inline constexpr std::size_t kHeaderBytes = 64;
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

enum class AxisOrder : std::uint8_t { gen = 0, analysis = 1 };

const char* to_string(AxisOrder order);

struct CubeDims {
  std::uint32_t n_ensemble = 0;
  std::uint32_t n_lead = 0;
  std::uint32_t n_lat = 0;
  std::uint32_t n_lon = 0;

  /// Product of the four dims; throws UsageError on zero dims or if the
  /// payload byte count would not fit in 64 bits.
  std::uint64_t element_count() const;
  std::uint64_t payload_bytes() const { return element_count() * 4; }
  std::uint64_t cell_count() const {
    return static_cast<std::uint64_t>(n_lead) * n_lat * n_lon;
  }

  bool operator==(const CubeDims&) const = default;
};

struct CubeHeader {
  CubeDims dims;
  AxisOrder order = AxisOrder::gen;
  std::string variable_name;
  std::string init_time;

  bool operator==(const CubeHeader&) const = default;
};

std::array<std::uint8_t, kHeaderBytes> encode_header(const CubeHeader& header);
CubeHeader decode_header(std::span<const std::uint8_t, kHeaderBytes> bytes);

struct ChunkSpec {
  std::uint64_t chunk_elements = 0;
  std::uint64_t chunk_bytes = 0;
  std::uint64_t chunk_count = 0;
};

ChunkSpec chunk_spec(const CubeDims& dims, AxisOrder order);

/// Flat element offset of (member, lead, lat, lon) within the payload.
std::uint64_t element_offset(const CubeDims& dims, AxisOrder order, std::uint32_t member,
                             std::uint32_t lead, std::uint32_t lat, std::uint32_t lon);

/// In-memory cube. `values` follows `header.order`.
struct EnsembleCube {
  CubeHeader header;
  std::vector<float> values;

  static EnsembleCube zeros(CubeDims dims, AxisOrder order, std::string variable_name = {},
                            std::string init_time = {});

  float& at(std::uint32_t member, std::uint32_t lead, std::uint32_t lat, std::uint32_t lon);
  float at(std::uint32_t member, std::uint32_t lead, std::uint32_t lat, std::uint32_t lon) const;
};

/// Writes header and payload. Returns the number of bytes written.
std::uint64_t write_cube(const EnsembleCube& cube, const std::filesystem::path& path);

EnsembleCube read_cube(const std::filesystem::path& path);

/// Read-only handle over a cube file. Reads are positional, so one handle
/// can serve concurrent readers.
class CubeReader {
 public:
  explicit CubeReader(const std::filesystem::path& path);
  ~CubeReader();
  CubeReader(CubeReader&& other) noexcept;
  CubeReader& operator=(CubeReader&&) = delete;
  CubeReader(const CubeReader&) = delete;
  CubeReader& operator=(const CubeReader&) = delete;

  const CubeHeader& header() const { return header_; }
  const CubeDims& dims() const { return header_.dims; }
  const std::filesystem::path& path() const { return path_; }
  ChunkSpec chunks() const { return chunk_spec(header_.dims, header_.order); }

  /// Reads `out.size()` consecutive payload elements starting at `first`.
  void read(std::uint64_t first, std::span<float> out) const;
  void read_chunk(std::uint64_t chunk, std::span<float> out) const;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  CubeHeader header_;
};

/// Writes a cube file piecewise. Data goes to "<path>.partial", which is
/// renamed to `path` by commit() and removed if the writer is destroyed
/// before that.
class CubeWriter {
 public:
  CubeWriter(const std::filesystem::path& path, const CubeHeader& header);
  ~CubeWriter();
  CubeWriter(const CubeWriter&) = delete;
  CubeWriter& operator=(const CubeWriter&) = delete;

  const CubeHeader& header() const { return header_; }

  /// Writes consecutive payload elements starting at element `first`.
  void write(std::uint64_t first, std::span<const float> values);
  void commit();

 private:
  void write_raw(const void* buf, std::size_t n, std::uint64_t offset);

  std::filesystem::path path_;
  std::filesystem::path tmp_;
  int fd_ = -1;
  CubeHeader header_;
};

/// Streams `src` into `dst` with the opposite axis order, holding at most
/// `work_mem_bytes` of chunk data (plus one staging row set). The output
/// is written to a temporary sibling and renamed on success, so a failure
/// never leaves a partial `dst`.
CubeHeader transpose(const std::filesystem::path& src, const std::filesystem::path& dst,
                     std::uint64_t work_mem_bytes);

/// Generation order -> analysis order. `src` must be in generation order.
CubeHeader transpose_to_analysis_order(const std::filesystem::path& src,
                                       const std::filesystem::path& dst,
                                       std::uint64_t work_mem_bytes);

/// Analysis order -> generation order. `src` must be in analysis order.
CubeHeader transpose_to_gen_order(const std::filesystem::path& src,
                                  const std::filesystem::path& dst,
                                  std::uint64_t work_mem_bytes);

// ---------------------------------------------------------------------------
// Reductions over the ensemble axis
// ---------------------------------------------------------------------------

struct ReductionKind {
  enum class Op { mean, min, max, std, percentile, count_exceeding, bootstrap_member };
  Op op = Op::mean;
  double alpha = 0.5;         // percentile
  double threshold = 0.0;     // count_exceeding (strictly greater)
  std::uint64_t seed = 0;     // bootstrap_member

  /// Parses mean|min|max|std|p:<alpha>|count:<t>|boot:<seed>.
  static ReductionKind parse(const std::string& text);
  std::string name() const;
};

enum class NanPolicy { strict, propagate };

/// One value per (lead, lat, lon) cell, row-major in that order.
struct CellGrid {
  std::uint32_t n_lead = 0;
  std::uint32_t n_lat = 0;
  std::uint32_t n_lon = 0;
  std::vector<double> values;

  double at(std::uint32_t lead, std::uint32_t lat, std::uint32_t lon) const {
    return values[(static_cast<std::size_t>(lead) * n_lat + lat) * n_lon + lon];
  }
};

/// Reduction of one cell's members, in member order. The building block of
/// reduce_ensemble, exposed for in-memory callers.
double reduce_members(std::span<double> members, const ReductionKind& kind, std::uint64_t cell);

/// Reduces every cell of an analysis-order cube over the ensemble axis.
/// Chunks are processed in parallel; every cell lives in exactly one chunk
/// and members are combined in member order, so the result is independent
/// of scheduling.
CellGrid reduce_ensemble(const CubeReader& src, const ReductionKind& kind,
                         NanPolicy nan_policy = NanPolicy::propagate);

CellGrid reduce_ensemble(const std::filesystem::path& src, const ReductionKind& kind,
                         NanPolicy nan_policy = NanPolicy::propagate);

// ---------------------------------------------------------------------------
// Cell-major views used by the verification code
// ---------------------------------------------------------------------------

/// All members of every (lat, lon) cell of one lead time, cell-major:
/// values[cell * n_members + member], cell = lat * n_lon + lon.
struct EnsembleField {
  std::uint32_t n_members = 0;
  std::uint32_t n_lat = 0;
  std::uint32_t n_lon = 0;
  std::vector<float> values;

  std::size_t n_cells() const { return static_cast<std::size_t>(n_lat) * n_lon; }
  std::span<const float> cell(std::size_t c) const {
    return std::span<const float>(values).subspan(c * n_members, n_members);
  }
};

EnsembleField load_lead(const CubeReader& src, std::uint32_t lead);

/// One member's (lat, lon) field at one lead, row-major.
std::vector<double> load_member_field(const CubeReader& src, std::uint32_t member,
                                      std::uint32_t lead);

}  // namespace hens::store
