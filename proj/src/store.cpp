#include "hens/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <utility>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"

namespace hens::store {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'H', 'E', 'N', 'S'};
constexpr std::size_t kNameBytes = 16;
constexpr std::size_t kTimeBytes = 20;

void put_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::string get_text(const std::uint8_t* p, std::size_t n) {
  std::size_t len = 0;
  while (len < n && p[len] != 0) ++len;
  return std::string(reinterpret_cast<const char*>(p), len);
}

// Payload conversion between host floats and little-endian bytes.
void host_to_le(std::span<const float> in, std::uint8_t* out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out, in.data(), in.size_bytes());
  } else {
    for (std::size_t i = 0; i < in.size(); ++i)
      put_u32(out + 4 * i, std::bit_cast<std::uint32_t>(in[i]));
  }
}

void le_to_host(std::span<float> data) {
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : data) {
      std::uint8_t b[4];
      std::memcpy(b, &v, 4);
      v = std::bit_cast<float>(get_u32(b));
    }
  }
}

[[noreturn]] void io_error(const std::string& what, const std::filesystem::path& path) {
  throw DataError(what + " '" + path.string() + "': " + std::strerror(errno));
}

// RAII file descriptor with positional, fully-completing reads and writes.
class File {
 public:
  File(const std::filesystem::path& path, int flags, mode_t mode = 0644) : path_(path) {
    fd_ = ::open(path.c_str(), flags | O_CLOEXEC, mode);
    if (fd_ < 0) io_error("cannot open", path);
  }
  ~File() {
    if (fd_ >= 0) ::close(fd_);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  void pread_all(void* buf, std::size_t n, std::uint64_t offset) const {
    auto* p = static_cast<std::uint8_t*>(buf);
    while (n > 0) {
      const ssize_t got = ::pread(fd_, p, n, static_cast<off_t>(offset));
      if (got < 0) {
        if (errno == EINTR) continue;
        io_error("read failed on", path_);
      }
      if (got == 0) throw DataError("unexpected end of file in '" + path_.string() + "'");
      p += got;
      n -= static_cast<std::size_t>(got);
      offset += static_cast<std::uint64_t>(got);
    }
  }

  int release() { return std::exchange(fd_, -1); }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

CubeHeader read_header_from(const File& f) {
  std::array<std::uint8_t, kHeaderBytes> bytes{};
  f.pread_all(bytes.data(), bytes.size(), 0);
  return decode_header(bytes);
}

}  // namespace

const char* to_string(AxisOrder order) {
  return order == AxisOrder::gen ? "gen" : "analysis";
}

std::uint64_t CubeDims::element_count() const {
  if (n_ensemble == 0 || n_lead == 0 || n_lat == 0 || n_lon == 0)
    throw UsageError("cube dimensions must be nonzero");
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max() / 4;
  std::uint64_t n = n_ensemble;
  for (std::uint64_t d : {std::uint64_t{n_lead}, std::uint64_t{n_lat}, std::uint64_t{n_lon}}) {
    if (n > kMax / d) throw UsageError("cube byte count overflows 64 bits");
    n *= d;
  }
  return n;
}

std::array<std::uint8_t, kHeaderBytes> encode_header(const CubeHeader& h) {
  h.dims.element_count();
  if (h.variable_name.size() > kNameBytes)
    throw UsageError("variable name longer than 16 bytes: " + h.variable_name);
  if (h.init_time.size() > kTimeBytes)
    throw UsageError("init time longer than 20 bytes: " + h.init_time);
  std::array<std::uint8_t, kHeaderBytes> b{};
  std::copy(kMagic.begin(), kMagic.end(), b.begin());
  put_u16(&b[4], kFormatVersion);
  b[6] = static_cast<std::uint8_t>(h.order);
  b[7] = kDtypeFloat32;
  put_u32(&b[8], h.dims.n_ensemble);
  put_u32(&b[12], h.dims.n_lead);
  put_u32(&b[16], h.dims.n_lat);
  put_u32(&b[20], h.dims.n_lon);
  std::memcpy(&b[24], h.variable_name.data(), h.variable_name.size());
  std::memcpy(&b[40], h.init_time.data(), h.init_time.size());
  return b;
}

CubeHeader decode_header(std::span<const std::uint8_t, kHeaderBytes> b) {
  if (!std::equal(kMagic.begin(), kMagic.end(), b.begin()))
    throw DataError("not a HENS cube (bad magic)");
  if (const auto v = get_u16(&b[4]); v != kFormatVersion)
    throw DataError("unsupported cube format version " + std::to_string(v));
  if (b[6] > 1) throw DataError("invalid axis order code " + std::to_string(b[6]));
  if (b[7] != kDtypeFloat32) throw DataError("unsupported dtype code " + std::to_string(b[7]));
  CubeHeader h;
  h.order = static_cast<AxisOrder>(b[6]);
  h.dims = {get_u32(&b[8]), get_u32(&b[12]), get_u32(&b[16]), get_u32(&b[20])};
  h.variable_name = get_text(&b[24], kNameBytes);
  h.init_time = get_text(&b[40], kTimeBytes);
  try {
    h.dims.element_count();
  } catch (const UsageError& e) {
    throw DataError(std::string("invalid cube header: ") + e.what());
  }
  return h;
}

ChunkSpec chunk_spec(const CubeDims& dims, AxisOrder order) {
  ChunkSpec spec;
  const std::uint64_t total = dims.element_count();
  spec.chunk_elements = order == AxisOrder::analysis
                            ? std::uint64_t{dims.n_ensemble} * dims.n_lon
                            : std::uint64_t{dims.n_lat} * dims.n_lon;
  spec.chunk_bytes = spec.chunk_elements * 4;
  spec.chunk_count = total / spec.chunk_elements;
  return spec;
}

std::uint64_t element_offset(const CubeDims& d, AxisOrder order, std::uint32_t member,
                             std::uint32_t lead, std::uint32_t lat, std::uint32_t lon) {
  if (order == AxisOrder::gen)
    return ((std::uint64_t{member} * d.n_lead + lead) * d.n_lat + lat) * d.n_lon + lon;
  return ((std::uint64_t{lead} * d.n_lat + lat) * d.n_ensemble + member) * d.n_lon + lon;
}

EnsembleCube EnsembleCube::zeros(CubeDims dims, AxisOrder order, std::string variable_name,
                                 std::string init_time) {
  EnsembleCube c;
  c.header = {dims, order, std::move(variable_name), std::move(init_time)};
  c.values.assign(dims.element_count(), 0.0f);
  return c;
}

float& EnsembleCube::at(std::uint32_t m, std::uint32_t l, std::uint32_t la, std::uint32_t lo) {
  return values[element_offset(header.dims, header.order, m, l, la, lo)];
}

float EnsembleCube::at(std::uint32_t m, std::uint32_t l, std::uint32_t la,
                       std::uint32_t lo) const {
  return values[element_offset(header.dims, header.order, m, l, la, lo)];
}

std::uint64_t write_cube(const EnsembleCube& cube, const std::filesystem::path& path) {
  if (cube.values.size() != cube.header.dims.element_count())
    throw UsageError("cube payload size does not match its dimensions");
  CubeWriter w(path, cube.header);
  w.write(0, cube.values);
  w.commit();
  return kHeaderBytes + cube.header.dims.payload_bytes();
}

EnsembleCube read_cube(const std::filesystem::path& path) {
  CubeReader r(path);
  EnsembleCube c;
  c.header = r.header();
  c.values.resize(r.dims().element_count());
  r.read(0, c.values);
  return c;
}

CubeReader::CubeReader(const std::filesystem::path& path) : path_(path) {
  File f(path, O_RDONLY);
  header_ = read_header_from(f);
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0) io_error("cannot stat", path);
  const std::uint64_t expected = kHeaderBytes + header_.dims.payload_bytes();
  if (static_cast<std::uint64_t>(st.st_size) != expected)
    throw DataError("cube '" + path.string() + "' has " + std::to_string(st.st_size) +
                    " bytes, header implies " + std::to_string(expected));
  fd_ = f.release();
}

CubeReader::~CubeReader() {
  if (fd_ >= 0) ::close(fd_);
}

CubeReader::CubeReader(CubeReader&& other) noexcept
    : path_(std::move(other.path_)),
      fd_(std::exchange(other.fd_, -1)),
      header_(std::move(other.header_)) {}

void CubeReader::read(std::uint64_t first, std::span<float> out) const {
  if (first + out.size() > header_.dims.element_count())
    throw UsageError("read past the end of cube '" + path_.string() + "'");
  auto* bytes = reinterpret_cast<std::uint8_t*>(out.data());
  std::size_t n = out.size_bytes();
  std::uint64_t offset = kHeaderBytes + first * 4;
  while (n > 0) {
    const ssize_t got = ::pread(fd_, bytes, n, static_cast<off_t>(offset));
    if (got < 0) {
      if (errno == EINTR) continue;
      io_error("read failed on", path_);
    }
    if (got == 0) throw DataError("unexpected end of file in '" + path_.string() + "'");
    bytes += got;
    n -= static_cast<std::size_t>(got);
    offset += static_cast<std::uint64_t>(got);
  }
  le_to_host(out);
}

void CubeReader::read_chunk(std::uint64_t chunk, std::span<float> out) const {
  const auto spec = chunks();
  if (chunk >= spec.chunk_count) throw UsageError("chunk index out of range");
  if (out.size() != spec.chunk_elements) throw UsageError("chunk buffer has the wrong size");
  read(chunk * spec.chunk_elements, out);
}

CubeWriter::CubeWriter(const std::filesystem::path& path, const CubeHeader& header)
    : path_(path), tmp_(path.string() + ".partial"), header_(header) {
  const auto bytes = encode_header(header);
  File f(tmp_, O_WRONLY | O_CREAT | O_TRUNC);
  fd_ = f.release();
  try {
    write_raw(bytes.data(), bytes.size(), 0);
  } catch (...) {
    ::close(std::exchange(fd_, -1));
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
    throw;
  }
}

CubeWriter::~CubeWriter() {
  if (fd_ >= 0) {
    ::close(fd_);
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void CubeWriter::write_raw(const void* buf, std::size_t n, std::uint64_t offset) {
  const auto* p = static_cast<const std::uint8_t*>(buf);
  while (n > 0) {
    const ssize_t put = ::pwrite(fd_, p, n, static_cast<off_t>(offset));
    if (put < 0) {
      if (errno == EINTR) continue;
      io_error("write failed on", tmp_);
    }
    p += put;
    n -= static_cast<std::size_t>(put);
    offset += static_cast<std::uint64_t>(put);
  }
}

void CubeWriter::write(std::uint64_t first, std::span<const float> values) {
  if (fd_ < 0) throw UsageError("write after commit on '" + path_.string() + "'");
  if (first + values.size() > header_.dims.element_count())
    throw UsageError("write past the end of cube '" + path_.string() + "'");
  constexpr std::size_t kBlock = 1 << 18;
  std::vector<std::uint8_t> buf(std::min<std::size_t>(values.size(), kBlock) * 4);
  for (std::size_t i = 0; i < values.size(); i += kBlock) {
    const auto part = values.subspan(i, std::min(kBlock, values.size() - i));
    host_to_le(part, buf.data());
    write_raw(buf.data(), part.size_bytes(), kHeaderBytes + (first + i) * 4);
  }
}

void CubeWriter::commit() {
  if (fd_ < 0) throw UsageError("cube '" + path_.string() + "' already committed");
  if (::close(std::exchange(fd_, -1)) != 0) {
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
    io_error("close failed on", tmp_);
  }
  std::error_code ec;
  std::filesystem::rename(tmp_, path_, ec);
  if (ec) {
    std::filesystem::remove(tmp_, ec);
    throw DataError("cannot rename '" + tmp_.string() + "' to '" + path_.string() + "'");
  }
}

// ---------------------------------------------------------------------------
// Transpose
// ---------------------------------------------------------------------------

CubeHeader transpose(const std::filesystem::path& src, const std::filesystem::path& dst,
                     std::uint64_t work_mem_bytes) {
  const CubeReader in(src);
  const CubeDims d = in.dims();
  const AxisOrder from = in.header().order;
  const AxisOrder to = from == AxisOrder::gen ? AxisOrder::analysis : AxisOrder::gen;

  // Group size counted in analysis-order chunks, one (lead, lat) slab each.
  const ChunkSpec slab = chunk_spec(d, AxisOrder::analysis);
  if (work_mem_bytes < slab.chunk_bytes)
    throw UsageError("work memory budget of " + std::to_string(work_mem_bytes) +
                     " bytes is below one chunk (" + std::to_string(slab.chunk_bytes) +
                     " bytes)");
  const std::uint64_t group = std::min(work_mem_bytes / slab.chunk_bytes, slab.chunk_count);

  CubeHeader out_header = in.header();
  out_header.order = to;

  CubeWriter out(dst, out_header);

  const std::uint64_t n_lon = d.n_lon;
  const std::uint64_t rows_per_member = std::uint64_t{d.n_lead} * d.n_lat;
  std::vector<float> slabs(group * slab.chunk_elements);
  std::vector<float> staging(group * n_lon);

  for (std::uint64_t c0 = 0; c0 < slab.chunk_count; c0 += group) {
    const std::uint64_t b = std::min(group, slab.chunk_count - c0);
    if (from == AxisOrder::gen) {
      // Rows (member, c0..c0+b) are contiguous in the source.
      for (std::uint64_t e = 0; e < d.n_ensemble; ++e) {
        const std::span<float> rows(staging.data(), b * n_lon);
        in.read((e * rows_per_member + c0) * n_lon, rows);
        for (std::uint64_t k = 0; k < b; ++k)
          std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(k * n_lon), n_lon,
                      slabs.begin() + static_cast<std::ptrdiff_t>(k * slab.chunk_elements +
                                                                  e * n_lon));
      }
      out.write(c0 * slab.chunk_elements,
                std::span<const float>(slabs.data(), b * slab.chunk_elements));
    } else {
      in.read(c0 * slab.chunk_elements, std::span<float>(slabs.data(), b * slab.chunk_elements));
      for (std::uint64_t e = 0; e < d.n_ensemble; ++e) {
        for (std::uint64_t k = 0; k < b; ++k)
          std::copy_n(slabs.begin() + static_cast<std::ptrdiff_t>(k * slab.chunk_elements +
                                                                  e * n_lon),
                      n_lon, staging.begin() + static_cast<std::ptrdiff_t>(k * n_lon));
        out.write((e * rows_per_member + c0) * n_lon,
                  std::span<const float>(staging.data(), b * n_lon));
      }
    }
  }
  out.commit();
  return out_header;
}

CubeHeader transpose_to_analysis_order(const std::filesystem::path& src,
                                       const std::filesystem::path& dst,
                                       std::uint64_t work_mem_bytes) {
  if (CubeReader(src).header().order != AxisOrder::gen)
    throw UsageError("'" + src.string() + "' is not in generation order");
  return transpose(src, dst, work_mem_bytes);
}

CubeHeader transpose_to_gen_order(const std::filesystem::path& src,
                                  const std::filesystem::path& dst,
                                  std::uint64_t work_mem_bytes) {
  if (CubeReader(src).header().order != AxisOrder::analysis)
    throw UsageError("'" + src.string() + "' is not in analysis order");
  return transpose(src, dst, work_mem_bytes);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

ReductionKind ReductionKind::parse(const std::string& text) {
  ReductionKind k;
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw UsageError("bad number in statistic '" + text + "'");
    }
  };
  if (text == "mean") {
    k.op = Op::mean;
  } else if (text == "min") {
    k.op = Op::min;
  } else if (text == "max") {
    k.op = Op::max;
  } else if (text == "std") {
    k.op = Op::std;
  } else if (text.rfind("p:", 0) == 0) {
    k.op = Op::percentile;
    k.alpha = number(text.substr(2));
    if (!(k.alpha > 0.0 && k.alpha < 1.0)) throw UsageError("percentile level must be in (0,1)");
  } else if (text.rfind("count:", 0) == 0) {
    k.op = Op::count_exceeding;
    k.threshold = number(text.substr(6));
  } else if (text.rfind("boot:", 0) == 0) {
    k.op = Op::bootstrap_member;
    try {
      k.seed = std::stoull(text.substr(5));
    } catch (const std::exception&) {
      throw UsageError("bad seed in statistic '" + text + "'");
    }
  } else {
    throw UsageError("unknown statistic '" + text + "'");
  }
  return k;
}

std::string ReductionKind::name() const {
  switch (op) {
    case Op::mean: return "mean";
    case Op::min: return "min";
    case Op::max: return "max";
    case Op::std: return "std";
    case Op::percentile: return "p:" + shortest_repr(alpha);
    case Op::count_exceeding: return "count:" + shortest_repr(threshold);
    case Op::bootstrap_member: return "boot:" + std::to_string(seed);
  }
  return {};
}

double reduce_members(std::span<double> members, const ReductionKind& kind, std::uint64_t cell) {
  using Op = ReductionKind::Op;
  const std::size_t n = members.size();
  for (double v : members)
    if (std::isnan(v)) return std::numeric_limits<double>::quiet_NaN();
  switch (kind.op) {
    case Op::mean:
      return mean(members);
    case Op::min:
      return *std::min_element(members.begin(), members.end());
    case Op::max:
      return *std::max_element(members.begin(), members.end());
    case Op::std:
      return stddev(members);
    case Op::percentile:
      return percentile_nearest_rank(members, kind.alpha);
    case Op::count_exceeding:
      return static_cast<double>(
          std::count_if(members.begin(), members.end(), [&](double v) { return v > kind.threshold; }));
    case Op::bootstrap_member: {
      const KeyedGenerator gen(kind.seed, RngDomain::bootstrap_member);
      const auto blk = gen.block(cell, 0);
      const std::uint64_t bits = static_cast<std::uint64_t>(blk[1]) << 32 | blk[0];
      const auto idx = static_cast<std::size_t>(
          (static_cast<unsigned __int128>(bits) * n) >> 64);
      return members[idx];
    }
  }
  return 0.0;
}

CellGrid reduce_ensemble(const CubeReader& src, const ReductionKind& kind, NanPolicy nan_policy) {
  const CubeDims d = src.dims();
  if (src.header().order != AxisOrder::analysis)
    throw UsageError("reduce_ensemble needs an analysis-order cube; transpose '" +
                     src.path().string() + "' first");
  if (kind.op == ReductionKind::Op::std && d.n_ensemble < 2)
    throw UsageError("std needs at least two members");

  CellGrid grid{d.n_lead, d.n_lat, d.n_lon, std::vector<double>(d.cell_count())};
  const ChunkSpec spec = src.chunks();
  parallel_for(spec.chunk_count, [&](std::size_t chunk) {
    std::vector<float> buf(spec.chunk_elements);
    std::vector<double> members(d.n_ensemble);
    src.read_chunk(chunk, buf);
    for (std::uint32_t lon = 0; lon < d.n_lon; ++lon) {
      for (std::uint32_t e = 0; e < d.n_ensemble; ++e) {
        members[e] = buf[static_cast<std::size_t>(e) * d.n_lon + lon];
        if (nan_policy == NanPolicy::strict && std::isnan(members[e])) {
          std::ostringstream os;
          os << "NaN in '" << src.path().string() << "' at lead=" << chunk / d.n_lat
             << " lat=" << chunk % d.n_lat << " lon=" << lon << " member=" << e;
          throw DataError(os.str());
        }
      }
      const std::uint64_t cell = chunk * d.n_lon + lon;
      grid.values[cell] = reduce_members(members, kind, cell);
    }
  });
  return grid;
}

CellGrid reduce_ensemble(const std::filesystem::path& src, const ReductionKind& kind,
                         NanPolicy nan_policy) {
  return reduce_ensemble(CubeReader(src), kind, nan_policy);
}

EnsembleField load_lead(const CubeReader& src, std::uint32_t lead) {
  const CubeDims d = src.dims();
  if (lead >= d.n_lead) throw UsageError("lead index out of range");
  EnsembleField f{d.n_ensemble, d.n_lat, d.n_lon, {}};
  f.values.resize(f.n_cells() * d.n_ensemble);
  const std::uint64_t n_lon = d.n_lon;
  std::vector<float> row(src.header().order == AxisOrder::analysis
                             ? std::uint64_t{d.n_ensemble} * n_lon
                             : std::uint64_t{d.n_lat} * n_lon);
  if (src.header().order == AxisOrder::analysis) {
    for (std::uint32_t lat = 0; lat < d.n_lat; ++lat) {
      src.read_chunk(std::uint64_t{lead} * d.n_lat + lat, row);
      for (std::uint32_t e = 0; e < d.n_ensemble; ++e)
        for (std::uint32_t lon = 0; lon < d.n_lon; ++lon)
          f.values[(std::uint64_t{lat} * n_lon + lon) * d.n_ensemble + e] = row[e * n_lon + lon];
    }
  } else {
    for (std::uint32_t e = 0; e < d.n_ensemble; ++e) {
      src.read(element_offset(d, AxisOrder::gen, e, lead, 0, 0), row);
      for (std::size_t c = 0; c < f.n_cells(); ++c) f.values[c * d.n_ensemble + e] = row[c];
    }
  }
  return f;
}

std::vector<double> load_member_field(const CubeReader& src, std::uint32_t member,
                                      std::uint32_t lead) {
  const CubeDims d = src.dims();
  if (member >= d.n_ensemble || lead >= d.n_lead)
    throw UsageError("member or lead index out of range");
  std::vector<double> out(std::uint64_t{d.n_lat} * d.n_lon);
  if (src.header().order == AxisOrder::gen) {
    std::vector<float> row(out.size());
    src.read(element_offset(d, AxisOrder::gen, member, lead, 0, 0), row);
    std::copy(row.begin(), row.end(), out.begin());
  } else {
    std::vector<float> row(d.n_lon);
    for (std::uint32_t lat = 0; lat < d.n_lat; ++lat) {
      src.read(element_offset(d, AxisOrder::analysis, member, lead, lat, 0), row);
      std::copy(row.begin(), row.end(), out.begin() + std::ptrdiff_t{lat} * d.n_lon);
    }
  }
  return out;
}

}  // namespace hens::store
