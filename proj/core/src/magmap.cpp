#include "roslac/magmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>

namespace roslac {

namespace {

constexpr std::string_view kMagic = "MAGMAP01";
constexpr std::size_t kHeaderBytes = 8 + 4 * 8 + 2 * 4;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  out.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

Vec3 dipole_field(const Vec3& p, const DipoleSource& d) {
  const Vec3 r = p - d.position;
  const double dist = r.norm();
  if (dist < 1e-6) {
    throw DegenerateQueryError("field query coincides with a dipole source");
  }
  const Vec3 rh = r / dist;
  return (3.0 * d.moment.dot(rh) * rh - d.moment) / (dist * dist * dist);
}

Vec3 sample_field(const FieldModel& model, const Vec3& p) {
  Vec3 b = model.earth_field;
  for (const auto& d : model.dipoles) b += dipole_field(p, d);
  return b;
}

void GridSpec::validate() const {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw ConfigError("grid resolution must be positive");
  }
  if (nx < 2 || ny < 2) throw ConfigError("grid needs at least 2x2 nodes");
  if (!origin.allFinite() || !std::isfinite(plane_height)) {
    throw ConfigError("grid origin and plane height must be finite");
  }
}

Vec3 GridSpec::node_position(std::uint32_t i, std::uint32_t j) const {
  return {origin.x() + resolution * i, origin.y() + resolution * j, plane_height};
}

MagneticGridMap::MagneticGridMap(const GridSpec& spec, std::vector<Vec3> values)
    : spec_(spec), values_(std::move(values)) {
  spec_.validate();
  if (values_.size() != static_cast<std::size_t>(spec_.nx) * spec_.ny) {
    throw ConfigError("map value count does not match nx*ny");
  }
  for (const auto& v : values_) {
    if (!v.allFinite()) throw ConfigError("map contains non-finite values");
  }
}

bool MagneticGridMap::contains(const Vec3& p) const noexcept {
  const double u = (p.x() - spec_.origin.x()) / spec_.resolution;
  const double v = (p.y() - spec_.origin.y()) / spec_.resolution;
  return u >= 0.0 && v >= 0.0 && u <= spec_.nx - 1 && v <= spec_.ny - 1;
}

MagneticGridMap::Cell MagneticGridMap::locate(const Vec3& p) const {
  if (!contains(p)) throw OutOfBoundsError(p);
  const double u = (p.x() - spec_.origin.x()) / spec_.resolution;
  const double v = (p.y() - spec_.origin.y()) / spec_.resolution;
  const auto i = std::min(static_cast<std::uint32_t>(u), spec_.nx - 2);
  const auto j = std::min(static_cast<std::uint32_t>(v), spec_.ny - 2);
  return {i, j, u - i, v - j};
}

Vec3 MagneticGridMap::interpolate(const Vec3& p) const { return sample(p).value; }

Mat3 MagneticGridMap::gradient(const Vec3& p) const { return sample(p).gradient; }

FieldSample MagneticGridMap::sample(const Vec3& p) const {
  const Cell c = locate(p);
  const Vec3& v00 = node(c.i, c.j);
  const Vec3& v10 = node(c.i + 1, c.j);
  const Vec3& v01 = node(c.i, c.j + 1);
  const Vec3& v11 = node(c.i + 1, c.j + 1);
  const double a = c.a, b = c.b;

  FieldSample s;
  s.value = (1 - a) * (1 - b) * v00 + a * (1 - b) * v10 + (1 - a) * b * v01 + a * b * v11;
  const double inv_h = 1.0 / spec_.resolution;
  s.gradient.col(0) = ((1 - b) * (v10 - v00) + b * (v11 - v01)) * inv_h;
  s.gradient.col(1) = ((1 - a) * (v01 - v00) + a * (v11 - v10)) * inv_h;
  s.gradient.col(2).setZero();
  return s;
}

MagneticGridMap rasterize(const FieldModel& model, const GridSpec& spec) {
  spec.validate();
  const double h = spec.resolution;
  for (const auto& d : model.dipoles) {
    const bool over_grid = d.position.x() > spec.origin.x() - h && d.position.x() < spec.x_max() + h &&
                           d.position.y() > spec.origin.y() - h && d.position.y() < spec.y_max() + h;
    if (over_grid && std::abs(d.position.z() - spec.plane_height) < h) {
      std::ostringstream os;
      os << "dipole at (" << d.position.transpose() << ") lies inside the mapped region";
      throw ConfigError(os.str());
    }
  }
  std::vector<Vec3> values(static_cast<std::size_t>(spec.nx) * spec.ny);
  for (std::uint32_t j = 0; j < spec.ny; ++j) {
    for (std::uint32_t i = 0; i < spec.nx; ++i) {
      values[static_cast<std::size_t>(j) * spec.nx + i] = sample_field(model, spec.node_position(i, j));
    }
  }
  return MagneticGridMap(spec, std::move(values));
}

void save_map(const MagneticGridMap& map, const std::filesystem::path& path) {
  const GridSpec& s = map.spec();
  std::string buf;
  buf.reserve(kHeaderBytes + map.values().size() * 24);
  buf.append(kMagic);
  put_le(buf, s.origin.x());
  put_le(buf, s.origin.y());
  put_le(buf, s.resolution);
  put_le(buf, s.plane_height);
  put_le(buf, s.nx);
  put_le(buf, s.ny);
  for (const auto& v : map.values()) {
    put_le(buf, v.x());
    put_le(buf, v.y());
    put_le(buf, v.z());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open map file for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing map file: " + path.string());
}

MagneticGridMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open map file: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  using Kind = MapFileError::Kind;
  if (buf.size() < kHeaderBytes) throw MapFileError(Kind::kMalformed, "map file truncated in header");
  if (std::string_view(buf.data(), kMagic.size()) != kMagic) {
    throw MapFileError(Kind::kMalformed, "bad map file magic");
  }
  const char* p = buf.data() + kMagic.size();
  GridSpec s;
  s.origin.x() = get_le<double>(p);
  s.origin.y() = get_le<double>(p + 8);
  s.resolution = get_le<double>(p + 16);
  s.plane_height = get_le<double>(p + 24);
  s.nx = get_le<std::uint32_t>(p + 32);
  s.ny = get_le<std::uint32_t>(p + 36);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw MapFileError(Kind::kMalformed, std::string("invalid map header: ") + e.what());
  }

  const std::size_t payload = buf.size() - kHeaderBytes;
  if (payload % 24 != 0) throw MapFileError(Kind::kMalformed, "map payload truncated mid-record");
  const std::size_t count = static_cast<std::size_t>(s.nx) * s.ny;
  if (payload / 24 != count) {
    throw MapFileError(Kind::kDimensionMismatch, "map header nx*ny does not match payload length");
  }
  std::vector<Vec3> values(count);
  const char* q = buf.data() + kHeaderBytes;
  for (std::size_t k = 0; k < count; ++k, q += 24) {
    values[k] = {get_le<double>(q), get_le<double>(q + 8), get_le<double>(q + 16)};
  }
  try {
    return MagneticGridMap(s, std::move(values));
  } catch (const ConfigError& e) {
    throw MapFileError(Kind::kMalformed, e.what());
  }
}

}  // namespace roslac
