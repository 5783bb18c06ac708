#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "roslac/error.hpp"
#include "roslac/geom.hpp"

namespace roslac {

/// Point dipole. The moment absorbs μ0/4π, so units are µT·m³.
struct DipoleSource {
  Vec3 position = Vec3::Zero();
  Vec3 moment = Vec3::Zero();
};

/// Uniform background field plus a superposition of point dipoles.
struct FieldModel {
  Vec3 earth_field = Vec3::Zero();
  std::vector<DipoleSource> dipoles;
};

/// B = (3(m·r̂)r̂ − m)/‖r‖³ with r = p − d.position.
/// Throws DegenerateQueryError when ‖r‖ < 1e-6 m.
Vec3 dipole_field(const Vec3& p, const DipoleSource& d);

Vec3 sample_field(const FieldModel& model, const Vec3& p);

/// Planar grid layout. Node (i, j) sits at origin + (i, j)·resolution, z = plane_height.
struct GridSpec {
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double resolution = 0.1;
  std::uint32_t nx = 2;
  std::uint32_t ny = 2;
  double plane_height = 0.0;

  void validate() const;
  Vec3 node_position(std::uint32_t i, std::uint32_t j) const;
  double x_max() const { return origin.x() + resolution * (nx - 1); }
  double y_max() const { return origin.y() + resolution * (ny - 1); }
};

/// Field value and spatial Jacobian at a query point.
struct FieldSample {
  Vec3 value;
  Mat3 gradient;  ///< columns ∂/∂x, ∂/∂y, ∂/∂z (the last is zero)
};

/// Dense 2-D grid of 3-vector field values with bilinear lookup.
///
/// Immutable after construction, so concurrent queries are safe.
class MagneticGridMap {
 public:
  /// `values` are row-major with i (x) fastest: values[j·nx + i].
  MagneticGridMap(const GridSpec& spec, std::vector<Vec3> values);

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const Vec3> values() const noexcept { return values_; }
  const Vec3& node(std::uint32_t i, std::uint32_t j) const {
    return values_[static_cast<std::size_t>(j) * spec_.nx + i];
  }

  /// True when (p.x, p.y) lies inside the grid's bounding rectangle.
  bool contains(const Vec3& p) const noexcept;

  /// Bilinear blend of the four surrounding nodes; p.z is ignored.
  /// Throws OutOfBoundsError outside the grid.
  Vec3 interpolate(const Vec3& p) const;
  /// Analytic derivative of the bilinear surface.
  Mat3 gradient(const Vec3& p) const;
  FieldSample sample(const Vec3& p) const;

 private:
  struct Cell {
    std::uint32_t i, j;
    double a, b;  // fractional offsets in [0, 1]
  };
  Cell locate(const Vec3& p) const;

  GridSpec spec_;
  std::vector<Vec3> values_;
};

/// Samples `model` at every node. Throws ConfigError if a dipole lies within
/// one cell of the grid plane inside the (one-cell padded) grid footprint.
MagneticGridMap rasterize(const FieldModel& model, const GridSpec& spec);

/// Binary map file error with a reason code.
class MapFileError : public FormatError {
 public:
  enum class Kind { kMalformed, kDimensionMismatch };
  MapFileError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// "MAGMAP01" | f64 origin[2], resolution, plane_height | u32 nx, ny |
/// nx·ny·3 f64 values, all little-endian.
void save_map(const MagneticGridMap& map, const std::filesystem::path& path);
MagneticGridMap load_map(const std::filesystem::path& path);

}  // namespace roslac
