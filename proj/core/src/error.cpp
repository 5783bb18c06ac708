#include "roslac/error.hpp"

#include <sstream>

namespace roslac {

namespace {
std::string describe(const Eigen::Vector3d& p) {
  std::ostringstream os;
  os << "map query out of bounds at (" << p.x() << ", " << p.y() << ", " << p.z() << ")";
  return os.str();
}
}  // namespace

OutOfBoundsError::OutOfBoundsError(const Eigen::Vector3d& point)
    : Error(describe(point)), point_(point) {}

}  // namespace roslac
