#include "roslac/gpr.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>

#include "roslac/error.hpp"

namespace roslac {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(std::string_view field, std::size_t line) {
  const std::string t = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw FormatError("fingerprint CSV line " + std::to_string(line) + ": bad number '" + t + "'");
  }
  return v;
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

void KernelParams::validate() const {
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) throw ConfigError("kernel lengthscale must be > 0");
  if (!(signal_var > 0.0) || !std::isfinite(signal_var)) throw ConfigError("kernel signal_var must be > 0");
  if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) throw ConfigError("kernel noise_var must be >= 0");
}

double rbf_kernel(const Vec3& a, const Vec3& b, const KernelParams& params) {
  const double d2 = (a - b).squaredNorm();
  return params.signal_var * std::exp(-d2 / (2.0 * params.lengthscale * params.lengthscale));
}

GprModel GprModel::fit(std::span<const Fingerprint> data, const KernelParams& params) {
  params.validate();
  const std::size_t n = data.size();
  if (n == 0) throw DegenerateTrainingError("no fingerprints to fit");
  if (n > kMaxTrainingPoints) {
    throw DegenerateTrainingError("exact GPR is capped at " + std::to_string(kMaxTrainingPoints) + " fingerprints");
  }
  for (const auto& f : data) {
    if (!f.position.allFinite() || !f.field.allFinite()) {
      throw DegenerateTrainingError("fingerprint with non-finite entries");
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if ((data[a].position - data[b].position).norm() <= 1e-6) {
        throw DegenerateTrainingError("duplicate fingerprint positions (indices " + std::to_string(a) + ", " +
                                      std::to_string(b) + ")");
      }
    }
  }

  GprModel model;
  model.params_ = params;
  model.positions_.reserve(n);
  Eigen::MatrixX3d y(static_cast<Eigen::Index>(n), 3);
  for (std::size_t k = 0; k < n; ++k) {
    model.positions_.push_back(data[k].position);
    y.row(static_cast<Eigen::Index>(k)) = data[k].field.transpose();
  }
  model.mean_ = y.colwise().mean().transpose();
  y.rowwise() -= model.mean_.transpose();

  Eigen::MatrixXd kmat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index a = 0; a < kmat.rows(); ++a) {
    kmat(a, a) = params.signal_var + params.noise_var;
    for (Eigen::Index b = a + 1; b < kmat.cols(); ++b) {
      kmat(a, b) = kmat(b, a) = rbf_kernel(model.positions_[a], model.positions_[b], params);
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt(kmat);
  if (llt.info() != Eigen::Success) {
    model.jitter_ = 1e-8 * params.signal_var;
    kmat.diagonal().array() += model.jitter_;
    llt.compute(kmat);
    if (llt.info() != Eigen::Success) {
      throw DegenerateTrainingError("kernel matrix is not positive definite even after jitter");
    }
  }
  model.alpha_ = llt.solve(y);
  return model;
}

Vec3 GprModel::predict(const Vec3& p) const {
  Vec3 out = mean_;
  for (std::size_t k = 0; k < positions_.size(); ++k) {
    out += rbf_kernel(p, positions_[k], params_) * alpha_.row(static_cast<Eigen::Index>(k)).transpose();
  }
  return out;
}

MagneticGridMap build_grid(const GprModel& model, const GridSpec& spec) {
  spec.validate();
  std::vector<Vec3> values(static_cast<std::size_t>(spec.nx) * spec.ny);
  for (std::uint32_t j = 0; j < spec.ny; ++j) {
    for (std::uint32_t i = 0; i < spec.nx; ++i) {
      values[static_cast<std::size_t>(j) * spec.nx + i] = model.predict(spec.node_position(i, j));
    }
  }
  return MagneticGridMap(spec, std::move(values));
}

std::vector<Fingerprint> read_fingerprints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fingerprint file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("fingerprint CSV is empty");
  {
    std::string header;
    for (char c : line) {
      if (c != ' ' && c != '\t' && c != '\r') header.push_back(c);
    }
    if (header != "x,y,z,bx,by,bz") throw FormatError("fingerprint CSV header must be x,y,z,bx,by,bz");
  }
  std::vector<Fingerprint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    double v[6];
    std::size_t start = 0;
    for (int k = 0; k < 6; ++k) {
      const auto comma = line.find(',', start);
      if ((k < 5) == (comma == std::string::npos)) {
        throw FormatError("fingerprint CSV line " + std::to_string(lineno) + ": expected 6 columns");
      }
      v[k] = parse_double(std::string_view(line).substr(start, comma - start), lineno);
      start = comma + 1;
    }
    out.push_back({{v[0], v[1], v[2]}, {v[3], v[4], v[5]}});
  }
  return out;
}

void write_fingerprints(std::span<const Fingerprint> data, const std::filesystem::path& path) {
  std::string buf = "x,y,z,bx,by,bz\n";
  for (const auto& f : data) {
    for (int k = 0; k < 3; ++k) {
      append_double(buf, f.position[k]);
      buf.push_back(',');
    }
    for (int k = 0; k < 3; ++k) {
      append_double(buf, f.field[k]);
      buf.push_back(k == 2 ? '\n' : ',');
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open fingerprint file for writing: " + path.string());
  out << buf;
  if (!out) throw IoError("failed writing fingerprint file: " + path.string());
}

}  // namespace roslac
