#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roslac/magmap.hpp"

namespace roslac {

/// Training sample: position and three-axis field at that position.
struct Fingerprint {
  Vec3 position = Vec3::Zero();
  Vec3 field = Vec3::Zero();
};

struct KernelParams {
  double lengthscale = 1.0;   ///< m
  double signal_var = 25.0;   ///< µT²
  double noise_var = 0.04;    ///< µT², σ_n²

  void validate() const;
};

/// Squared-exponential kernel signal_var·exp(−‖a − b‖² / 2ℓ²).
double rbf_kernel(const Vec3& a, const Vec3& b, const KernelParams& params);

/// Exact GP posterior mean, one independent GP per field axis sharing the kernel.
class GprModel {
 public:
  static constexpr std::size_t kMaxTrainingPoints = 5000;

  /// Fits the model. The prior mean is the per-axis average of the training
  /// fields. Throws DegenerateTrainingError for empty or duplicate inputs,
  /// or when the kernel matrix cannot be factorized even after jitter.
  static GprModel fit(std::span<const Fingerprint> data, const KernelParams& params);

  Vec3 predict(const Vec3& p) const;

  const Vec3& mean() const noexcept { return mean_; }
  const KernelParams& params() const noexcept { return params_; }
  /// Weight matrix, one column per axis.
  const Eigen::MatrixX3d& weights() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return positions_.size(); }
  /// Jitter added to the diagonal during fitting (0 when none was needed).
  double jitter() const noexcept { return jitter_; }

 private:
  GprModel() = default;

  std::vector<Vec3> positions_;
  Eigen::MatrixX3d alpha_;
  KernelParams params_;
  Vec3 mean_ = Vec3::Zero();
  double jitter_ = 0.0;
};

/// Evaluates the posterior mean at every node of `spec`.
MagneticGridMap build_grid(const GprModel& model, const GridSpec& spec);

/// CSV with header `x,y,z,bx,by,bz`.
std::vector<Fingerprint> read_fingerprints(const std::filesystem::path& path);
void write_fingerprints(std::span<const Fingerprint> data, const std::filesystem::path& path);

}  // namespace roslac
