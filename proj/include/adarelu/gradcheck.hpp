#pragma once

#include "adarelu/tape.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace adarelu {

inline constexpr double kProbeStep = 1e-5;
inline constexpr double kKinkMargin = 1e-3;
inline constexpr double kRelativeFloor = 1e-8;

using TensorFn = std::function<Tensor<double>(const Tensor<double>&)>;

/// (f(x + h d) - f(x - h d)) / 2h. Throws std::domain_error when f returns a non-finite value.
Tensor<double> finite_diff_jvp(const TensorFn& f, const Tensor<double>& x, const Tensor<double>& direction,
                               double h = kProbeStep);

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  /// Flat index of the worst probe over (seed, input, direction); -1 when nothing was probed.
  Index worst_coordinate = -1;
  /// Name of the input whose probe was worst.
  std::string worst_input;
  Index probes = 0;
  /// Probes dropped because a rectifier input came within the kink margin.
  Index excluded = 0;
  double threshold = 0.0;
  bool passed = false;

  std::string str() const;
};

/// A differentiable function of named double-precision inputs, recorded on a tape.
struct GradCase {
  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  std::function<Var(Tape<double>&, const std::vector<Var>&)> build;
};

/// Compare tape vector-Jacobian products against central differences. For every input,
/// `directions` random unit-scale directions d are drawn and <u, J d> from the tape
/// (u a random cotangent) is compared with the finite difference of <u, f>.
GradCheckReport check_case(const std::string& name, const GradCase& gc, std::mt19937_64& rng, double threshold,
                           int directions = 3);

/// Names accepted by check_layer, in report order.
const std::vector<std::string>& gradcheck_ops();

/// Random case for a registered op; throws std::invalid_argument for unknown names.
GradCase make_grad_case(const std::string& op, std::mt19937_64& rng);

/// Runs `seeds` random cases of `op` and merges their reports (worst case wins).
GradCheckReport check_layer(const std::string& op, int seeds = 20, double threshold = 1e-5,
                            std::uint64_t seed = 0);

}  // namespace adarelu
