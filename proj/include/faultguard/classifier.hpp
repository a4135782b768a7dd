#pragma once

#include "faultguard/core.hpp"

#include <functional>
#include <span>
#include <vector>

namespace faultguard {

/// Read-only view of a window classifier that can back-propagate to its input.
/// Attacks are written against this interface; every call runs in eval mode.
class DifferentiableClassifier {
 public:
  /// Maps logits (classes x batch) to d(objective)/d(logits).
  using LogitGradient = std::function<Matrix(const Matrix& logits)>;

  virtual ~DifferentiableClassifier() = default;

  virtual int n_classes() const = 0;
  /// Logits for each window, one column per window.
  virtual Matrix logits(std::span<const Window> batch) const = 0;
  /// Runs a forward pass, asks `upstream` for the logit gradient, and returns
  /// the gradient with respect to every input window.
  virtual std::vector<Window> input_gradient(std::span<const Window> batch, const LogitGradient& upstream) const = 0;

  std::vector<int> predict(std::span<const Window> batch) const;
  /// Gradient of the summed per-window cross-entropy with respect to the inputs.
  std::vector<Window> loss_gradient(std::span<const Window> batch, std::span<const int> labels) const;
};

/// Fraction of windows whose predicted class equals the label.
double accuracy(const DifferentiableClassifier& model, std::span<const Window> windows, std::span<const int> labels);

}  // namespace faultguard
