#include "faultguard/classifier.hpp"

#include "faultguard/nn.hpp"

namespace faultguard {

namespace {
constexpr std::size_t kEvalChunk = 256;
}

std::vector<int> DifferentiableClassifier::predict(std::span<const Window> batch) const {
  std::vector<int> out;
  out.reserve(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += kEvalChunk) {
    const auto chunk = batch.subspan(start, std::min(kEvalChunk, batch.size() - start));
    const Matrix z = logits(chunk);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      Eigen::Index best = 0;
      z.col(j).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

std::vector<Window> DifferentiableClassifier::loss_gradient(std::span<const Window> batch,
                                                            std::span<const int> labels) const {
  return input_gradient(batch, [&](const Matrix& z) {
    Matrix d;
    nn::softmax_cross_entropy(z, labels, &d);
    return d;
  });
}

double accuracy(const DifferentiableClassifier& model, std::span<const Window> windows, std::span<const int> labels) {
  if (windows.empty()) throw DataError("accuracy: empty window list");
  if (windows.size() != labels.size()) throw ShapeError("accuracy: label count does not match window count");
  const std::vector<int> pred = model.predict(windows);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace faultguard
