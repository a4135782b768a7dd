#include "faultguard/nn.hpp"

#include <cmath>

namespace faultguard::nn {

void init_uniform(Param& p, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
  p.grad.setZero(p.value.rows(), p.value.cols());
}

void zero_grads(const ParamRefs& params) {
  for (Param* p : params) p->grad.setZero();
}

bool grads_finite(const ParamRefs& params) {
  for (const Param* p : params)
    if (!p->grad.allFinite()) return false;
  return true;
}

std::vector<Matrix> snapshot(const ConstParamRefs& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Param* p : params) out.push_back(p->value);
  return out;
}

void restore(const ParamRefs& params, const std::vector<Matrix>& values) {
  if (params.size() != values.size())
    throw ShapeError("checkpoint has " + std::to_string(values.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.value.rows() != values[i].rows() || p.value.cols() != values[i].cols())
      throw ShapeError("checkpoint tensor " + p.name + " has the wrong shape");
    p.value = values[i];
    p.grad.setZero(p.value.rows(), p.value.cols());
  }
}

void Adam::step(const ParamRefs& params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * p.grad;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

Matrix activate(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::Identity:
      return pre;
    case Activation::Relu:
      return pre.cwiseMax(0.0);
    case Activation::LeakyRelu:
      return pre.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; });
    case Activation::Sigmoid:
      return pre.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::Tanh:
      return pre.array().tanh().matrix();
  }
  return pre;
}

Matrix activation_grad(Activation act, const Matrix& pre, const Matrix& out, const Matrix& upstream) {
  switch (act) {
    case Activation::Identity:
      return upstream;
    case Activation::Relu:
      return (pre.array() > 0.0).select(upstream, 0.0);
    case Activation::LeakyRelu:
      return (pre.array() > 0.0).select(upstream, 0.2 * upstream);
    case Activation::Sigmoid:
      return (upstream.array() * out.array() * (1.0 - out.array())).matrix();
    case Activation::Tanh:
      return (upstream.array() * (1.0 - out.array().square())).matrix();
  }
  return upstream;
}

Dense::Dense(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng)
    : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {
  init_uniform(weight, in, rng);
  init_uniform(bias, in, rng);
}

Matrix Dense::forward(const Matrix& x) const {
  Matrix y = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& dy, Dense* sink) const {
  if (sink) {
    sink->weight.grad.noalias() += dy * x.transpose();
    sink->bias.grad.col(0) += dy.rowwise().sum();
  }
  return weight.value.transpose() * dy;
}

Mlp::Mlp(const std::string& name, const std::vector<Eigen::Index>& widths, Activation hidden, Activation output,
         Rng& rng)
    : hidden_(hidden), output_(output) {
  if (widths.size() < 2) throw ShapeError("Mlp needs at least an input and output width");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(name + ".fc" + std::to_string(i), widths[i], widths[i + 1], rng);
}

Matrix Mlp::forward(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    h = activate(last ? output_ : hidden_, layers_[i].forward(h));
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, Cache& cache) const {
  cache.inputs.clear();
  cache.pre.clear();
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    cache.inputs.push_back(h);
    cache.pre.push_back(layers_[i].forward(h));
    h = activate(last ? output_ : hidden_, cache.pre.back());
  }
  cache.output = h;
  return h;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& d_output, Mlp* sink) const {
  const Matrix& last_pre = cache.pre.back();
  return backward_from_pre(cache, activation_grad(output_, last_pre, cache.output, d_output), sink);
}

Matrix Mlp::backward_from_pre(const Cache& cache, const Matrix& d_last_pre, Mlp* sink) const {
  Matrix d_pre = d_last_pre;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    Matrix d_in = layers_[k].backward(cache.inputs[k], d_pre, sink ? &sink->layers_[k] : nullptr);
    if (k == 0) return d_in;
    const Matrix& out = cache.inputs[k];  // activation output of layer k-1
    d_pre = activation_grad(hidden_, cache.pre[k - 1], out, d_in);
  }
  return d_pre;
}

ParamRefs Mlp::params() {
  ParamRefs out;
  for (Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

ConstParamRefs Mlp::params() const {
  ConstParamRefs out;
  for (const Dense& d : layers_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

GruDirection::GruDirection(const std::string& name, Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng)
    : w_input(name + ".w_input", 3 * hidden_size, input_size),
      w_hidden(name + ".w_hidden", 3 * hidden_size, hidden_size),
      b_input(name + ".b_input", 3 * hidden_size, 1),
      b_hidden(name + ".b_hidden", 3 * hidden_size, 1) {
  init_uniform(w_input, input_size, rng);
  init_uniform(w_hidden, hidden_size, rng);
  init_uniform(b_input, hidden_size, rng);
  init_uniform(b_hidden, hidden_size, rng);
}

Matrix GruDirection::forward(const Matrix& inputs, Eigen::Index batch, Cache* cache) const {
  const Eigen::Index H = hidden_size();
  const Eigen::Index steps = batch == 0 ? 0 : inputs.cols() / batch;
  Matrix gi = w_input.value * inputs;  // 3H x (T*B), one GEMM for all steps
  gi.colwise() += b_input.value.col(0);

  Matrix h = Matrix::Zero(H, batch);
  if (cache) {
    cache->inputs = inputs;
    cache->batch = batch;
    cache->hidden.assign(1, h);
    cache->r.clear();
    cache->z.clear();
    cache->n.clear();
    cache->hn.clear();
  }
  for (Eigen::Index t = 0; t < steps; ++t) {
    auto gi_t = gi.middleCols(t * batch, batch);
    Matrix gh = w_hidden.value * h;
    gh.colwise() += b_hidden.value.col(0);
    Matrix r = (gi_t.topRows(H) + gh.topRows(H)).unaryExpr([](double v) { return sigmoid(v); });
    Matrix z = (gi_t.middleRows(H, H) + gh.middleRows(H, H)).unaryExpr([](double v) { return sigmoid(v); });
    Matrix hn = gh.bottomRows(H);
    Matrix n = (gi_t.bottomRows(H).array() + r.array() * hn.array()).tanh().matrix();
    h = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
    if (cache) {
      cache->r.push_back(std::move(r));
      cache->z.push_back(std::move(z));
      cache->n.push_back(std::move(n));
      cache->hn.push_back(std::move(hn));
      cache->hidden.push_back(h);
    }
  }
  return h;
}

Matrix GruDirection::backward(const Cache& cache, const Matrix& d_final, GruDirection* sink) const {
  const Eigen::Index H = hidden_size();
  const Eigen::Index B = cache.batch;
  const Eigen::Index steps = static_cast<Eigen::Index>(cache.r.size());
  Matrix d_gi(3 * H, steps * B);
  Matrix dh = d_final;
  Matrix d_gh(3 * H, B);
  for (Eigen::Index t = steps; t-- > 0;) {
    const Matrix& r = cache.r[t];
    const Matrix& z = cache.z[t];
    const Matrix& n = cache.n[t];
    const Matrix& hn = cache.hn[t];
    const Matrix& h_prev = cache.hidden[t];

    const Eigen::ArrayXXd dn = dh.array() * (1.0 - z.array());
    const Eigen::ArrayXXd dz = dh.array() * (h_prev.array() - n.array());
    const Eigen::ArrayXXd da_n = dn * (1.0 - n.array().square());
    const Eigen::ArrayXXd da_r = da_n * hn.array() * r.array() * (1.0 - r.array());
    const Eigen::ArrayXXd da_z = dz * z.array() * (1.0 - z.array());

    auto gi_t = d_gi.middleCols(t * B, B);
    gi_t.topRows(H) = da_r.matrix();
    gi_t.middleRows(H, H) = da_z.matrix();
    gi_t.bottomRows(H) = da_n.matrix();
    d_gh.topRows(H) = da_r.matrix();
    d_gh.middleRows(H, H) = da_z.matrix();
    d_gh.bottomRows(H) = (da_n * r.array()).matrix();

    if (sink) {
      sink->w_hidden.grad.noalias() += d_gh * h_prev.transpose();
      sink->b_hidden.grad.col(0) += d_gh.rowwise().sum();
    }
    Matrix dh_prev = (dh.array() * z.array()).matrix();
    dh_prev.noalias() += w_hidden.value.transpose() * d_gh;
    dh = std::move(dh_prev);
  }
  if (sink) {
    sink->w_input.grad.noalias() += d_gi * cache.inputs.transpose();
    sink->b_input.grad.col(0) += d_gi.rowwise().sum();
  }
  return w_input.value.transpose() * d_gi;
}

Vector softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* d_logits,
                             std::span<const double> weights) {
  const Eigen::Index C = logits.rows();
  const Eigen::Index B = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != B) throw ShapeError("label count does not match batch size");
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != B)
    throw ShapeError("weight count does not match batch size");
  Vector losses(B);
  if (d_logits) d_logits->resize(C, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= C) throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
    const double mx = logits.col(j).maxCoeff();
    const Vector e = (logits.col(j).array() - mx).exp().matrix();
    const double s = e.sum();
    losses(j) = std::log(s) + mx - logits(y, j);
    if (d_logits) {
      const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(j)];
      d_logits->col(j) = (e / s) * w;
      (*d_logits)(y, j) -= w;
    }
  }
  return losses;
}

double bce_with_logits(const Matrix& logits, double target, Matrix* d_logits) {
  const double n = static_cast<double>(logits.size());
  double total = 0.0;
  if (d_logits) d_logits->resize(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double x = logits(i, j);
      // softplus(x) - target * x, written to avoid overflow
      const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      total += softplus - target * x;
      if (d_logits) (*d_logits)(i, j) = (sigmoid(x) - target) / n;
    }
  }
  return total / n;
}

}  // namespace faultguard::nn
