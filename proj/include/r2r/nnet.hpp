#ifndef R2R_NNET_HPP
#define R2R_NNET_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "r2r/mdp_env.hpp"

namespace r2r {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

/// Hidden width used by the actor and critics.
inline constexpr int kHiddenUnits = 256;

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

struct DenseLayer {
  Mat weight;  ///< out x in
  Vec bias;    ///< out
};

/// Fully connected network: ELU on hidden layers, identity on the output layer.
struct Mlp {
  std::vector<DenseLayer> layers;

  [[nodiscard]] int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  [[nodiscard]] int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Same shapes, all zeros.
  [[nodiscard]] Mlp zeros_like() const {
    Mlp z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers) {
      z.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    }
    return z;
  }

  [[nodiscard]] bool congruent(const Mlp& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
          layers[i].weight.cols() != other.layers[i].weight.cols()) {
        return false;
      }
    }
    return true;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }
};

/// Applies f(param_block, other_block) over matching weight and bias blocks.
template <typename A, typename B, typename F>
void zip_blocks(A& a, B& b, F&& f) {
  if (!a.congruent(b)) throw std::invalid_argument("zip_blocks: networks are not congruent");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    f(a.layers[i].weight, b.layers[i].weight);
    f(a.layers[i].bias, b.layers[i].bias);
  }
}

/**
 * Random matrix with orthonormal rows (rows <= cols) or columns
 * (rows > cols), scaled by `gain`. Built from the QR factorization of a
 * Gaussian matrix with the sign of R's diagonal folded into Q.
 */
inline Mat orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("orthogonal_init: empty shape");
  const bool transpose = rows < cols;
  const int r = transpose ? cols : rows;
  const int c = transpose ? rows : cols;
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat a(r, c);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(r, c);
  const Vec d = qr.matrixQR().diagonal();
  for (int j = 0; j < c; ++j) {
    if (d[j] < 0.0) q.col(j) *= -1.0;
  }
  if (transpose) q.transposeInPlace();
  return gain * q;
}

/// Orthogonal weights, zero biases: gain sqrt(2) on hidden layers, `output_gain` on the last.
inline Mlp make_mlp(std::span<const int> sizes, Rng& rng, double output_gain = 0.01,
                    double hidden_gain = std::numbers::sqrt2) {
  if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least two layer sizes");
  Mlp net;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    net.layers.push_back({orthogonal_init(sizes[i + 1], sizes[i], last ? output_gain : hidden_gain,
                                          rng),
                          Vec::Zero(sizes[i + 1])});
  }
  return net;
}

inline Mlp make_mlp(std::initializer_list<int> sizes, Rng& rng, double output_gain = 0.01,
                    double hidden_gain = std::numbers::sqrt2) {
  const std::vector<int> v(sizes);
  return make_mlp(std::span<const int>(v), rng, output_gain, hidden_gain);
}

/// Activations kept by forward() for a later backward().
struct ForwardCache {
  std::vector<Mat> inputs;       ///< input to every layer (batch in columns)
  std::vector<Mat> preactivity;  ///< pre-activation of every hidden layer
};

/// Batched forward pass; `x` holds one sample per column.
inline Mat forward(const Mlp& net, const Mat& x, ForwardCache* cache = nullptr) {
  if (net.layers.empty() || x.rows() != net.input_dim()) {
    throw std::invalid_argument("forward: input dimension does not match network");
  }
  const std::size_t n_layers = net.layers.size();
  if (cache) {
    cache->inputs.resize(n_layers);
    cache->preactivity.resize(n_layers - 1);
    cache->inputs[0] = x;
  }
  Mat h = x;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& layer = net.layers[i];
    Mat z(layer.weight.rows(), h.cols());
    z.noalias() = layer.weight * h;
    z.colwise() += layer.bias;
    if (i + 1 == n_layers) return z;
    if (cache) cache->preactivity[i] = z;
    h = z.unaryExpr([](double v) { return elu(v); });
    if (cache) cache->inputs[i + 1] = h;
  }
  return h;
}

inline Vec forward(const Mlp& net, const Vec& x) {
  return forward(net, Mat(x), nullptr).col(0);
}

/**
 * Reverse pass for a loss whose gradient w.r.t. the network output is `dy`.
 * Accumulates parameter gradients into `grads` when non-null and returns
 * the gradient w.r.t. the input.
 */
inline Mat backward(const Mlp& net, const ForwardCache& cache, const Mat& dy, Mlp* grads) {
  const std::size_t n_layers = net.layers.size();
  if (cache.inputs.size() != n_layers) throw std::invalid_argument("backward: stale cache");
  if (grads && !grads->congruent(net)) throw std::invalid_argument("backward: gradient shape");
  Mat delta = dy;
  for (std::size_t idx = n_layers; idx-- > 0;) {
    const auto& layer = net.layers[idx];
    if (grads) {
      grads->layers[idx].weight.noalias() += delta * cache.inputs[idx].transpose();
      grads->layers[idx].bias += delta.rowwise().sum();
    }
    Mat dx(layer.weight.cols(), delta.cols());
    dx.noalias() = layer.weight.transpose() * delta;
    if (idx == 0) return dx;
    delta = dx.cwiseProduct(cache.preactivity[idx - 1].unaryExpr([](double v) {
      return elu_grad(v);
    }));
  }
  return delta;
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with moments congruent to one network.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& like, AdamConfig cfg) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(Mlp& params, const Mlp& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, lr = cfg_.lr, eps = cfg_.eps;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      update(params.layers[i].weight, grads.layers[i].weight, m_.layers[i].weight,
             v_.layers[i].weight, b1, b2, c1, c2, lr, eps);
      update(params.layers[i].bias, grads.layers[i].bias, m_.layers[i].bias, v_.layers[i].bias,
             b1, b2, c1, c2, lr, eps);
    }
  }

  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const Mlp& first_moment() const { return m_; }
  [[nodiscard]] const Mlp& second_moment() const { return v_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }

 private:
  template <typename P, typename G, typename M>
  static void update(P& p, const G& g, M& m, M& v, double b1, double b2, double c1, double c2,
                     double lr, double eps) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  AdamConfig cfg_;
  Mlp m_;
  Mlp v_;
  std::int64_t t_ = 0;
};

/// Adam for a single scalar (the log-temperature).
class ScalarAdam {
 public:
  explicit ScalarAdam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(double& p, double g) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g * g;
    const double mh = m_ / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const double vh = v_ / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    p -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
  }

 private:
  AdamConfig cfg_;
  double m_ = 0.0;
  double v_ = 0.0;
  std::int64_t t_ = 0;
};

// Binary layer encoding: u32 layer count, then per layer u32 rows, u32 cols,
// row-major float64 weights, float64 biases.
namespace io {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

}  // namespace io

inline void write_mlp(std::ostream& os, const Mlp& net) {
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(l.weight.rows()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) io::put<double>(os, l.weight(i, j));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) io::put<double>(os, l.bias[i]);
  }
}

inline Mlp read_mlp(std::istream& is) {
  const auto n_layers = io::get<std::uint32_t>(is);
  if (n_layers == 0 || n_layers > 64) throw std::runtime_error("checkpoint: bad layer count");
  Mlp net;
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    const auto rows = io::get<std::uint32_t>(is);
    const auto cols = io::get<std::uint32_t>(is);
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) {
      throw std::runtime_error("checkpoint: bad layer shape");
    }
    DenseLayer l{Mat(rows, cols), Vec(rows)};
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) l.weight(i, j) = io::get<double>(is);
    }
    for (std::uint32_t i = 0; i < rows; ++i) l.bias[i] = io::get<double>(is);
    if (!net.layers.empty() && net.layers.back().weight.rows() != l.weight.cols()) {
      throw std::runtime_error("checkpoint: inconsistent layer chain");
    }
    net.layers.push_back(std::move(l));
  }
  return net;
}

}  // namespace r2r

#endif  // R2R_NNET_HPP
