#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace drivestyle::rl {

// Fully connected network with tanh hidden activations and a linear scalar
// output, stored in a caller-owned flat parameter vector starting at
// `offset`. Layer l holds W_l (out x in, row-major) followed by b_l.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> sizes, std::size_t offset) : sizes_(std::move(sizes)), offset_(offset) {
    std::size_t o = offset_;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(o);
      o += sizes_[l + 1] * sizes_[l];
      b_off_.push_back(o);
      o += sizes_[l + 1];
    }
    end_ = o;
  }

  std::size_t param_count() const { return end_ - offset_; }
  std::size_t offset() const { return offset_; }
  std::size_t end() const { return end_; }
  std::size_t layers() const { return w_off_.size(); }
  std::size_t in_size(std::size_t l) const { return sizes_[l]; }
  std::size_t out_size(std::size_t l) const { return sizes_[l + 1]; }
  std::size_t weight_offset(std::size_t l) const { return w_off_[l]; }
  std::size_t bias_offset(std::size_t l) const { return b_off_[l]; }
  const std::vector<std::size_t>& sizes() const { return sizes_; }

  // Activations of every layer; acts[0] is the input, acts.back() the output.
  struct Cache {
    std::vector<std::vector<double>> acts;
  };

  double forward(std::span<const double> params, std::span<const double> input, Cache& cache) const {
    cache.acts.resize(sizes_.size());
    cache.acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const double* W = params.data() + w_off_[l];
      const double* b = params.data() + b_off_[l];
      const std::vector<double>& x = cache.acts[l];
      std::vector<double>& y = cache.acts[l + 1];
      y.resize(out);
      const bool hidden = l + 1 < layers();
      for (std::size_t o = 0; o < out; ++o) {
        const double* row = W + o * in;
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = hidden ? std::tanh(acc) : acc;
      }
    }
    return cache.acts.back()[0];
  }

  double forward(std::span<const double> params, std::span<const double> input) const {
    Cache c;
    return forward(params, input, c);
  }

  // Accumulates d(output)/d(params) * dout into `grad` (same layout as params).
  void backward(std::span<const double> params, const Cache& cache, double dout, std::span<double> grad) const {
    std::vector<double> delta{dout};
    std::vector<double> prev;
    for (std::size_t l = layers(); l-- > 0;) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const double* W = params.data() + w_off_[l];
      double* gW = grad.data() + w_off_[l];
      double* gb = grad.data() + b_off_[l];
      const std::vector<double>& x = cache.acts[l];
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        gb[o] += d;
        double* grow = gW + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += d * x[i];
      }
      if (l == 0) break;
      prev.assign(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        const double* row = W + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
      }
      // x = tanh(pre) for hidden layers, so dtanh = 1 - x^2.
      for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - x[i] * x[i];
      delta.swap(prev);
    }
  }

  // Orthogonal initialisation (Gram-Schmidt on a Gaussian matrix) scaled by
  // `gain` for the last layer and `hidden_gain` elsewhere; biases zero.
  void init_orthogonal(std::span<double> params, std::mt19937_64& rng, double hidden_gain, double out_gain) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const double gain = l + 1 == layers() ? out_gain : hidden_gain;
      // Orthonormalise along the smaller dimension.
      const bool by_rows = out <= in;
      const std::size_t nvec = by_rows ? out : in;
      const std::size_t len = by_rows ? in : out;
      std::vector<std::vector<double>> vecs(nvec, std::vector<double>(len));
      for (auto& v : vecs) {
        for (auto& x : v) x = normal(rng);
      }
      for (std::size_t k = 0; k < nvec; ++k) {
        for (std::size_t j = 0; j < k; ++j) {
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += vecs[k][i] * vecs[j][i];
          for (std::size_t i = 0; i < len; ++i) vecs[k][i] -= dot * vecs[j][i];
        }
        double norm = 0.0;
        for (double x : vecs[k]) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : vecs[k]) x /= norm;
      }
      double* W = params.data() + w_off_[l];
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) {
          W[o * in + i] = gain * (by_rows ? vecs[o][i] : vecs[i][o]);
        }
      }
      double* b = params.data() + b_off_[l];
      for (std::size_t o = 0; o < out; ++o) b[o] = 0.0;
    }
  }

 private:
  std::vector<std::size_t> sizes_;
  std::size_t offset_ = 0;
  std::size_t end_ = 0;
  std::vector<std::size_t> w_off_;
  std::vector<std::size_t> b_off_;
};

}  // namespace drivestyle::rl
