#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "geocue/common.hpp"
#include "geocue/rng.hpp"

namespace geocue {

/// Affine layer y = W x + b with W stored row-major (rows = outputs).
struct Dense {
  int rows = 0;  // output size
  int cols = 0;  // input size
  std::vector<double> w;  // rows*cols
  std::vector<double> b;  // rows

  void resize(int out, int in) {
    rows = out;
    cols = in;
    w.assign(static_cast<size_t>(out) * static_cast<size_t>(in), 0.0);
    b.assign(static_cast<size_t>(out), 0.0);
  }

  /// Uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
  void init(Rng& rng) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (double& v : w) v = rng.uniform(-bound, bound);
    std::fill(b.begin(), b.end(), 0.0);
  }

  void forward(const double* x, double* y) const {
    for (int o = 0; o < rows; ++o) {
      const double* wr = w.data() + static_cast<size_t>(o) * cols;
      double acc = b[static_cast<size_t>(o)];
      for (int i = 0; i < cols; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }

  /// Accumulates parameter gradients and (optionally) the input gradient.
  void backward(const double* x, const double* dy, double* dw_acc,
                double* db_acc, double* dx) const {
    for (int o = 0; o < rows; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      double* dwr = dw_acc + static_cast<size_t>(o) * cols;
      for (int i = 0; i < cols; ++i) dwr[i] += g * x[i];
      db_acc[o] += g;
    }
    if (dx) {
      for (int i = 0; i < cols; ++i) dx[i] = 0.0;
      for (int o = 0; o < rows; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const double* wr = w.data() + static_cast<size_t>(o) * cols;
        for (int i = 0; i < cols; ++i) dx[i] += g * wr[i];
      }
    }
  }

  size_t param_count() const { return w.size() + b.size(); }
};

/// Perceptron: affine layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<Dense> layers;

  static Mlp make(const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("mlp needs >= 2 dims");
    Mlp m;
    m.layers.resize(dims.size() - 1);
    for (size_t l = 0; l < m.layers.size(); ++l) {
      m.layers[l].resize(dims[l + 1], dims[l]);
      m.layers[l].init(rng);
    }
    return m;
  }

  int in_dim() const { return layers.front().cols; }
  int out_dim() const { return layers.back().rows; }

  /// Pre-activations of every layer for one input; scratch layout is the
  /// concatenation of layer outputs (z1 | z2 | ... | zL).
  size_t scratch_size() const {
    size_t s = 0;
    for (const Dense& d : layers) s += static_cast<size_t>(d.rows);
    return s;
  }

  /// Forward for a single input row. `scratch` receives pre-activations
  /// (needed for backward); `out` receives the final layer output.
  void forward(const double* x, double* scratch, double* out) const {
    static thread_local std::vector<double> act;
    act.assign(x, x + in_dim());
    size_t off = 0;
    for (size_t l = 0; l < layers.size(); ++l) {
      const Dense& d = layers[l];
      double* z = scratch + off;
      d.forward(act.data(), z);
      off += static_cast<size_t>(d.rows);
      if (l + 1 < layers.size()) {
        act.assign(z, z + d.rows);
        for (double& v : act) v = std::max(0.0, v);
      } else {
        std::copy(z, z + d.rows, out);
      }
    }
  }

  size_t param_count() const {
    size_t s = 0;
    for (const Dense& d : layers) s += d.param_count();
    return s;
  }
};

/// Gradient buffers mirroring an Mlp's parameters.
struct MlpGrads {
  std::vector<std::vector<double>> dw;
  std::vector<std::vector<double>> db;

  static MlpGrads zeros_like(const Mlp& m) {
    MlpGrads g;
    g.dw.resize(m.layers.size());
    g.db.resize(m.layers.size());
    for (size_t l = 0; l < m.layers.size(); ++l) {
      g.dw[l].assign(m.layers[l].w.size(), 0.0);
      g.db[l].assign(m.layers[l].b.size(), 0.0);
    }
    return g;
  }

  void add(const MlpGrads& o) {
    for (size_t l = 0; l < dw.size(); ++l) {
      for (size_t i = 0; i < dw[l].size(); ++i) dw[l][i] += o.dw[l][i];
      for (size_t i = 0; i < db[l].size(); ++i) db[l][i] += o.db[l][i];
    }
  }

  void scale(double s) {
    for (auto& v : dw)
      for (double& x : v) x *= s;
    for (auto& v : db)
      for (double& x : v) x *= s;
  }

  double squared_norm() const {
    double acc = 0.0;
    for (const auto& v : dw)
      for (double x : v) acc += x * x;
    for (const auto& v : db)
      for (double x : v) acc += x * x;
    return acc;
  }
};

/// Backward through an Mlp for one input row given cached pre-activations.
/// Accumulates into `grads`; writes dL/dx into `dx` when non-null.
inline void mlp_backward(const Mlp& m, const double* x, const double* scratch,
                         const double* dout, MlpGrads& grads, double* dx) {
  const size_t nl = m.layers.size();
  // Layer inputs: acts[0] = x, acts[l] = relu(z_{l-1}).
  std::vector<std::vector<double>> acts(nl);
  std::vector<size_t> z_off(nl, 0);
  {
    acts[0].assign(x, x + m.in_dim());
    size_t off = 0;
    for (size_t l = 0; l < nl; ++l) {
      z_off[l] = off;
      const double* z = scratch + off;
      off += static_cast<size_t>(m.layers[l].rows);
      if (l + 1 < nl) {
        acts[l + 1].assign(z, z + m.layers[l].rows);
        for (double& v : acts[l + 1]) v = std::max(0.0, v);
      }
    }
  }
  std::vector<double> dcur(dout, dout + m.out_dim());  // dL/dz of layer li
  for (size_t li = nl; li-- > 0;) {
    const Dense& d = m.layers[li];
    std::vector<double> dprev(static_cast<size_t>(d.cols), 0.0);
    d.backward(acts[li].data(), dcur.data(), grads.dw[li].data(),
               grads.db[li].data(),
               (li > 0 || dx) ? dprev.data() : nullptr);
    if (li > 0) {
      const double* z_prev = scratch + z_off[li - 1];
      for (int i = 0; i < m.layers[li - 1].rows; ++i)
        dprev[static_cast<size_t>(i)] =
            z_prev[i] > 0.0 ? dprev[static_cast<size_t>(i)] : 0.0;
      dcur = std::move(dprev);
    } else if (dx) {
      std::copy(dprev.begin(), dprev.end(), dx);
    }
  }
}

/// SGD with classical momentum over one Mlp.
struct SgdMomentum {
  double momentum = 0.9;
  std::vector<std::vector<double>> vw, vb;

  static SgdMomentum zeros_like(const Mlp& m, double momentum) {
    SgdMomentum s;
    s.momentum = momentum;
    s.vw.resize(m.layers.size());
    s.vb.resize(m.layers.size());
    for (size_t l = 0; l < m.layers.size(); ++l) {
      s.vw[l].assign(m.layers[l].w.size(), 0.0);
      s.vb[l].assign(m.layers[l].b.size(), 0.0);
    }
    return s;
  }

  void step(Mlp& m, const MlpGrads& g, double lr) {
    for (size_t l = 0; l < m.layers.size(); ++l) {
      for (size_t i = 0; i < m.layers[l].w.size(); ++i) {
        vw[l][i] = momentum * vw[l][i] + g.dw[l][i];
        m.layers[l].w[i] -= lr * vw[l][i];
      }
      for (size_t i = 0; i < m.layers[l].b.size(); ++i) {
        vb[l][i] = momentum * vb[l][i] + g.db[l][i];
        m.layers[l].b[i] -= lr * vb[l][i];
      }
    }
  }
};

inline void softmax_inplace(double* z, int n) {
  double zmax = z[0];
  for (int i = 1; i < n; ++i) zmax = std::max(zmax, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    z[i] = std::exp(z[i] - zmax);
    sum += z[i];
  }
  for (int i = 0; i < n; ++i) z[i] /= sum;
}

// ---------------------------------------------------------------------------
// Flat little-endian parameter files: 4-byte magic, u32 layer count, then per
// layer rows:u32, cols:u32, rows*cols f64 weights (row-major), rows f64 bias.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& what)
      : buf_(buf), what_(what) {}
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<size_t>(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<size_t>(i)])) << (8 * i);
    pos_ += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      throw DataError("truncated parameter file: " + what_);
  }
  const std::string& buf_;
  std::string what_;
  size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_layers(const std::string& magic,
                                    const std::vector<const Dense*>& layers) {
  if (magic.size() != 4) throw std::invalid_argument("magic must be 4 bytes");
  std::string out = magic;
  detail::put_u32(out, static_cast<uint32_t>(layers.size()));
  for (const Dense* d : layers) {
    detail::put_u32(out, static_cast<uint32_t>(d->rows));
    detail::put_u32(out, static_cast<uint32_t>(d->cols));
    for (double v : d->w) detail::put_f64(out, v);
    for (double v : d->b) detail::put_f64(out, v);
  }
  return out;
}

inline void deserialize_layers(const std::string& buf,
                               const std::string& magic,
                               std::vector<Dense*> layers,
                               const std::string& what) {
  detail::ByteReader r(buf, what);
  if (r.bytes(4) != magic)
    throw DataError("bad magic in parameter file: " + what);
  const uint32_t n = r.u32();
  if (n != layers.size())
    throw DataError("layer count mismatch in " + what + ": expected " +
                    std::to_string(layers.size()) + ", got " +
                    std::to_string(n));
  for (Dense* d : layers) {
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    d->resize(static_cast<int>(rows), static_cast<int>(cols));
    for (double& v : d->w) v = r.f64();
    for (double& v : d->b) v = r.f64();
  }
  if (!r.done()) throw DataError("trailing bytes in parameter file: " + what);
}

}  // namespace geocue
