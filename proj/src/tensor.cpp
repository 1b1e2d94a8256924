#include "hmde/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "hmde/errors.hpp"

namespace hmde {

using RowMajorMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajorMatrix>;
using ConstMatMap = Eigen::Map<const RowMajorMatrix>;

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

thread_local Tape* g_active_tape = nullptr;

constexpr float kMaskFill = -1e30f;

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Impl& Tensor::ref() const {
  if (!impl_) throw ContractError("operation on an undefined tensor");
  return *impl_;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_size(t.impl_->shape), 0.0f);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data,
                         bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return ref().shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(ref().data.size()); }
int Tensor::dim(int axis) const { return ref().shape.at(axis); }
int Tensor::rank() const { return static_cast<int>(ref().shape.size()); }
std::vector<float>& Tensor::data() { return ref().data; }
const std::vector<float>& Tensor::data() const { return ref().data; }

bool Tensor::has_grad() const { return !ref().grad.empty(); }

std::vector<float>& Tensor::grad() {
  Impl& im = ref();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0f);
  return im.grad;
}

const std::vector<float>& Tensor::grad() const {
  const Impl& im = ref();
  if (im.grad.empty()) throw ContractError("tensor has no gradient");
  return im.grad;
}

void Tensor::zero_grad() { ref().grad.clear(); }

bool Tensor::requires_grad() const { return ref().requires_grad; }
void Tensor::set_requires_grad(bool value) { ref().requires_grad = value; }

float Tensor::item() const {
  const Impl& im = ref();
  if (im.data.size() != 1)
    throw ContractError("item() on non-scalar tensor " +
                        shape_string(im.shape));
  return im.data[0];
}

Tensor Tensor::clone() const {
  return Tensor::from_data(ref().shape, ref().data, ref().requires_grad);
}

// ---- Tape -----------------------------------------------------------------

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::current() { return g_active_tape; }

void Tape::record(Tensor output, std::function<void()> backward_fn) {
  nodes_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got " +
                        shape_string(loss.shape()));
  const_cast<Tensor&>(loss).grad()[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
    // consume the output grad: a later pass must not re-propagate it
    auto& g = it->output.grad();
    std::fill(g.begin(), g.end(), 0.0f);
  }
}

void backward(const Tensor& loss) {
  Tape* t = Tape::current();
  if (!t) throw ContractError("backward called with no active tape");
  t->backward(loss);
}

namespace detail {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void accumulate(Tensor& t, const std::vector<float>& delta) {
  std::vector<float>& g = t.grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

namespace {

// Marks the output as a graph intermediate and registers the node.
void record_op(Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  g_active_tape->record(out, std::move(fn));
}

void check_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + " expects a 2-D tensor, got " +
                     shape_string(t.shape()));
}

}  // namespace

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul inner dimensions differ: " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  ConstMatMap ma(a.data().data(), m, k);
  ConstMatMap mb(b.data().data(), k, n);
  MatMap mo(out.data().data(), m, n);
  mo.noalias() = ma * mb;
  if (detail::tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record_op(out, [ac, bc, oc, m, k, n]() mutable {
      ConstMatMap go(oc.grad().data(), m, n);
      ConstMatMap ma(ac.data().data(), m, k);
      ConstMatMap mb(bc.data().data(), k, n);
      if (ac.requires_grad()) {
        MatMap ga(ac.grad().data(), m, k);
        ga.noalias() += go * mb.transpose();
      }
      if (bc.requires_grad()) {
        MatMap gb(bc.grad().data(), k, n);
        gb.noalias() += ma.transpose() * go;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  ConstMatMap ma(a.data().data(), r, c);
  MatMap mo(out.data().data(), c, r);
  mo = ma.transpose();
  if (detail::tracking({&a})) {
    Tensor ac = a, oc = out;
    record_op(out, [ac, oc, r, c]() mutable {
      if (!ac.requires_grad()) return;
      ConstMatMap go(oc.grad().data(), c, r);
      MatMap ga(ac.grad().data(), r, c);
      ga += go.transpose();
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dout = out.data();
  for (size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] + db[i];
  if (detail::tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record_op(out, [ac, bc, oc]() mutable {
      if (ac.requires_grad()) detail::accumulate(ac, oc.grad());
      if (bc.requires_grad()) detail::accumulate(bc, oc.grad());
    });
  }
  return out;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& bias) {
  check_2d(a, "add_row_broadcast");
  const int r = a.dim(0), c = a.dim(1);
  if (bias.size() != c)
    throw ShapeError("bias length " + std::to_string(bias.size()) +
                     " does not match row width " + std::to_string(c));
  Tensor out = Tensor::zeros({r, c});
  const auto& da = a.data();
  const auto& db = bias.data();
  auto& dout = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) dout[i * c + j] = da[i * c + j] + db[j];
  if (detail::tracking({&a, &bias})) {
    Tensor ac = a, bc = bias, oc = out;
    record_op(out, [ac, bc, oc, r, c]() mutable {
      const auto& go = oc.grad();
      if (ac.requires_grad()) detail::accumulate(ac, go);
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gb[j] += go[i * c + j];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  auto& dout = out.data();
  for (size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] * c;
  if (detail::tracking({&a})) {
    Tensor ac = a, oc = out;
    record_op(out, [ac, oc, c]() mutable {
      if (!ac.requires_grad()) return;
      auto& ga = ac.grad();
      const auto& go = oc.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dout = out.data();
  for (size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] * db[i];
  if (detail::tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record_op(out, [ac, bc, oc]() mutable {
      const auto& go = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        const auto& db = bc.data();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * db[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        const auto& da = ac.data();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * da[i];
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax needs rank >= 1");
  const int n = x.shape().back();
  if (n < 1) throw ShapeError("softmax over an empty axis");
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  const auto& dx = x.data();
  auto& dout = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* in = dx.data() + r * n;
    float* o = dout.data() + r * n;
    float mx = in[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j < n; ++j) o[j] *= inv;
  }
  if (detail::tracking({&x})) {
    Tensor xc = x, oc = out;
    record_op(out, [xc, oc, rows, n]() mutable {
      if (!xc.requires_grad()) return;
      auto& gx = xc.grad();
      const auto& go = oc.grad();
      const auto& y = oc.data();
      for (int64_t r = 0; r < rows; ++r) {
        const float* yr = y.data() + r * n;
        const float* gr = go.data() + r * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += double(gr[j]) * yr[j];
        float* gxr = gx.data() + r * n;
        for (int j = 0; j < n; ++j)
          gxr[j] += yr[j] * (gr[j] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  const int n = x.shape().back();
  if (static_cast<int>(gamma.size()) != n || static_cast<int>(beta.size()) != n)
    throw ShapeError("layer_norm gamma/beta length must equal last axis");
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  // cached per-row standardized values and inverse stddev for backward
  std::vector<float> xhat(x.size());
  std::vector<float> inv_std(rows);
  const auto& dx = x.data();
  const auto& dg = gamma.data();
  const auto& db = beta.data();
  auto& dout = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* in = dx.data() + r * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += in[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = in[j] - mean;
      var += d * d;
    }
    var /= n;  // biased variance
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(istd);
    float* xh = xhat.data() + r * n;
    float* o = dout.data() + r * n;
    for (int j = 0; j < n; ++j) {
      xh[j] = static_cast<float>((in[j] - mean) * istd);
      o[j] = xh[j] * dg[j] + db[j];
    }
  }
  if (detail::tracking({&x, &gamma, &beta})) {
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    auto xh = std::make_shared<std::vector<float>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<float>>(std::move(inv_std));
    record_op(out, [xc, gc, bc, oc, xh, istd, rows, n]() mutable {
      const auto& go = oc.grad();
      const auto& dg = gc.data();
      for (int64_t r = 0; r < rows; ++r) {
        const float* gr = go.data() + r * n;
        const float* xhr = xh->data() + r * n;
        if (gc.requires_grad()) {
          auto& gg = gc.grad();
          for (int j = 0; j < n; ++j) gg[j] += gr[j] * xhr[j];
        }
        if (bc.requires_grad()) {
          auto& gb = bc.grad();
          for (int j = 0; j < n; ++j) gb[j] += gr[j];
        }
        if (xc.requires_grad()) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gy = double(gr[j]) * dg[j];
            sum_g += gy;
            sum_gx += gy * xhr[j];
          }
          const double mg = sum_g / n;
          const double mgx = sum_gx / n;
          auto& gx = xc.grad();
          float* gxr = gx.data() + r * n;
          const double is = (*istd)[r];
          for (int j = 0; j < n; ++j) {
            const double gy = double(gr[j]) * dg[j];
            gxr[j] += static_cast<float>((gy - mg - xhr[j] * mgx) * is);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& dx = x.data();
  auto& dout = out.data();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (size_t i = 0; i < dout.size(); ++i) {
    const double v = dx[i];
    dout[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  if (detail::tracking({&x})) {
    Tensor xc = x, oc = out;
    record_op(out, [xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      constexpr double kInvSqrt2 = 0.7071067811865475244;
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      auto& gx = xc.grad();
      const auto& go = oc.grad();
      const auto& dx = xc.data();
      for (size_t i = 0; i < gx.size(); ++i) {
        const double v = dx[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += go[i] * static_cast<float>(cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (detail::tracking({&x})) {
    Tensor xc = x, oc = out;
    record_op(out, [xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const float g = oc.grad()[0];
      auto& gx = xc.grad();
      for (float& v : gx) v += g;
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  check_2d(table, "gather_rows");
  const int v = table.dim(0), h = table.dim(1);
  const int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, h});
  const auto& dt = table.data();
  auto& dout = out.data();
  for (int i = 0; i < n; ++i) {
    const int id = ids[i];
    if (id < 0 || id >= v)
      throw VocabularyError("row id " + std::to_string(id) +
                            " out of range [0, " + std::to_string(v) + ")");
    std::copy(dt.begin() + int64_t(id) * h, dt.begin() + int64_t(id + 1) * h,
              dout.begin() + int64_t(i) * h);
  }
  if (detail::tracking({&table})) {
    Tensor tc = table, oc = out;
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    record_op(out, [tc, oc, ids_copy, h]() mutable {
      if (!tc.requires_grad()) return;
      auto& gt = tc.grad();
      const auto& go = oc.grad();
      for (size_t i = 0; i < ids_copy->size(); ++i) {
        const int id = (*ids_copy)[i];
        for (int j = 0; j < h; ++j)
          gt[int64_t(id) * h + j] += go[int64_t(i) * h + j];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int start, int count) {
  check_2d(a, "slice_rows");
  const int r = a.dim(0), c = a.dim(1);
  if (start < 0 || count < 0 || start + count > r)
    throw ShapeError("slice_rows range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " +
                     std::to_string(r) + " rows");
  Tensor out = Tensor::zeros({count, c});
  std::copy(a.data().begin() + int64_t(start) * c,
            a.data().begin() + int64_t(start + count) * c, out.data().begin());
  if (detail::tracking({&a})) {
    Tensor ac = a, oc = out;
    record_op(out, [ac, oc, start, count, c]() mutable {
      if (!ac.requires_grad()) return;
      auto& ga = ac.grad();
      const auto& go = oc.grad();
      for (int64_t i = 0; i < int64_t(count) * c; ++i)
        ga[int64_t(start) * c + i] += go[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int count) {
  check_2d(a, "slice_cols");
  const int r = a.dim(0), c = a.dim(1);
  if (start < 0 || count < 0 || start + count > c)
    throw ShapeError("slice_cols range out of bounds");
  Tensor out = Tensor::zeros({r, count});
  const auto& da = a.data();
  auto& dout = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j)
      dout[int64_t(i) * count + j] = da[int64_t(i) * c + start + j];
  if (detail::tracking({&a})) {
    Tensor ac = a, oc = out;
    record_op(out, [ac, oc, start, count, r, c]() mutable {
      if (!ac.requires_grad()) return;
      auto& ga = ac.grad();
      const auto& go = oc.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j)
          ga[int64_t(i) * c + start + j] += go[int64_t(i) * count + j];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero tensors");
  const int c = parts[0].dim(1);
  int rows = 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_rows");
    if (p.dim(1) != c) throw ShapeError("concat_rows column mismatch");
    rows += p.dim(0);
  }
  Tensor out = Tensor::zeros({rows, c});
  auto& dout = out.data();
  int64_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), dout.begin() + off);
    off += p.size();
  }
  bool track = false;
  for (const Tensor& p : parts)
    if (detail::tracking({&p})) track = true;
  if (track) {
    auto pc = std::make_shared<std::vector<Tensor>>(parts);
    Tensor oc = out;
    record_op(out, [pc, oc]() mutable {
      const auto& go = oc.grad();
      int64_t off = 0;
      for (Tensor& p : *pc) {
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int64_t i = 0; i < p.size(); ++i) gp[i] += go[off + i];
        }
        off += p.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero tensors");
  const int r = parts[0].dim(0);
  int cols = 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_cols");
    if (p.dim(0) != r) throw ShapeError("concat_cols row mismatch");
    cols += p.dim(1);
  }
  Tensor out = Tensor::zeros({r, cols});
  auto& dout = out.data();
  int col_off = 0;
  for (const Tensor& p : parts) {
    const int pc = p.dim(1);
    const auto& dp = p.data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < pc; ++j)
        dout[int64_t(i) * cols + col_off + j] = dp[int64_t(i) * pc + j];
    col_off += pc;
  }
  bool track = false;
  for (const Tensor& p : parts)
    if (detail::tracking({&p})) track = true;
  if (track) {
    auto pc = std::make_shared<std::vector<Tensor>>(parts);
    Tensor oc = out;
    record_op(out, [pc, oc, r, cols]() mutable {
      const auto& go = oc.grad();
      int col_off = 0;
      for (Tensor& p : *pc) {
        const int w = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
              gp[int64_t(i) * w + j] += go[int64_t(i) * cols + col_off + j];
        }
        col_off += w;
      }
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& a, int start, int count) {
  check_2d(a, "mean_rows");
  const int r = a.dim(0), c = a.dim(1);
  if (count < 1 || start < 0 || start + count > r)
    throw ContractError("mean_rows over an empty or out-of-range row span");
  Tensor out = Tensor::zeros({c});
  const auto& da = a.data();
  auto& dout = out.data();
  for (int j = 0; j < c; ++j) {
    double acc = 0.0;
    for (int i = start; i < start + count; ++i) acc += da[int64_t(i) * c + j];
    dout[j] = static_cast<float>(acc / count);
  }
  if (detail::tracking({&a})) {
    Tensor ac = a, oc = out;
    record_op(out, [ac, oc, start, count, c]() mutable {
      if (!ac.requires_grad()) return;
      auto& ga = ac.grad();
      const auto& go = oc.grad();
      const float inv = 1.0f / count;
      for (int i = start; i < start + count; ++i)
        for (int j = 0; j < c; ++j) ga[int64_t(i) * c + j] += go[j] * inv;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size())
    throw ShapeError("reshape element count mismatch: " +
                     shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor out = Tensor::from_data(shape, a.data());
  if (detail::tracking({&a})) {
    Tensor ac = a, oc = out;
    record_op(out, [ac, oc]() mutable {
      if (ac.requires_grad()) detail::accumulate(ac, oc.grad());
    });
  }
  return out;
}

Tensor mask_keys(const Tensor& scores, const std::vector<char>& key_mask) {
  check_2d(scores, "mask_keys");
  const int r = scores.dim(0), c = scores.dim(1);
  if (static_cast<int>(key_mask.size()) != c)
    throw ShapeError("key mask length does not match score columns");
  Tensor out = Tensor::zeros({r, c});
  const auto& ds = scores.data();
  auto& dout = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      dout[int64_t(i) * c + j] =
          key_mask[j] ? ds[int64_t(i) * c + j] : kMaskFill;
  if (detail::tracking({&scores})) {
    Tensor sc = scores, oc = out;
    auto mask = std::make_shared<std::vector<char>>(key_mask);
    record_op(out, [sc, oc, mask, r, c]() mutable {
      if (!sc.requires_grad()) return;
      auto& gs = sc.grad();
      const auto& go = oc.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          if ((*mask)[j]) gs[int64_t(i) * c + j] += go[int64_t(i) * c + j];
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, float p, uint64_t seed) {
  if (p < 0.0f || p >= 1.0f) throw ParameterError("dropout p must be in [0,1)");
  if (p == 0.0f) {
    // still a node so grads flow, but no masking work
    Tensor out = Tensor::zeros(x.shape());
    out.data() = x.data();
    if (detail::tracking({&x})) {
      Tensor xc = x, oc = out;
      record_op(out, [xc, oc]() mutable {
        if (xc.requires_grad()) detail::accumulate(xc, oc.grad());
      });
    }
    return out;
  }
  Tensor out = Tensor::zeros(x.shape());
  auto mask = std::make_shared<std::vector<char>>(x.size());
  std::mt19937_64 rng(seed);
  const uint64_t threshold =
      static_cast<uint64_t>(p * 18446744073709551615.0);  // p * 2^64-1
  const float inv_keep = 1.0f / (1.0f - p);
  const auto& dx = x.data();
  auto& dout = out.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    const bool keep = rng() > threshold;
    (*mask)[i] = keep;
    dout[i] = keep ? dx[i] * inv_keep : 0.0f;
  }
  if (detail::tracking({&x})) {
    Tensor xc = x, oc = out;
    record_op(out, [xc, oc, mask, inv_keep]() mutable {
      if (!xc.requires_grad()) return;
      auto& gx = xc.grad();
      const auto& go = oc.grad();
      for (size_t i = 0; i < gx.size(); ++i)
        if ((*mask)[i]) gx[i] += go[i] * inv_keep;
    });
  }
  return out;
}

namespace {

// cosine of two rows, plus everything the backward needs
struct CosineParts {
  double dot, nu, nv, cos;
};

CosineParts cosine_parts(const float* u, const float* v, int h) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (int j = 0; j < h; ++j) {
    dot += double(u[j]) * v[j];
    nu += double(u[j]) * u[j];
    nv += double(v[j]) * v[j];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  CosineParts p{dot, nu, nv, 0.0};
  p.cos = dot / (nu * nv);
  return p;
}

void cosine_backward_row(float* gu, float* gv, const float* u, const float* v,
                         const CosineParts& p, double gout, bool want_u,
                         bool want_v, int h) {
  const double inv = 1.0 / (p.nu * p.nv);
  for (int j = 0; j < h; ++j) {
    if (want_u)
      gu[j] += static_cast<float>(gout * (v[j] * inv - p.cos * u[j] / (p.nu * p.nu)));
    if (want_v)
      gv[j] += static_cast<float>(gout * (u[j] * inv - p.cos * v[j] / (p.nv * p.nv)));
  }
}

void check_nonzero_norm(double norm, const char* side, int row) {
  if (norm <= 0.0)
    throw DegenerateVectorError(std::string("zero-norm ") + side +
                                " vector at row " + std::to_string(row));
}

}  // namespace

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size())
    throw ShapeError("cosine_similarity length mismatch");
  const int h = static_cast<int>(u.size());
  CosineParts p = cosine_parts(u.data().data(), v.data().data(), h);
  check_nonzero_norm(p.nu, "left", 0);
  check_nonzero_norm(p.nv, "right", 0);
  Tensor out = Tensor::scalar(static_cast<float>(p.cos));
  if (detail::tracking({&u, &v})) {
    Tensor uc = u, vc = v, oc = out;
    record_op(out, [uc, vc, oc, p, h]() mutable {
      const double g = oc.grad()[0];
      cosine_backward_row(uc.requires_grad() ? uc.grad().data() : nullptr,
                          vc.requires_grad() ? vc.grad().data() : nullptr,
                          uc.data().data(), vc.data().data(), p, g,
                          uc.requires_grad(), vc.requires_grad(), h);
    });
  }
  return out;
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  check_2d(a, "cosine_matrix");
  check_2d(b, "cosine_matrix");
  if (a.dim(1) != b.dim(1)) throw ShapeError("cosine_matrix width mismatch");
  const int n = a.dim(0), m = b.dim(0), h = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  auto parts = std::make_shared<std::vector<CosineParts>>();
  parts->reserve(int64_t(n) * m);
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dout = out.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      CosineParts p = cosine_parts(da.data() + int64_t(i) * h,
                                   db.data() + int64_t(j) * h, h);
      if (p.nu <= 0.0) check_nonzero_norm(p.nu, "left", i);
      if (p.nv <= 0.0) check_nonzero_norm(p.nv, "right", j);
      dout[int64_t(i) * m + j] = static_cast<float>(p.cos);
      parts->push_back(p);
    }
  }
  if (detail::tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record_op(out, [ac, bc, oc, parts, n, m, h]() mutable {
      const auto& go = oc.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const double g = go[int64_t(i) * m + j];
          if (g == 0.0) continue;
          cosine_backward_row(
              ac.requires_grad() ? ac.grad().data() + int64_t(i) * h : nullptr,
              bc.requires_grad() ? bc.grad().data() + int64_t(j) * h : nullptr,
              ac.data().data() + int64_t(i) * h,
              bc.data().data() + int64_t(j) * h, (*parts)[int64_t(i) * m + j],
              g, ac.requires_grad(), bc.requires_grad(), h);
        }
    });
  }
  return out;
}

Tensor cosine_pairs(const Tensor& a, const Tensor& b) {
  check_2d(a, "cosine_pairs");
  check_2d(b, "cosine_pairs");
  if (a.shape() != b.shape()) throw ShapeError("cosine_pairs shape mismatch");
  const int n = a.dim(0), h = a.dim(1);
  Tensor out = Tensor::zeros({n});
  auto parts = std::make_shared<std::vector<CosineParts>>();
  parts->reserve(n);
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dout = out.data();
  for (int i = 0; i < n; ++i) {
    CosineParts p = cosine_parts(da.data() + int64_t(i) * h,
                                 db.data() + int64_t(i) * h, h);
    check_nonzero_norm(p.nu, "left", i);
    check_nonzero_norm(p.nv, "right", i);
    dout[i] = static_cast<float>(p.cos);
    parts->push_back(p);
  }
  if (detail::tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    record_op(out, [ac, bc, oc, parts, n, h]() mutable {
      const auto& go = oc.grad();
      for (int i = 0; i < n; ++i)
        cosine_backward_row(
            ac.requires_grad() ? ac.grad().data() + int64_t(i) * h : nullptr,
            bc.requires_grad() ? bc.grad().data() + int64_t(i) * h : nullptr,
            ac.data().data() + int64_t(i) * h, bc.data().data() + int64_t(i) * h,
            (*parts)[i], go[i], ac.requires_grad(), bc.requires_grad(), h);
    });
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  check_2d(logits, "cross_entropy_loss");
  const int b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != b)
    throw ShapeError("label count does not match batch size");
  for (int i = 0; i < b; ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw ContractError("label " + std::to_string(labels[i]) +
                          " out of range [0, " + std::to_string(c) + ")");
  // softmax probabilities cached for backward
  auto probs = std::make_shared<std::vector<float>>(int64_t(b) * c);
  const auto& dl = logits.data();
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const float* row = dl.data() + int64_t(i) * c;
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(double(row[j]) - mx);
    const double log_denom = std::log(denom) + mx;
    total += log_denom - row[labels[i]];
    float* pr = probs->data() + int64_t(i) * c;
    for (int j = 0; j < c; ++j)
      pr[j] = static_cast<float>(std::exp(double(row[j]) - log_denom));
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / b));
  if (detail::tracking({&logits})) {
    Tensor lc = logits, oc = out;
    auto lab = std::make_shared<std::vector<int>>(labels);
    record_op(out, [lc, oc, probs, lab, b, c]() mutable {
      if (!lc.requires_grad()) return;
      const float g = oc.grad()[0] / b;
      auto& gl = lc.grad();
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < c; ++j) {
          const float onehot = (j == (*lab)[i]) ? 1.0f : 0.0f;
          gl[int64_t(i) * c + j] +=
              g * ((*probs)[int64_t(i) * c + j] - onehot);
        }
    });
  }
  return out;
}

Tensor info_nce(const Tensor& sim, const Tensor& hard, float tau) {
  check_2d(sim, "info_nce");
  if (sim.dim(0) != sim.dim(1))
    throw ShapeError("info_nce similarity matrix must be square");
  const int n = sim.dim(0);
  if (n < 1) throw ContractError("info_nce on an empty batch");
  if (hard.size() != n)
    throw ShapeError("info_nce hard-negative vector length mismatch");
  if (tau <= 0.0f) throw ParameterError("temperature must be > 0");
  const auto& ds = sim.data();
  const auto& dh = hard.data();
  // per-anchor softmax weights over {hard_i} ∪ {sim_ij, j=1..n}
  auto weights = std::make_shared<std::vector<double>>(int64_t(n) * (n + 1));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = dh[i] / tau;
    for (int j = 0; j < n; ++j)
      mx = std::max(mx, double(ds[int64_t(i) * n + j]) / tau);
    double denom = std::exp(double(dh[i]) / tau - mx);
    (*weights)[int64_t(i) * (n + 1)] = denom;  // slot 0 = hard negative
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(double(ds[int64_t(i) * n + j]) / tau - mx);
      (*weights)[int64_t(i) * (n + 1) + 1 + j] = e;
      denom += e;
    }
    for (int k = 0; k <= n; ++k) (*weights)[int64_t(i) * (n + 1) + k] /= denom;
    const double lse = std::log(denom) + mx;
    total += -double(ds[int64_t(i) * n + i]) / tau + lse;
  }
  Tensor out = Tensor::scalar(static_cast<float>(total));
  if (detail::tracking({&sim, &hard})) {
    Tensor sc = sim, hc = hard, oc = out;
    record_op(out, [sc, hc, oc, weights, n, tau]() mutable {
      const double g = oc.grad()[0];
      const double inv_tau = 1.0 / tau;
      if (hc.requires_grad()) {
        auto& gh = hc.grad();
        for (int i = 0; i < n; ++i)
          gh[i] += static_cast<float>(
              g * (*weights)[int64_t(i) * (n + 1)] * inv_tau);
      }
      if (sc.requires_grad()) {
        auto& gs = sc.grad();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            double d = (*weights)[int64_t(i) * (n + 1) + 1 + j] * inv_tau;
            if (j == i) d -= inv_tau;
            gs[int64_t(i) * n + j] += static_cast<float>(g * d);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace hmde
