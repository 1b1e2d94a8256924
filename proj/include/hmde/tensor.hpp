#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hmde {

// Dense row-major f32 tensor. Copies are shallow: two Tensor handles may
// share the same storage, which is what lets the tape write gradients back
// into parameters after the forward graph is gone.
class Tensor {
 public:
  Tensor() = default;
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int64_t size() const;
  int dim(int axis) const;
  int rank() const;

  std::vector<float>& data();
  const std::vector<float>& data() const;

  bool has_grad() const;
  std::vector<float>& grad();              // allocates zeros on first use
  const std::vector<float>& grad() const;  // throws if absent
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool value);

  float item() const;  // scalar tensors only

  // Deep copy of data (grad not copied).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  Impl& ref() const;
  friend class Tape;
};

// Reverse-mode tape. One tape per forward pass; constructing a Tape makes it
// the active recording target for the current thread, destruction restores
// the previous one. Ops record only while a tape is active and an input
// requires grad.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(Tensor output, std::function<void()> backward_fn);
  size_t num_nodes() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs all recorded nodes in reverse order.
  // Each node consumes (zeroes) its output gradient after propagating it, so
  // leaf gradients accumulate additively: k passes give exactly k times the
  // single-pass gradient.
  void backward(const Tensor& loss);

 private:
  struct Node {
    Tensor output;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

namespace detail {
// true when an op should record: a tape is active and some input needs grad.
bool tracking(std::initializer_list<const Tensor*> inputs);
void accumulate(Tensor& t, const std::vector<float>& delta);
}  // namespace detail

// ---- differentiable operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);          // [m×k]·[k×n]
Tensor transpose(const Tensor& a);                        // 2-D
Tensor add(const Tensor& a, const Tensor& b);             // same shape
Tensor add_row_broadcast(const Tensor& a, const Tensor& bias);  // [R×C]+[C]
Tensor scale(const Tensor& a, float c);
Tensor mul(const Tensor& a, const Tensor& b);             // elementwise
Tensor softmax(const Tensor& x);                          // last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps);
Tensor gelu(const Tensor& x);                             // exact erf form
Tensor sum(const Tensor& x);                              // -> scalar
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor slice_rows(const Tensor& a, int start, int count);
Tensor slice_cols(const Tensor& a, int start, int count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor mean_rows(const Tensor& a, int start, int count);  // -> [C]
Tensor reshape(const Tensor& a, std::vector<int> shape);  // same element count

// Replaces scores at masked key columns with -1e30 (mask[j] == 0). Forward
// output does not depend on the masked entries' values at all.
Tensor mask_keys(const Tensor& scores, const std::vector<char>& key_mask);

// Inverted-dropout with an explicit seed; identity when p == 0.
Tensor dropout(const Tensor& x, float p, uint64_t seed);

Tensor cosine_similarity(const Tensor& u, const Tensor& v);        // -> scalar
Tensor cosine_matrix(const Tensor& a, const Tensor& b);            // [N×M]
Tensor cosine_pairs(const Tensor& a, const Tensor& b);             // [N]
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

// InfoNCE with hard negatives: given S[i][j] = cos(anchor_i, positive_j) and
// hard[i] = cos(anchor_i, negative_i), returns
//   sum_i [ -S[i][i]/tau + log( exp(hard[i]/tau) + sum_j exp(S[i][j]/tau) ) ]
// computed with log-sum-exp stabilization in double.
Tensor info_nce(const Tensor& sim, const Tensor& hard, float tau);

void backward(const Tensor& loss);  // runs Tape::current()->backward(loss)

std::string shape_string(const std::vector<int>& shape);

}  // namespace hmde
