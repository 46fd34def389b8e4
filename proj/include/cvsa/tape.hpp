#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "cvsa/tensor.hpp"

namespace cvsa {

using NodeId = std::size_t;

// Replay log for stop_gradient nodes. The finite-difference checker records
// the stopped values on a reference forward pass and replays them on the
// perturbed passes, so the differenced function is exactly the function the
// tape differentiates (stopped branches held constant).
struct StopGradLog {
  enum class Mode { record, replay };
  Mode mode = Mode::record;
  std::vector<Tensor> values;
  std::size_t cursor = 0;

  void rewind() { cursor = 0; }
};

// Fault injection used by the selfcheck mutation-sanity fixture.
struct NumericsFaults {
  bool flip_sigmoid_grad = false;
};

// Reverse-mode tape over Tensor values. Nodes are recorded in construction
// order (already topological); backward() walks them in reverse, accumulating
// partials into per-node gradient buffers. Leaves registered via param() are
// trainable; constant() leaves never receive gradients and cut backward flow.
//
// Single-owner: one tape per training step, not shared across threads.
class GradientTape {
 public:
  GradientTape() = default;
  explicit GradientTape(StopGradLog* sg_log) : sg_log_(sg_log) {}

  NodeId param(Tensor value) { return push(std::move(value), true); }
  NodeId constant(Tensor value) { return push(std::move(value), false); }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = seed and runs the reverse sweep. Root must be a
  // scalar (single-element tensor).
  void backward(NodeId root, double seed = 1.0);

  // Multi-root form: accumulate cotangents at any nodes, then sweep once.
  // Lets a computation that continues on another tape (the batch-level head
  // pass) hand its input gradients back to this one.
  void accumulate_seed(NodeId node, const Tensor& cotangent);
  void run_backward();

  bool has_grad(NodeId id) const { return nodes_[id].grad_alloc; }
  const Tensor& grad(NodeId id) const;

  // Order-sensitive hash of every nondifferentiable selection made during
  // the forward pass (ReLU active sets, row-max argmax choices). Two passes
  // with the same signature evaluated the same smooth branch of the function.
  std::uint64_t selection_signature() const { return selection_sig_; }
  bool saw_exact_max_tie() const { return exact_max_tie_; }

  NumericsFaults& faults() { return faults_; }
  const NumericsFaults& faults() const { return faults_; }

  // --- internals used by the op implementations ---
  using BackwardFn = std::function<void(GradientTape&, NodeId)>;

  NodeId push(Tensor value, bool requires_grad);
  void set_backward(NodeId id, BackwardFn fn) { nodes_[id].backward = std::move(fn); }
  Tensor& grad_buf(NodeId id);  // allocates zeros on first touch
  void note_selection(std::uint64_t word) {
    selection_sig_ = (selection_sig_ ^ word) * 0x100000001b3ULL;
  }
  void note_exact_max_tie() { exact_max_tie_ = true; }
  StopGradLog* sg_log() { return sg_log_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool grad_alloc = false;
  };

  // deque: value()/grad() references stay valid while new nodes are pushed
  std::deque<Node> nodes_;
  StopGradLog* sg_log_ = nullptr;
  NumericsFaults faults_;
  std::uint64_t selection_sig_ = 0xcbf29ce484222325ULL;
  bool exact_max_tie_ = false;
};

// ---- differentiable operations ----

// Standard product a[m×k]·b[k×n]; gradients g·bᵀ and aᵀ·g.
NodeId matmul(GradientTape& t, NodeId a, NodeId b);
// a[m×k]·bᵀ for b[n×k]; the attention-map building block.
NodeId matmul_nt(GradientTape& t, NodeId a, NodeId b);

// Registered elementwise primitives.
NodeId sigmoid(GradientTape& t, NodeId x);
NodeId relu(GradientTape& t, NodeId x);
NodeId scale(GradientTape& t, NodeId x, double c);
NodeId add(GradientTape& t, NodeId a, NodeId b);

NodeId sub(GradientTape& t, NodeId a, NodeId b);
NodeId mul(GradientTape& t, NodeId a, NodeId b);
NodeId divide(GradientTape& t, NodeId a, NodeId b);
NodeId sqrt_elem(GradientTape& t, NodeId x);  // requires strictly positive input

// a[N×F] + row vector b[F].
NodeId add_rowwise(GradientTape& t, NodeId a, NodeId b);

struct RowMax {
  NodeId values;                   // [m]
  std::vector<std::size_t> argmax; // per-row winning column (lowest index on ties)
};
// Row-wise max of a 2-D tensor; gradient routes entirely to the argmax
// element of each row.
RowMax reduce_max_rows(GradientTape& t, NodeId a);

// Half-pixel-center, edge-clamped bilinear resampling of a 2-D map. Linear
// in its input, so the gradient is the transposed interpolation operator.
NodeId bilinear_resize(GradientTape& t, NodeId x, std::size_t out_h, std::size_t out_w);

// Per-pixel affine map t[H×W×Cin] -> [H×W×Cout].
NodeId conv1x1(GradientTape& t, NodeId x, NodeId w, NodeId b);

// Small direct convolution, w[kh×kw×Cin×Cout], zero padding.
NodeId conv2d(GradientTape& t, NodeId x, NodeId w, NodeId b, std::size_t stride,
              std::size_t pad);

// Training-mode batch normalization over rows of t[N×F] (N >= 2), then
// per-feature affine with gamma/beta.
NodeId batchnorm(GradientTape& t, NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);

// Identity value, gradient barrier. Participates in StopGradLog record/replay.
NodeId stop_gradient(GradientTape& t, NodeId x);

NodeId reshape(GradientTape& t, NodeId x, std::vector<std::size_t> new_shape);
NodeId mean_all(GradientTape& t, NodeId x);   // -> scalar
NodeId sum_all(GradientTape& t, NodeId x);    // -> scalar
NodeId mean_rows(GradientTape& t, NodeId x);  // [N×F] -> [F]
NodeId dot(GradientTape& t, NodeId a, NodeId b);  // flattened inner product -> scalar
NodeId concat_rows(GradientTape& t, NodeId a, NodeId b);
NodeId take_row(GradientTape& t, NodeId a, std::size_t row);  // [N×F] -> [F]

// Raw (non-taped) bilinear kernel shared with the image pipeline.
// src is h×w with `channels` interleaved values per pixel; dst likewise.
void bilinear_resample_raw(const double* src, std::size_t h, std::size_t w,
                           double* dst, std::size_t out_h, std::size_t out_w,
                           std::size_t channels);

}  // namespace cvsa
