#pragma once

// Define-by-run reverse-mode differentiation.
//
// A Graph owns a topologically ordered list of nodes. Leaves are parameters,
// constants or named inputs. Every other node records its inputs plus a
// forward and a backward closure. Nodes are evaluated eagerly as soon as all
// of their inputs have values, and forward_eval() replays the whole graph
// after rebinding named leaves.
//
// Gradients are accumulated in reverse node order and, within a node, in
// input order, so repeated backward passes are bit-identical.

#include <deque>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vcl/tensor.hpp"

namespace vcl {

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool valid() const { return graph != nullptr; }
};

class Graph {
 public:
  using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
  // grad_in[i] is null when input i does not need a gradient. Implementations
  // add into the non-null targets.
  using BackwardFn = std::function<void(std::span<const Tensor* const> inputs, const Tensor& output,
                                        const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var parameter(Tensor value, std::string name = {});
  Var constant(Tensor value, std::string name = {});
  // Named leaf without a value; dependent nodes stay unevaluated until
  // forward_eval binds it.
  Var input(std::string name, bool requires_grad = true);

  Var apply(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  void set_output(std::string name, Var v);

  // Rebinds the named leaves and re-evaluates every non-leaf node in order.
  // Throws ShapeError on an unknown name and NonFiniteError (with node id) on
  // a NaN/inf intermediate.
  std::map<std::string, Tensor> forward_eval(const std::map<std::string, Tensor>& inputs);

  // Reverse pass from a scalar node.
  void backward(Var output);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool has_value(Var v) const;
  bool requires_grad(Var v) const;
  std::map<std::string, Tensor> leaf_gradients() const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const;

 private:
  struct Node {
    std::string op;
    std::string name;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool has_value = false;
    bool is_leaf = false;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  Var add_node(Node node);
  void evaluate(std::size_t id);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> outputs_;
  bool grads_ready_ = false;
};

// Elementwise; operands must share a shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

// Matrix (rows x cols) plus a bias vector of length cols, broadcast over rows.
Var add_bias(Var m, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);

Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var square(Var a);
// Values outside [lo, hi] are clamped and pass no gradient.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var m);
// Sum over all entries of a (elementwise) weight tensor times a.
Var weighted_sum(Var a, Tensor weights);
// out_i = sum_j w_ij m_ij.
Var weighted_row_sum(Var m, Tensor weights);

Var slice_cols(Var m, std::size_t begin, std::size_t end);
Var slice_rows(Var m, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Each row scaled to unit L2 norm; DegenerateInputError for rows with norm
// at or below kDegenerateNorm.
Var row_l2_normalize(Var m);

// Row-wise log-softmax restricted to entries with mask != 0. Masked-out
// entries of the output are 0 and receive no gradient. The per-row max over
// the mask is subtracted before exponentiation.
Var masked_log_softmax(Var m, std::vector<std::uint8_t> mask);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function built on a fresh graph for every evaluation.
using ScalarGraphFn = std::function<Var(Graph&, Var)>;
double grad_check(const ScalarGraphFn& f, const Tensor& point, double h);

}  // namespace vcl
