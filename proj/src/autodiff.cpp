#include "vcl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vcl/error.hpp"

namespace vcl {

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }

Var Graph::add_node(Node node) {
  nodes_.push_back(std::move(node));
  grads_ready_ = false;
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor value, std::string name) {
  Node n;
  n.op = "parameter";
  n.name = std::move(name);
  n.value = std::move(value);
  n.has_value = true;
  n.is_leaf = true;
  n.requires_grad = true;
  return add_node(std::move(n));
}

Var Graph::constant(Tensor value, std::string name) {
  Node n;
  n.op = "constant";
  n.name = std::move(name);
  n.value = std::move(value);
  n.has_value = true;
  n.is_leaf = true;
  n.requires_grad = false;
  return add_node(std::move(n));
}

Var Graph::input(std::string name, bool requires_grad) {
  Node n;
  n.op = "input";
  n.name = std::move(name);
  n.is_leaf = true;
  n.requires_grad = requires_grad;
  return add_node(std::move(n));
}

Var Graph::apply(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  bool ready = true;
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::invalid_argument("Graph::apply: input belongs to another graph");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    ready = ready && nodes_[v.id].has_value;
  }
  Var out = add_node(std::move(n));
  if (ready) evaluate(out.id);
  return out;
}

void Graph::evaluate(std::size_t id) {
  Node& n = nodes_[id];
  std::vector<const Tensor*> in;
  in.reserve(n.inputs.size());
  for (auto i : n.inputs) in.push_back(&nodes_[i].value);
  n.value = n.forward(in);
  if (!n.value.all_finite()) {
    throw NonFiniteError("node " + std::to_string(id) + " (" + n.op + ") produced a non-finite value");
  }
  n.has_value = true;
}

void Graph::set_output(std::string name, Var v) { outputs_[std::move(name)] = v.id; }

std::map<std::string, Tensor> Graph::forward_eval(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, t] : inputs) {
    bool bound = false;
    for (auto& n : nodes_) {
      if (n.is_leaf && n.name == name) {
        n.value = t;
        n.has_value = true;
        bound = true;
      }
    }
    if (!bound) throw ShapeError("forward_eval: no leaf named '" + name + "'");
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf) {
      if (!nodes_[i].has_value) {
        throw std::invalid_argument("forward_eval: leaf '" + nodes_[i].name + "' is unbound");
      }
      continue;
    }
    evaluate(i);
  }
  grads_ready_ = false;
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out[name] = nodes_[id].value;
  return out;
}

void Graph::backward(Var output) {
  Node& out = nodes_.at(output.id);
  if (!out.has_value) throw std::logic_error("backward: forward has not been run for the output node");
  if (out.value.size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " + out.value.shape_string());
  }
  for (std::size_t i = 0; i <= output.id; ++i) {
    Node& n = nodes_[i];
    if (!n.has_value) throw std::logic_error("backward: node " + std::to_string(i) + " has no value");
    n.grad = n.requires_grad ? Tensor(n.value.shape(), 0.0) : Tensor();
  }
  for (std::size_t i = output.id + 1; i < nodes_.size(); ++i) nodes_[i].grad = Tensor();
  if (!out.requires_grad) {
    grads_ready_ = true;
    return;
  }
  out.grad[0] = 1.0;
  for (std::size_t k = output.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.is_leaf || !n.requires_grad) continue;
    std::vector<const Tensor*> in;
    std::vector<Tensor*> gin;
    for (auto i : n.inputs) {
      in.push_back(&nodes_[i].value);
      gin.push_back(nodes_[i].requires_grad ? &nodes_[i].grad : nullptr);
    }
    n.backward(in, n.value, n.grad, gin);
  }
  grads_ready_ = true;
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw std::out_of_range("Graph: invalid Var");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  if (!n.has_value) throw std::logic_error("Graph::value: node " + std::to_string(v.id) + " not evaluated");
  return n.value;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!grads_ready_) throw std::logic_error("Graph::grad: backward has not been run");
  if (!n.requires_grad) throw std::logic_error("Graph::grad: node does not require a gradient");
  return n.grad;
}

bool Graph::has_value(Var v) const { return node(v).has_value; }
bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }
const std::string& Graph::op_name(Var v) const { return node(v).op; }

std::map<std::string, Tensor> Graph::leaf_gradients() const {
  if (!grads_ready_) throw std::logic_error("Graph::leaf_gradients: backward has not been run");
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    out[n.name.empty() ? "#" + std::to_string(i) : n.name] = n.grad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
  return *a.graph;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + a.shape_string());
}

template <typename F, typename D>
Var unary(Var a, const char* name, F f, D dfdx) {
  return graph_of(a).apply(
      name, {a},
      [f](std::span<const Tensor* const> in) {
        Tensor out = *in[0];
        for (auto& v : out.data()) v = f(v);
        return out;
      },
      [dfdx](std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
             std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        for (std::size_t i = 0; i < x.size(); ++i) (*gin[0])[i] += g[i] * dfdx(x[i], out[i]);
      });
}

}  // namespace

Var add(Var a, Var b) {
  return graph_of(a).apply(
      "add", {a, b},
      [](std::span<const Tensor* const> in) {
        require_same_shape(*in[0], *in[1], "add");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
        return out;
      },
      [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        for (auto* t : gin) {
          if (!t) continue;
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
        }
      });
}

Var sub(Var a, Var b) {
  return graph_of(a).apply(
      "sub", {a, b},
      [](std::span<const Tensor* const> in) {
        require_same_shape(*in[0], *in[1], "sub");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= (*in[1])[i];
        return out;
      },
      [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (gin[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        }
        if (gin[1]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
        }
      });
}

Var mul(Var a, Var b) {
  return graph_of(a).apply(
      "mul", {a, b},
      [](std::span<const Tensor* const> in) {
        require_same_shape(*in[0], *in[1], "mul");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (gin[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i];
        }
        if (gin[1]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*in[0])[i];
        }
      });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var a, double c) {
  return unary(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var add_bias(Var m, Var b) {
  return graph_of(m).apply(
      "add_bias", {m, b},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& bias = *in[1];
        require_rank2(x, "add_bias");
        if (bias.size() != x.cols()) throw ShapeError("add_bias: bias length does not match columns");
        Tensor out = x;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) += bias[c];
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& x = *in[0];
        if (gin[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        }
        if (gin[1]) {
          for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) (*gin[1])[c] += g.at(r, c);
          }
        }
      });
}

namespace {

// out += a * b with a (n x k), b (k x m).
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * m;
      double* orow = out.data().data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  return graph_of(a).apply(
      "matmul", {a, b},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        require_rank2(x, "matmul");
        require_rank2(y, "matmul");
        if (x.cols() != y.rows()) {
          throw ShapeError("matmul: inner dimensions differ " + x.shape_string() + " x " + y.shape_string());
        }
        Tensor out = Tensor::matrix(x.rows(), y.cols());
        gemm_acc(x, y, out);
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
        if (gin[0]) {
          // dX = G Y^T
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * y[p * m + j];
              (*gin[0])[i * k + p] += s;
            }
          }
        }
        if (gin[1]) {
          // dY = X^T G
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x[i * k + p];
              if (xv == 0.0) continue;
              for (std::size_t j = 0; j < m; ++j) (*gin[1])[p * m + j] += xv * g[i * m + j];
            }
          }
        }
      });
}

Var transpose(Var a) {
  return graph_of(a).apply(
      "transpose", {a},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        require_rank2(x, "transpose");
        Tensor out = Tensor::matrix(x.cols(), x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) out.at(c, r) = x.at(r, c);
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) gin[0]->at(r, c) += g.at(c, r);
        }
      });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sin(Var a) {
  return unary(
      a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  return graph_of(a).apply(
      "sum", {a},
      [](std::span<const Tensor* const> in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        for (auto& v : gin[0]->data()) v += g[0];
      });
}

Var mean(Var a) {
  return graph_of(a).apply(
      "mean", {a},
      [](std::span<const Tensor* const> in) {
        if (in[0]->size() == 0) throw ShapeError("mean of an empty tensor");
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s / static_cast<double>(in[0]->size()));
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const double w = g[0] / static_cast<double>(in[0]->size());
        for (auto& v : gin[0]->data()) v += w;
      });
}

Var row_sum(Var m) {
  return graph_of(m).apply(
      "row_sum", {m},
      [](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        require_rank2(x, "row_sum");
        Tensor out({x.rows()}, 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double s = 0.0;
          for (double v : x.row(r)) s += v;
          out[r] = s;
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (auto& v : gin[0]->row(r)) v += g[r];
        }
      });
}

Var weighted_sum(Var a, Tensor weights) {
  return graph_of(a).apply(
      "weighted_sum", {a},
      [weights](std::span<const Tensor* const> in) {
        if (in[0]->size() != weights.size()) throw ShapeError("weighted_sum: weight size mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * (*in[0])[i];
        return Tensor::scalar(s);
      },
      [weights](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < weights.size(); ++i) (*gin[0])[i] += g[0] * weights[i];
      });
}

Var weighted_row_sum(Var m, Tensor weights) {
  return graph_of(m).apply(
      "weighted_row_sum", {m},
      [weights](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        require_rank2(x, "weighted_row_sum");
        if (x.size() != weights.size()) throw ShapeError("weighted_row_sum: weight size mismatch");
        Tensor out({x.rows()}, 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) s += weights[r * x.cols() + c] * x.at(r, c);
          out[r] = s;
        }
        return out;
      },
      [weights](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) gin[0]->at(r, c) += g[r] * weights[r * x.cols() + c];
        }
      });
}

Var slice_cols(Var m, std::size_t begin, std::size_t end) {
  return graph_of(m).apply(
      "slice_cols", {m},
      [begin, end](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        require_rank2(x, "slice_cols");
        if (begin > end || end > x.cols()) throw ShapeError("slice_cols: range out of bounds");
        Tensor out = Tensor::matrix(x.rows(), end - begin);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = x.at(r, c);
        }
        return out;
      },
      [begin, end](std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                   std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < in[0]->rows(); ++r) {
          for (std::size_t c = begin; c < end; ++c) gin[0]->at(r, c) += g.at(r, c - begin);
        }
      });
}

Var slice_rows(Var m, std::size_t begin, std::size_t end) {
  return graph_of(m).apply(
      "slice_rows", {m},
      [begin, end](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        require_rank2(x, "slice_rows");
        if (begin > end || end > x.rows()) throw ShapeError("slice_rows: range out of bounds");
        const std::size_t c = x.cols();
        std::vector<double> d(x.data().begin() + begin * c, x.data().begin() + end * c);
        return Tensor::matrix(end - begin, c, std::move(d));
      },
      [begin](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const std::size_t off = begin * in[0]->cols();
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[off + i] += g[i];
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  return graph_of(parts.front())
      .apply(
          "concat_rows", parts,
          [](std::span<const Tensor* const> in) {
            if (in[0]->rank() == 1) {
              std::vector<double> d;
              for (const Tensor* t : in) {
                if (t->rank() != 1) throw ShapeError("concat_rows: mixed vector and matrix inputs");
                d.insert(d.end(), t->data().begin(), t->data().end());
              }
              return Tensor::vector(std::move(d));
            }
            const std::size_t c = in[0]->cols();
            std::size_t rows = 0;
            for (const Tensor* t : in) {
              require_rank2(*t, "concat_rows");
              if (t->cols() != c) throw ShapeError("concat_rows: column counts differ");
              rows += t->rows();
            }
            std::vector<double> d;
            d.reserve(rows * c);
            for (const Tensor* t : in) d.insert(d.end(), t->data().begin(), t->data().end());
            return Tensor::matrix(rows, c, std::move(d));
          },
          [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
              const std::size_t n = in[k]->size();
              if (gin[k]) {
                for (std::size_t i = 0; i < n; ++i) (*gin[k])[i] += g[off + i];
              }
              off += n;
            }
          });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  return graph_of(parts.front())
      .apply(
          "concat_cols", parts,
          [](std::span<const Tensor* const> in) {
            const std::size_t r = in[0]->rows();
            std::size_t cols = 0;
            for (const Tensor* t : in) {
              require_rank2(*t, "concat_cols");
              if (t->rows() != r) throw ShapeError("concat_cols: row counts differ");
              cols += t->cols();
            }
            Tensor out = Tensor::matrix(r, cols);
            std::size_t off = 0;
            for (const Tensor* t : in) {
              for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < t->cols(); ++j) out.at(i, off + j) = t->at(i, j);
              }
              off += t->cols();
            }
            return out;
          },
          [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> gin) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
              const Tensor& t = *in[k];
              if (gin[k]) {
                for (std::size_t i = 0; i < t.rows(); ++i) {
                  for (std::size_t j = 0; j < t.cols(); ++j) gin[k]->at(i, j) += g.at(i, off + j);
                }
              }
              off += t.cols();
            }
          });
}

Var row_l2_normalize(Var m) {
  return graph_of(m).apply(
      "row_l2_normalize", {m},
      [](std::span<const Tensor* const> in) {
        Tensor out = *in[0];
        for (std::size_t r = 0; r < out.rows(); ++r) {
          auto row = out.row(r);
          const double n = l2_norm(row);
          if (!(n > kDegenerateNorm)) {
            throw DegenerateInputError("row_l2_normalize: row " + std::to_string(r) + " has norm " +
                                       std::to_string(n));
          }
          for (auto& v : row) v /= n;
        }
        return out;
      },
      [](std::span<const Tensor* const> in, const Tensor& out, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double n = l2_norm(x.row(r));
          auto y = out.row(r);
          auto gr = g.row(r);
          const double yg = dot(y, gr);
          auto dst = gin[0]->row(r);
          for (std::size_t c = 0; c < y.size(); ++c) dst[c] += (gr[c] - y[c] * yg) / n;
        }
      });
}

Var masked_log_softmax(Var m, std::vector<std::uint8_t> mask) {
  return graph_of(m).apply(
      "masked_log_softmax", {m},
      [mask](std::span<const Tensor* const> in) {
        const Tensor& x = *in[0];
        require_rank2(x, "masked_log_softmax");
        if (mask.size() != x.size()) throw ShapeError("masked_log_softmax: mask size mismatch");
        Tensor out = Tensor::matrix(x.rows(), x.cols());
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < c; ++j) {
            if (mask[r * c + j]) mx = std::max(mx, x.at(r, j));
          }
          if (!std::isfinite(mx)) throw ShapeError("masked_log_softmax: row " + std::to_string(r) + " fully masked");
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            if (mask[r * c + j]) s += std::exp(x.at(r, j) - mx);
          }
          const double lse = mx + std::log(s);
          for (std::size_t j = 0; j < c; ++j) {
            if (mask[r * c + j]) out.at(r, j) = x.at(r, j) - lse;
          }
        }
        return out;
      },
      [mask](std::span<const Tensor* const> in, const Tensor& out, const Tensor& g, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const std::size_t c = in[0]->cols();
        for (std::size_t r = 0; r < in[0]->rows(); ++r) {
          double gs = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            if (mask[r * c + j]) gs += g.at(r, j);
          }
          for (std::size_t j = 0; j < c; ++j) {
            if (mask[r * c + j]) gin[0]->at(r, j) += g.at(r, j) - std::exp(out.at(r, j)) * gs;
          }
        }
      });
}

double grad_check(const ScalarGraphFn& f, const Tensor& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  auto eval = [&](const Tensor& p) {
    Graph g;
    Var x = g.parameter(p, "x");
    Var y = f(g, x);
    const double v = y.value().item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite function value");
    return v;
  };
  Graph g;
  Var x = g.parameter(point, "x");
  Var y = f(g, x);
  g.backward(y);
  const Tensor analytic = x.grad();
  double worst = 0.0;
  Tensor p = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = eval(p);
    p[i] = orig - h;
    const double fm = eval(p);
    p[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vcl
