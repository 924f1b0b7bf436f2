#pragma once

// Scalar reverse-mode automatic differentiation on an append-only tape
// (Wengert list) with first-class stop-gradient nodes.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "dreg/error.hpp"

namespace dreg::tape {

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kStopGradient,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kSquare,
  kSum,
  kLogSumExp,
  kMax,
  kDot,  // sum_i w_i * x_i over operands (w_0..w_{n-1}, x_0..x_{n-1})
};

std::string_view op_name(Op op);

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  double value() const;
  std::uint32_t id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Result of a backward pass: one adjoint per node of the graph.
class Gradients {
 public:
  Gradients(std::vector<double> adjoints, std::vector<std::uint32_t> leaves)
      : adjoints_(std::move(adjoints)), leaves_(std::move(leaves)) {}

  /// d root / d v. Nodes not reached by the pass report 0.
  double operator[](Var v) const;
  double at(std::uint32_t id) const;

  /// Gradient restricted to the graph's leaves, keyed by node id.
  std::map<std::uint32_t, double> leaf_map() const;

  /// Gradient for a list of variables, in order.
  std::vector<double> gather(std::span<const Var> vars) const;

 private:
  std::vector<double> adjoints_;
  std::vector<std::uint32_t> leaves_;
};

/// Append-only computation record. Every node's parents precede it, so a
/// single reverse sweep visits each node once. A graph is confined to one
/// thread at a time and is neither copyable nor movable (Vars point at it);
/// hold it by unique_ptr to hand it to another context.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable input.
  Var leaf(double value);
  std::vector<Var> leaves(std::span<const double> values);

  /// Non-differentiable input.
  Var constant(double value);

  /// Generic recording entry point. Validates arity, domain, finiteness.
  Var record(Op op, std::span<const Var> operands);

  /// Same forward value as x; the backward pass propagates nothing through it.
  Var stop_gradient(Var x);

  Gradients backward(Var root) const;
  /// Vector-Jacobian product: seeds[i] is the cotangent of roots[i].
  Gradients backward(std::span<const Var> roots,
                     std::span<const double> seeds) const;

  std::size_t size() const { return values_.size(); }
  double value(std::uint32_t id) const { return values_[id]; }
  Op op(std::uint32_t id) const { return ops_[id]; }
  std::span<const std::uint32_t> parents(std::uint32_t id) const;
  std::span<const std::uint32_t> inputs() const { return inputs_; }

  /// Drops all nodes but keeps allocated capacity for reuse.
  void clear();

  // Fast paths used by the operator overloads; same checks as record().
  Var unary(Op op, Var a);
  Var binary(Op op, Var a, Var b);

 private:
  std::uint32_t push_node(Op op, double value);
  void check_owned(Var v) const;

  std::vector<double> values_;
  std::vector<Op> ops_;
  std::vector<std::uint32_t> offsets_{0};
  std::vector<std::uint32_t> parents_;
  std::vector<double> partials_;
  std::vector<std::uint32_t> inputs_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);

Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var square(Var x);
Var stop_gradient(Var x);
Var sum(std::span<const Var> xs);
Var log_sum_exp(std::span<const Var> xs);
Var max(std::span<const Var> xs);
Var dot(std::span<const Var> w, std::span<const Var> x);

std::vector<double> values(std::span<const Var> xs);

/// A scalar function recorded onto a fresh graph from its parameter leaves.
using TapeFunction = std::function<Var(Graph&, std::span<const Var>)>;

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8),
/// with the analytic gradient taken from one backward pass.
double finite_diff_check(const TapeFunction& f, std::span<const double> at,
                         double step);

/// Value and gradient of f at a point.
struct ValueAndGradient {
  double value;
  std::vector<double> gradient;
};
ValueAndGradient value_and_gradient(const TapeFunction& f,
                                    std::span<const double> at);

}  // namespace dreg::tape
