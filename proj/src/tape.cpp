#include "dreg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dreg::tape {
namespace {

[[noreturn]] void fail(Op op, const std::string& what) {
  throw Error("tape: " + std::string(op_name(op)) + ": " + what);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kStopGradient: return "stop-gradient";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kLogSumExp: return "log-sum-exp";
    case Op::kMax: return "max";
    case Op::kDot: return "dot";
  }
  return "?";
}

double Var::value() const {
  if (graph_ == nullptr) throw Error("tape: value of an unbound Var");
  return graph_->value(id_);
}

double Gradients::operator[](Var v) const { return at(v.id()); }

double Gradients::at(std::uint32_t id) const {
  return id < adjoints_.size() ? adjoints_[id] : 0.0;
}

std::map<std::uint32_t, double> Gradients::leaf_map() const {
  std::map<std::uint32_t, double> out;
  for (auto id : leaves_) out[id] = at(id);
  return out;
}

std::vector<double> Gradients::gather(std::span<const Var> vars) const {
  std::vector<double> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(at(v.id()));
  return out;
}

std::span<const std::uint32_t> Graph::parents(std::uint32_t id) const {
  return std::span<const std::uint32_t>(parents_).subspan(
      offsets_[id], offsets_[id + 1] - offsets_[id]);
}

void Graph::clear() {
  values_.clear();
  ops_.clear();
  offsets_.assign(1, 0);
  parents_.clear();
  partials_.clear();
  inputs_.clear();
}

void Graph::check_owned(Var v) const {
  if (v.graph() != this) throw Error("tape: operand belongs to another graph");
}

std::uint32_t Graph::push_node(Op op, double value) {
  if (!std::isfinite(value)) fail(op, "non-finite result");
  const auto id = static_cast<std::uint32_t>(values_.size());
  values_.push_back(value);
  ops_.push_back(op);
  offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
  return id;
}

Var Graph::leaf(double value) {
  const auto id = push_node(Op::kLeaf, value);
  inputs_.push_back(id);
  return Var(this, id);
}

std::vector<Var> Graph::leaves(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(leaf(v));
  return out;
}

Var Graph::constant(double value) { return Var(this, push_node(Op::kConstant, value)); }

Var Graph::stop_gradient(Var x) {
  check_owned(x);
  return Var(this, push_node(Op::kStopGradient, values_[x.id()]));
}

Var Graph::unary(Op op, Var a) {
  check_owned(a);
  const double x = values_[a.id()];
  double v = 0.0;
  double d = 0.0;
  switch (op) {
    case Op::kNeg: v = -x; d = -1.0; break;
    case Op::kExp: v = std::exp(x); d = v; break;
    case Op::kLog:
      if (!(x > 0.0)) fail(op, "operand must be positive");
      v = std::log(x);
      d = 1.0 / x;
      break;
    case Op::kTanh: v = std::tanh(x); d = 1.0 - v * v; break;
    case Op::kSigmoid: v = stable_sigmoid(x); d = v * (1.0 - v); break;
    case Op::kSquare: v = x * x; d = 2.0 * x; break;
    case Op::kStopGradient: return stop_gradient(a);
    default: fail(op, "not a unary op");
  }
  const auto id = push_node(op, v);
  parents_.push_back(a.id());
  partials_.push_back(d);
  offsets_.back() = static_cast<std::uint32_t>(parents_.size());
  return Var(this, id);
}

Var Graph::binary(Op op, Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const double x = values_[a.id()];
  const double y = values_[b.id()];
  double v = 0.0;
  double da = 0.0;
  double db = 0.0;
  switch (op) {
    case Op::kAdd: v = x + y; da = 1.0; db = 1.0; break;
    case Op::kSub: v = x - y; da = 1.0; db = -1.0; break;
    case Op::kMul: v = x * y; da = y; db = x; break;
    case Op::kDiv:
      if (y == 0.0) fail(op, "division by zero");
      v = x / y;
      da = 1.0 / y;
      db = -v / y;
      break;
    default: fail(op, "not a binary op");
  }
  const auto id = push_node(op, v);
  parents_.push_back(a.id());
  parents_.push_back(b.id());
  partials_.push_back(da);
  partials_.push_back(db);
  offsets_.back() = static_cast<std::uint32_t>(parents_.size());
  return Var(this, id);
}

Var Graph::record(Op op, std::span<const Var> xs) {
  for (const auto& x : xs) check_owned(x);
  switch (op) {
    case Op::kNeg:
    case Op::kExp:
    case Op::kLog:
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kSquare:
    case Op::kStopGradient:
      if (xs.size() != 1) fail(op, "expects one operand");
      return unary(op, xs[0]);
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv:
      if (xs.size() != 2) fail(op, "expects two operands");
      return binary(op, xs[0], xs[1]);
    case Op::kLeaf:
    case Op::kConstant:
      fail(op, "inputs are created with leaf()/constant()");
    default:
      break;
  }
  if (xs.empty()) fail(op, "expects at least one operand");

  const std::size_t n = xs.size();
  double v = 0.0;
  // Partials are written straight after the parents below.
  std::vector<double> d(n, 0.0);
  switch (op) {
    case Op::kSum:
      for (std::size_t i = 0; i < n; ++i) {
        v += values_[xs[i].id()];
        d[i] = 1.0;
      }
      break;
    case Op::kLogSumExp: {
      double m = -std::numeric_limits<double>::infinity();
      for (const auto& x : xs) m = std::max(m, values_[x.id()]);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = std::exp(values_[xs[i].id()] - m);
        s += d[i];
      }
      for (auto& di : d) di /= s;
      v = m + std::log(s);
      break;
    }
    case Op::kMax: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (values_[xs[i].id()] > values_[xs[best].id()]) best = i;
      v = values_[xs[best].id()];
      d[best] = 1.0;
      break;
    }
    case Op::kDot: {
      if (n % 2 != 0) fail(op, "expects an even number of operands");
      const std::size_t h = n / 2;
      for (std::size_t i = 0; i < h; ++i) {
        const double w = values_[xs[i].id()];
        const double x = values_[xs[h + i].id()];
        v += w * x;
        d[i] = x;
        d[h + i] = w;
      }
      break;
    }
    default:
      fail(op, "unsupported op");
  }
  const auto id = push_node(op, v);
  for (std::size_t i = 0; i < n; ++i) {
    parents_.push_back(xs[i].id());
    partials_.push_back(d[i]);
  }
  offsets_.back() = static_cast<std::uint32_t>(parents_.size());
  return Var(this, id);
}

Gradients Graph::backward(Var root) const {
  const double one = 1.0;
  return backward(std::span<const Var>(&root, 1), std::span<const double>(&one, 1));
}

Gradients Graph::backward(std::span<const Var> roots,
                          std::span<const double> seeds) const {
  if (roots.size() != seeds.size())
    throw Error("tape: backward needs one seed per root");
  std::vector<double> adj(values_.size(), 0.0);
  std::uint32_t top = 0;
  for (std::size_t r = 0; r < roots.size(); ++r) {
    if (roots[r].graph() != this || roots[r].id() >= values_.size())
      throw Error("tape: backward root is not a node of this graph");
    adj[roots[r].id()] += seeds[r];
    top = std::max(top, roots[r].id() + 1);
  }
  for (std::uint32_t i = top; i-- > 0;) {
    const double a = adj[i];
    if (a == 0.0) continue;
    const std::uint32_t begin = offsets_[i];
    const std::uint32_t end = offsets_[i + 1];
    for (std::uint32_t k = begin; k < end; ++k) adj[parents_[k]] += partials_[k] * a;
  }
  return Gradients(std::move(adj), inputs_);
}

namespace {

Graph& graph_of(Var v) {
  if (!v.valid()) throw Error("tape: operand is not bound to a graph");
  return *v.graph();
}

Graph& graph_of(std::span<const Var> xs) {
  if (xs.empty()) throw Error("tape: empty operand list");
  return graph_of(xs[0]);
}

}  // namespace

Var operator+(Var a, Var b) { return graph_of(a).binary(Op::kAdd, a, b); }
Var operator-(Var a, Var b) { return graph_of(a).binary(Op::kSub, a, b); }
Var operator*(Var a, Var b) { return graph_of(a).binary(Op::kMul, a, b); }
Var operator/(Var a, Var b) { return graph_of(a).binary(Op::kDiv, a, b); }
Var operator-(Var a) { return graph_of(a).unary(Op::kNeg, a); }
Var operator+(Var a, double b) { return a + graph_of(a).constant(b); }
Var operator+(double a, Var b) { return graph_of(b).constant(a) + b; }
Var operator-(Var a, double b) { return a - graph_of(a).constant(b); }
Var operator-(double a, Var b) { return graph_of(b).constant(a) - b; }
Var operator*(Var a, double b) { return a * graph_of(a).constant(b); }
Var operator*(double a, Var b) { return graph_of(b).constant(a) * b; }
Var operator/(Var a, double b) { return a / graph_of(a).constant(b); }

Var exp(Var x) { return graph_of(x).unary(Op::kExp, x); }
Var log(Var x) { return graph_of(x).unary(Op::kLog, x); }
Var tanh(Var x) { return graph_of(x).unary(Op::kTanh, x); }
Var sigmoid(Var x) { return graph_of(x).unary(Op::kSigmoid, x); }
Var square(Var x) { return graph_of(x).unary(Op::kSquare, x); }
Var stop_gradient(Var x) { return graph_of(x).stop_gradient(x); }
Var sum(std::span<const Var> xs) { return graph_of(xs).record(Op::kSum, xs); }
Var log_sum_exp(std::span<const Var> xs) {
  return graph_of(xs).record(Op::kLogSumExp, xs);
}
Var max(std::span<const Var> xs) { return graph_of(xs).record(Op::kMax, xs); }

Var dot(std::span<const Var> w, std::span<const Var> x) {
  if (w.size() != x.size()) throw Error("tape: dot: length mismatch");
  std::vector<Var> operands;
  operands.reserve(2 * w.size());
  operands.insert(operands.end(), w.begin(), w.end());
  operands.insert(operands.end(), x.begin(), x.end());
  return graph_of(std::span<const Var>(operands)).record(Op::kDot, operands);
}

std::vector<double> values(std::span<const Var> xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.value());
  return out;
}

ValueAndGradient value_and_gradient(const TapeFunction& f,
                                    std::span<const double> at) {
  Graph g;
  const auto params = g.leaves(at);
  const Var root = f(g, params);
  const auto grads = g.backward(root);
  return {root.value(), grads.gather(params)};
}

double finite_diff_check(const TapeFunction& f, std::span<const double> at,
                         double step) {
  if (!(step > 0.0)) throw Error("finite_diff_check: step must be positive");
  const auto analytic = value_and_gradient(f, at).gradient;
  auto eval = [&](const std::vector<double>& p) {
    Graph g;
    const double v = f(g, g.leaves(p)).value();
    if (!std::isfinite(v)) throw Error("finite_diff_check: non-finite probe value");
    return v;
  };
  std::vector<double> probe(at.begin(), at.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = eval(probe);
    probe[i] = orig - step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

}  // namespace dreg::tape
