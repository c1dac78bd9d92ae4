#include "shrinking/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "shrinking/errors.hpp"

namespace shrinking {

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Matrix& param) {
  if (auto it = params_.find(&param); it != params_.end()) return Var{this, it->second};
  nodes_.push_back(Node{param, {}, {}, true});
  params_.emplace(&param, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::span<const std::size_t> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [&](std::size_t id) { return nodes_[id].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var{this, nodes_.size() - 1};
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
    n.grad = Matrix(n.value.rows(), n.value.cols(), 0.0);
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.id >= nodes_.size()) {
    throw ConfigError("backward: loss node is not recorded on this tape");
  }
  if (nodes_[loss.id].value.rows() != 1 || nodes_[loss.id].value.cols() != 1) {
    throw ConfigError("backward: loss must be 1x1, got " + shape_string(nodes_[loss.id].value));
  }
  for (auto& n : nodes_) n.grad = Matrix();
  grad_buffer(loss.id)(0, 0) = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols(), 0.0);
  return n.grad;
}

Matrix Tape::grad_of(const Matrix& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return Matrix(param.rows(), param.cols(), 0.0);
  return grad(Var{const_cast<Tape*>(this), it->second});
}

std::vector<std::size_t> canonical_row_order(const Matrix& m) {
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = m.row(a);
    auto rb = m.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

namespace ad {
namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ConfigError("operands recorded on different tapes");
  return *a.tape;
}

void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ConfigError(std::string(op) + ": shape " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <typename Fn, typename Grad>
Var unary(Var a, Fn fn, Grad grad) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.values()[i] = fn(x.values()[i]);
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id, grad](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(self);
    Matrix& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx.values()[i] += g.values()[i] * grad(x.values()[i], y.values()[i]);
    }
  });
}

double stable_sigmoid(double v) {
  const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  // keep the open interval (0, 1) representable at saturation
  return std::clamp(y, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "add");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += b.value().values()[i];
  const std::array<std::size_t, 2> in{a.id, b.id};
  return t.record(std::move(y), in, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      const Matrix& g = t.grad_buffer(self);
      Matrix& gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx.values()[i] += g.values()[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, neg(b)); }

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(a.value(), b.value(), "mul");
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] *= b.value().values()[i];
  const std::array<std::size_t, 2> in{a.id, b.id};
  return t.record(std::move(y), in, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      const Matrix& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga.values()[i] += g.values()[i] * vb.values()[i];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad_buffer(ib);
      const Matrix& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb.values()[i] += g.values()[i] * va.values()[i];
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  return unary(a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var scale(Var a, Var s) {
  Tape& t = tape_of(a, s);
  require_shape(s.value(), 1, 1, "scale factor");
  const double f = s.value()(0, 0);
  Matrix y = a.value();
  for (double& v : y.values()) v *= f;
  const std::array<std::size_t, 2> in{a.id, s.id};
  return t.record(std::move(y), in, [ia = a.id, is = s.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      const double f = t.value(is)(0, 0);
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.values()[i] += g.values()[i] * f;
    }
    if (t.requires_grad(is)) {
      const Matrix& va = t.value(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g.values()[i] * va.values()[i];
      t.grad_buffer(is)(0, 0) += acc;
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require_shape(row.value(), 1, a.cols(), "add_row");
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t c = 0; c < y.cols(); ++c) yr[c] += row.value()(0, c);
  }
  const std::array<std::size_t, 2> in{a.id, row.id};
  return t.record(std::move(y), in, [ia = a.id, ir = row.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.values()[i] += g.values()[i];
    }
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad_buffer(ir);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
      }
    }
  });
}

Var mul_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require_shape(row.value(), 1, a.cols(), "mul_row");
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t c = 0; c < y.cols(); ++c) yr[c] *= row.value()(0, c);
  }
  const std::array<std::size_t, 2> in{a.id, row.id};
  return t.record(std::move(y), in, [ia = a.id, ir = row.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& va = t.value(ia);
    const Matrix& vr = t.value(ir);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * vr(0, c);
      }
    }
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad_buffer(ir);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c) * va(r, c);
      }
    }
  });
}

Var div_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  require_shape(col.value(), a.rows(), 1, "div_col");
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double d = col.value()(r, 0);
    for (double& v : y.row(r)) v /= d;
  }
  const std::array<std::size_t, 2> in{a.id, col.id};
  return t.record(std::move(y), in, [ia = a.id, ic = col.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& va = t.value(ia);
    const Matrix& vc = t.value(ic);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) / vc(r, 0);
      }
    }
    if (t.requires_grad(ic)) {
      Matrix& gc = t.grad_buffer(ic);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double d = vc(r, 0);
        double acc = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * va(r, c);
        gc(r, 0) -= acc / (d * d);
      }
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  tape_of(w, b);
  const Matrix& X = x.value();
  const Matrix& W = w.value();
  const std::size_t n = X.rows();
  const std::size_t in_dim = W.cols();
  const std::size_t out_dim = W.rows();
  if (X.cols() != in_dim) {
    throw ConfigError("linear: input width " + std::to_string(X.cols()) + " but weight is " +
                      shape_string(W));
  }
  require_shape(b.value(), 1, out_dim, "linear bias");
  const Matrix& B = b.value();
  // accumulate over i in the outer loop: every output keeps the sequential
  // order x0*w0 + x1*w1 + ... while the inner loop runs across outputs
  Matrix WT(in_dim, out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    for (std::size_t i = 0; i < in_dim; ++i) WT(i, o) = W(o, i);
  }
  Matrix Y(n, out_dim);
  const double* bias = B.values().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = X.row(r).data();
    double* yr = Y.row(r).data();
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = xr[i];
      const double* wi = WT.row(i).data();
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xi * wi[o];
    }
    for (std::size_t o = 0; o < out_dim; ++o) yr[o] += bias[o];
  }
  const std::array<std::size_t, 3> in{x.id, w.id, b.id};
  return t.record(std::move(Y), in,
                  [ix = x.id, iw = w.id, ib = b.id](Tape& t, std::size_t self) {
    const Matrix& G = t.grad_buffer(self);
    const Matrix& X = t.value(ix);
    const Matrix& W = t.value(iw);
    const std::size_t n = G.rows();
    const std::size_t out_dim = W.rows();
    const std::size_t in_dim = W.cols();
    if (t.requires_grad(ix)) {
      Matrix& GX = t.grad_buffer(ix);
      for (std::size_t r = 0; r < n; ++r) {
        const double* gr = G.row(r).data();
        double* gx = GX.row(r).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = gr[o];
          if (go == 0.0) continue;
          const double* wo = W.row(o).data();
          for (std::size_t i = 0; i < in_dim; ++i) gx[i] += go * wo[i];
        }
      }
    }
    if (t.requires_grad(iw)) {
      Matrix& GW = t.grad_buffer(iw);
      for (std::size_t r = 0; r < n; ++r) {
        const double* gr = G.row(r).data();
        const double* xr = X.row(r).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = gr[o];
          if (go == 0.0) continue;
          double* gw = GW.row(o).data();
          for (std::size_t i = 0; i < in_dim; ++i) gw[i] += go * xr[i];
        }
      }
    }
    if (t.requires_grad(ib)) {
      Matrix& GB = t.grad_buffer(ib);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) GB(0, o) += G(r, o);
      }
    }
  });
}

Var relu(Var a) {
  // NaN passes through so corrupted weights surface instead of being masked
  return unary(a, [](double v) { return v < 0.0 ? 0.0 : v; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var one_minus(Var a) {
  return unary(a, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - m);
    const double lse = m + std::log(total);
    for (double& v : row) v -= lse;
  }
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) total += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * total;
    }
  });
}

Var clamp_magnitude(Var a, double eps) {
  return unary(
      a,
      [eps](double v) {
        if (std::abs(v) >= eps) return v;
        return std::signbit(v) ? -eps : eps;
      },
      [eps](double x, double) { return std::abs(x) >= eps ? 1.0 : 0.0; });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix y(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) {
      throw ConfigError("gather_rows: index " + std::to_string(rows[r]) + " out of " +
                        std::to_string(x.rows()));
    }
    std::copy_n(x.row(rows[r]).data(), x.cols(), y.row(r).data());
  }
  const std::array<std::size_t, 1> in{a.id};
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(y), in, [ia = a.id, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = ga.row(idx[r]).data();
      const double* src = g.row(r).data();
      for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
    }
  });
}

Var pad_cols(Var a, std::size_t cols) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  if (cols < x.cols()) {
    throw ConfigError("pad_cols: cannot pad " + shape_string(x) + " down to " +
                      std::to_string(cols) + " columns");
  }
  Matrix y(x.rows(), cols, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) std::copy_n(x.row(r).data(), x.cols(), y.row(r).data());
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, c);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.cols() != cols) throw ConfigError("concat_rows: mismatched column counts");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix y(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.values().begin(), v.values().end(), y.values().begin() + offset * cols);
    offset += v.rows();
  }
  return t.record(std::move(y), ids, [ids](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).rows();
      if (t.requires_grad(id)) {
        Matrix& gp = t.grad_buffer(id);
        for (std::size_t i = 0; i < gp.size(); ++i) gp.values()[i] += g.values()[offset * g.cols() + i];
      }
      offset += n;
    }
  });
}

Var segment_sum(Var a, std::span<const std::size_t> segment, std::size_t segments) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  if (segment.size() != x.rows()) {
    throw ConfigError("segment_sum: " + std::to_string(segment.size()) + " segment ids for " +
                      std::to_string(x.rows()) + " rows");
  }
  std::vector<std::vector<std::size_t>> members(segments);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] >= segments) throw ConfigError("segment_sum: segment id out of range");
    members[segment[i]].push_back(i);
  }
  Matrix y(segments, x.cols(), 0.0);
  auto lex_less = [&](std::size_t p, std::size_t q) {
    auto rp = x.row(p);
    auto rq = x.row(q);
    return std::lexicographical_compare(rp.begin(), rp.end(), rq.begin(), rq.end());
  };
  for (std::size_t s = 0; s < segments; ++s) {
    auto& m = members[s];
    std::stable_sort(m.begin(), m.end(), lex_less);
    double* dst = y.row(s).data();
    for (std::size_t i : m) {
      const double* src = x.row(i).data();
      for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += src[c];
    }
  }
  const std::array<std::size_t, 1> in{a.id};
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return t.record(std::move(y), in, [ia = a.id, seg = std::move(seg)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const double* src = g.row(seg[i]).data();
      double* dst = ga.row(i).data();
      for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
    }
  });
}

Var column_mean(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ConfigError("column_mean: empty input");
  Matrix y(1, x.cols(), 0.0);
  for (std::size_t r : canonical_row_order(x)) {
    for (std::size_t c = 0; c < x.cols(); ++c) y(0, c) += x(r, c);
  }
  const double n = static_cast<double>(x.rows());
  for (double& v : y.values()) v /= n;
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    Matrix& ga = t.grad_buffer(ia);
    const double n = static_cast<double>(ga.rows());
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(0, c) / n;
    }
  });
}

Var segment_max(Var a, std::span<const std::size_t> segment, std::size_t segments,
                std::vector<std::size_t>* argmax, const std::vector<std::size_t>* frozen) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  const std::size_t cols = x.cols();
  if (segment.size() != x.rows()) throw ConfigError("segment_max: segment ids do not cover rows");
  std::vector<std::size_t> winner;
  if (frozen != nullptr) {
    if (frozen->size() != segments * cols) throw ConfigError("segment_max: frozen argmax has wrong size");
    winner = *frozen;
    for (std::size_t k = 0; k < winner.size(); ++k) {
      if (winner[k] >= x.rows() || segment[winner[k]] != k / cols) {
        throw ConfigError("segment_max: frozen argmax points outside its segment");
      }
    }
  } else {
    constexpr std::size_t unset = static_cast<std::size_t>(-1);
    winner.assign(segments * cols, unset);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t s = segment[i];
      if (s >= segments) throw ConfigError("segment_max: segment id out of range");
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t& w = winner[s * cols + c];
        if (w == unset || x(i, c) > x(w, c)) w = i;
      }
    }
    for (std::size_t s = 0; s < segments; ++s) {
      if (cols > 0 && winner[s * cols] == unset) {
        throw ConfigError("segment_max: segment " + std::to_string(s) + " is empty");
      }
    }
  }
  Matrix y(segments, cols);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t c = 0; c < cols; ++c) y(s, c) = x(winner[s * cols + c], c);
  }
  if (argmax != nullptr) *argmax = winner;
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id, winner = std::move(winner)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    Matrix& ga = t.grad_buffer(ia);
    const std::size_t cols = g.cols();
    for (std::size_t k = 0; k < winner.size(); ++k) ga(winner[k], k % cols) += g.values()[k];
  });
}

Var kernel_apply(Var kernels, Var x, std::size_t rows_out) {
  Tape& t = tape_of(kernels, x);
  const Matrix& K = kernels.value();
  const Matrix& X = x.value();
  const std::size_t n = X.rows();
  const std::size_t c_in = X.cols();
  require_shape(K, n, rows_out * c_in, "kernel_apply kernels");
  Matrix Y(n, rows_out);
  for (std::size_t r = 0; r < n; ++r) {
    const double* k = K.row(r).data();
    const double* xr = X.row(r).data();
    for (std::size_t o = 0; o < rows_out; ++o) {
      double acc = 0.0;
      for (std::size_t c = 0; c < c_in; ++c) acc += k[o * c_in + c] * xr[c];
      Y(r, o) = acc;
    }
  }
  const std::array<std::size_t, 2> in{kernels.id, x.id};
  return t.record(std::move(Y), in, [ik = kernels.id, ix = x.id](Tape& t, std::size_t self) {
    const Matrix& G = t.grad_buffer(self);
    const Matrix& K = t.value(ik);
    const Matrix& X = t.value(ix);
    const std::size_t rows_out = G.cols();
    const std::size_t c_in = X.cols();
    if (t.requires_grad(ik)) {
      Matrix& GK = t.grad_buffer(ik);
      for (std::size_t r = 0; r < G.rows(); ++r) {
        double* gk = GK.row(r).data();
        const double* xr = X.row(r).data();
        for (std::size_t o = 0; o < rows_out; ++o) {
          const double go = G(r, o);
          for (std::size_t c = 0; c < c_in; ++c) gk[o * c_in + c] += go * xr[c];
        }
      }
    }
    if (t.requires_grad(ix)) {
      Matrix& GX = t.grad_buffer(ix);
      for (std::size_t r = 0; r < G.rows(); ++r) {
        const double* k = K.row(r).data();
        double* gx = GX.row(r).data();
        for (std::size_t o = 0; o < rows_out; ++o) {
          const double go = G(r, o);
          for (std::size_t c = 0; c < c_in; ++c) gx[c] += go * k[o * c_in + c];
        }
      }
    }
  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  Tape& t = *a.tape;
  if (r >= a.rows() || c >= a.cols()) throw ConfigError("pick: index out of range");
  Matrix y(1, 1, a.value()(r, c));
  const std::array<std::size_t, 1> in{a.id};
  return t.record(std::move(y), in, [ia = a.id, r, c](Tape& t, std::size_t self) {
    t.grad_buffer(ia)(r, c) += t.grad_buffer(self)(0, 0);
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const std::array<std::size_t, 1> in{a.id};
  return t.record(Matrix(1, 1, total), in, [ia = a.id](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)(0, 0);
    for (double& v : t.grad_buffer(ia).values()) v += g;
  });
}

Var mean_all(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ConfigError("mean_all: empty input");
  return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

}  // namespace ad
}  // namespace shrinking
