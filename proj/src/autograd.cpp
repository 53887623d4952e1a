#include "oisa/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace oisa::ag {

namespace {

thread_local bool g_grad_enabled = true;

void check(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

bool any_requires_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p.requires_grad()) return true;
  return false;
}

}  // namespace

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0)
    grad = g;
  else
    grad += g;
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  check(rows() == 1 && cols() == 1, "item() on non-scalar");
  return value()(0, 0);
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Mat value, std::vector<Var> parents, std::function<void(const Mat&)> fn) {
  Var out(std::move(value), false);
  if (g_grad_enabled && any_requires_grad(parents)) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(fn);
  }
  return out;
}

void backward(const Var& loss) {
  check(loss.rows() == 1 && loss.cols() == 1, "backward() needs a scalar loss");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(n->grad);
  }
  // Interior grads are not needed after the sweep.
  for (Node* n : order)
    if (n->backward) n->grad.resize(0, 0);
}

Var constant(Mat value) { return Var(std::move(value), false); }

// ---------------------------------------------------------------------------

#define NEEDS(v) ((v).requires_grad())

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul shape mismatch");
  Mat out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
    if (NEEDS(a)) a.node()->accumulate(g * b.value().transpose());
    if (NEEDS(b)) b.node()->accumulate(a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt shape mismatch");
  Mat out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
    if (NEEDS(a)) a.node()->accumulate(g * b.value());
    if (NEEDS(b)) b.node()->accumulate(g.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  return make_result(a.value() + b.value(), {a, b}, [a, b](const Mat& g) {
    if (NEEDS(a)) a.node()->accumulate(g);
    if (NEEDS(b)) b.node()->accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  return make_result(a.value() - b.value(), {a, b}, [a, b](const Mat& g) {
    if (NEEDS(a)) a.node()->accumulate(g);
    if (NEEDS(b)) b.node()->accumulate(-g);
  });
}

Var mul(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  Mat out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
    if (NEEDS(a)) a.node()->accumulate(g.cwiseProduct(b.value()));
    if (NEEDS(b)) b.node()->accumulate(g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [a, s](const Mat& g) { a.node()->accumulate(g * s); });
}

Var add_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
  Mat out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [a, row](const Mat& g) {
    if (NEEDS(a)) a.node()->accumulate(g);
    if (NEEDS(row)) row.node()->accumulate(g.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "mul_row shape mismatch");
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [a, row](const Mat& g) {
    if (NEEDS(a)) {
      Mat ga = g.array().rowwise() * row.value().row(0).array();
      a.node()->accumulate(ga);
    }
    if (NEEDS(row)) row.node()->accumulate(g.cwiseProduct(a.value()).colwise().sum());
  });
}

Var transpose(const Var& a) {
  Mat out = a.value().transpose();
  return make_result(std::move(out), {a},
                     [a](const Mat& g) { a.node()->accumulate(g.transpose()); });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  check(rows * cols == a.value().size(), "reshape size mismatch");
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const auto r0 = a.rows(), c0 = a.cols();
  return make_result(std::move(out), {a}, [a, r0, c0](const Mat& g) {
    a.node()->accumulate(Eigen::Map<const Mat>(g.data(), r0, c0));
  });
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  const double k = kGeluScale, c = kGeluCubic;
  const Mat& x = a.value();
  Mat t = ((x.array() + c * x.array().cube()) * k).tanh().matrix();
  Mat out = (0.5 * x.array() * (1.0 + t.array())).matrix();
  return make_result(std::move(out), {a}, [a, t, k, c](const Mat& g) {
    const auto& x = a.value().array();
    auto d = 0.5 * (1.0 + t.array()) +
             0.5 * x * (1.0 - t.array().square()) * k * (1.0 + 3.0 * c * x.square());
    a.node()->accumulate((g.array() * d).matrix());
  });
}

Var sigmoid(const Var& a) {
  Mat out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_result(out, {a}, [a, out](const Mat& g) {
    a.node()->accumulate((g.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

Var tanh(const Var& a) {
  Mat out = a.value().array().tanh().matrix();
  return make_result(out, {a}, [a, out](const Mat& g) {
    a.node()->accumulate((g.array() * (1.0 - out.array().square())).matrix());
  });
}

Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const auto r = a.rows(), c = a.cols();
  return make_result(std::move(out), {a}, [a, r, c](const Mat& g) {
    a.node()->accumulate(Mat::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(const Var& a) {
  const double n = static_cast<double>(a.rows());
  Mat out = a.value().colwise().sum() / n;
  const auto r = a.rows();
  return make_result(std::move(out), {a}, [a, r, n](const Mat& g) {
    Mat full = g.replicate(r, 1) / n;
    a.node()->accumulate(full);
  });
}

// ---------------------------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows of nothing");
  Eigen::Index rows = 0;
  const auto cols = parts[0].cols();
  for (const auto& p : parts) {
    check(p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(out), parents, [parents](const Mat& g) {
    Eigen::Index at = 0;
    for (const auto& p : parents) {
      if (p.requires_grad()) p.node()->accumulate(g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  check(!parts.empty(), "concat_cols of nothing");
  Eigen::Index cols = 0;
  const auto rows = parts[0].rows();
  for (const auto& p : parts) {
    check(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(out), parents, [parents](const Mat& g) {
    Eigen::Index at = 0;
    for (const auto& p : parents) {
      if (p.requires_grad()) p.node()->accumulate(g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Mat out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a}, [a, start, count](const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    a.node()->accumulate(full);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Mat out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a}, [a, start, count](const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    a.node()->accumulate(full);
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [table, idx](const Mat& g) {
    Mat full = Mat::Zero(table.rows(), table.cols());
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    table.node()->accumulate(full);
  });
}

Var select_rows(const Var& a, std::span<const Eigen::Index> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] >= 0 && rows[i] < a.rows(), "select_rows out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [a, idx](const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    a.node()->accumulate(full);
  });
}

// ---------------------------------------------------------------------------

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const auto n = x.rows(), c = x.cols();
  check(gain.cols() == c && bias.cols() == c, "layer_norm parameter width");
  Mat xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x.value().row(r).array();
    const double mu = row.mean();
    const double var = (row - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((row - mu) * inv_std(r)).matrix();
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
            bias.value().row(0).array();
  return make_result(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](const Mat& g) {
    if (gain.requires_grad()) gain.node()->accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad()) bias.node()->accumulate(g.colwise().sum());
    if (x.requires_grad()) {
      Mat dxhat = g.array().rowwise() * gain.value().row(0).array();
      Mat dx(xhat.rows(), xhat.cols());
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
      }
      x.node()->accumulate(dx);
    }
  });
}

namespace {
void softmax_inplace(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}
}  // namespace

Var softmax_rows(const Var& a) {
  Mat out = a.value();
  softmax_inplace(out);
  return make_result(out, {a}, [a, out](const Mat& g) {
    Eigen::VectorXd dots = g.cwiseProduct(out).rowwise().sum();
    Mat dx = out.array() * (g.colwise() - dots).array();
    a.node()->accumulate(dx);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int n_heads, bool causal) {
  const auto lq = q.rows(), lk = k.rows(), d = q.cols();
  check(k.cols() == d && v.cols() == d && v.rows() == lk, "attention shape mismatch");
  check(n_heads > 0 && d % n_heads == 0, "attention heads must divide width");
  const auto dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto offset = lk - lq;

  auto probs = std::make_shared<std::vector<Mat>>(n_heads);
  Mat out(lq, d);
  for (int h = 0; h < n_heads; ++h) {
    Mat s = (q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose()) * sc;
    if (causal) {
      // Softmax over the visible prefix only; exp of a huge negative mask would leave denormals.
      for (Eigen::Index i = 0; i < lq; ++i) {
        const Eigen::Index n = std::clamp<Eigen::Index>(i + offset + 1, 0, lk);
        auto row = s.row(i);
        if (n > 0) {
          const double mx = row.head(n).maxCoeff();
          row.head(n) = (row.head(n).array() - mx).exp().matrix();
          row.head(n) /= row.head(n).sum();
        }
        row.tail(lk - n).setZero();
      }
    } else {
      softmax_inplace(s);
    }
    out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
    (*probs)[h] = std::move(s);
  }
  return make_result(std::move(out), {q, k, v}, [q, k, v, probs, n_heads, dh, sc](const Mat& g) {
    Mat dq = Mat::Zero(q.rows(), q.cols());
    Mat dk = Mat::Zero(k.rows(), k.cols());
    Mat dv = Mat::Zero(v.rows(), v.cols());
    for (int h = 0; h < n_heads; ++h) {
      const Mat& p = (*probs)[h];
      const auto go = g.middleCols(h * dh, dh);
      if (v.requires_grad()) dv.middleCols(h * dh, dh).noalias() = p.transpose() * go;
      Mat dp = go * v.value().middleCols(h * dh, dh).transpose();
      Eigen::VectorXd dots = dp.cwiseProduct(p).rowwise().sum();
      Mat ds = p.array() * (dp.colwise() - dots).array();
      if (q.requires_grad()) dq.middleCols(h * dh, dh).noalias() = sc * ds * k.value().middleCols(h * dh, dh);
      if (k.requires_grad())
        dk.middleCols(h * dh, dh).noalias() = sc * ds.transpose() * q.value().middleCols(h * dh, dh);
    }
    if (q.requires_grad()) q.node()->accumulate(dq);
    if (k.requires_grad()) k.node()->accumulate(dk);
    if (v.requires_grad()) v.node()->accumulate(dv);
  });
}

namespace {
Mat apply_rope(const Mat& x, const std::vector<int>& pos, int n_heads, double base, double sign) {
  const auto d = x.cols();
  const auto dh = d / n_heads;
  Mat out = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index p = 0; p < dh / 2; ++p) {
      const double theta = pos[r] * std::pow(base, -2.0 * p / static_cast<double>(dh));
      const double c = std::cos(theta), s = sign * std::sin(theta);
      for (int h = 0; h < n_heads; ++h) {
        const auto i0 = h * dh + 2 * p, i1 = i0 + 1;
        const double x0 = x(r, i0), x1 = x(r, i1);
        out(r, i0) = x0 * c - x1 * s;
        out(r, i1) = x0 * s + x1 * c;
      }
    }
  }
  return out;
}
}  // namespace

Var rope(const Var& x, std::span<const int> positions, int n_heads, double base) {
  check(static_cast<Eigen::Index>(positions.size()) == x.rows(), "rope position count");
  check(x.cols() % n_heads == 0 && (x.cols() / n_heads) % 2 == 0, "rope head width must be even");
  std::vector<int> pos(positions.begin(), positions.end());
  Mat out = apply_rope(x.value(), pos, n_heads, base, 1.0);
  return make_result(std::move(out), {x}, [x, pos, n_heads, base](const Mat& g) {
    x.node()->accumulate(apply_rope(g, pos, n_heads, base, -1.0));
  });
}

// ---------------------------------------------------------------------------

namespace {
struct ConvGeom {
  int h, w, k, stride, pad, oh, ow;
};

Mat im2col(const Mat& x, const ConvGeom& g) {
  const auto cin = x.cols();
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(g.oh) * g.ow, g.k * g.k * cin);
  for (int oy = 0; oy < g.oh; ++oy)
    for (int ox = 0; ox < g.ow; ++ox) {
      const auto r = static_cast<Eigen::Index>(oy) * g.ow + ox;
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx) {
          const int iy = oy * g.stride + ky - g.pad, ix = ox * g.stride + kx - g.pad;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
          cols.block(r, (ky * g.k + kx) * cin, 1, cin) = x.row(static_cast<Eigen::Index>(iy) * g.w + ix);
        }
    }
  return cols;
}

Mat col2im(const Mat& cols, const ConvGeom& g, Eigen::Index cin) {
  Mat x = Mat::Zero(static_cast<Eigen::Index>(g.h) * g.w, cin);
  for (int oy = 0; oy < g.oh; ++oy)
    for (int ox = 0; ox < g.ow; ++ox) {
      const auto r = static_cast<Eigen::Index>(oy) * g.ow + ox;
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx) {
          const int iy = oy * g.stride + ky - g.pad, ix = ox * g.stride + kx - g.pad;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
          x.row(static_cast<Eigen::Index>(iy) * g.w + ix) += cols.block(r, (ky * g.k + kx) * cin, 1, cin);
        }
    }
  return x;
}
}  // namespace

Var conv2d(const Var& x, int height, int width, const Var& weight, const Var& bias, int kernel,
           int stride, int pad) {
  check(x.rows() == static_cast<Eigen::Index>(height) * width, "conv2d grid size");
  check(weight.rows() == kernel * kernel * x.cols(), "conv2d weight rows");
  check(bias.rows() == 1 && bias.cols() == weight.cols(), "conv2d bias");
  ConvGeom g{height, width, kernel, stride, pad, (height + 2 * pad - kernel) / stride + 1,
             (width + 2 * pad - kernel) / stride + 1};
  check(g.oh > 0 && g.ow > 0, "conv2d output empty");
  Mat cols = im2col(x.value(), g);
  Mat out = (cols * weight.value()).rowwise() + bias.value().row(0);
  const auto cin = x.cols();
  return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, cols, g, cin](const Mat& gr) {
    if (weight.requires_grad()) weight.node()->accumulate(cols.transpose() * gr);
    if (bias.requires_grad()) bias.node()->accumulate(gr.colwise().sum());
    if (x.requires_grad()) x.node()->accumulate(col2im(gr * weight.value().transpose(), g, cin));
  });
}

Var conv_transpose2x2(const Var& x, int height, int width, const Var& weight, const Var& bias) {
  check(x.rows() == static_cast<Eigen::Index>(height) * width, "conv_transpose grid size");
  check(weight.rows() == x.cols() && weight.cols() % 4 == 0, "conv_transpose weight shape");
  const auto cout = weight.cols() / 4;
  check(bias.cols() == cout, "conv_transpose bias");
  Mat z = x.value() * weight.value();
  const int ow = 2 * width;
  Mat out(static_cast<Eigen::Index>(4) * height * width, cout);
  for (int y = 0; y < height; ++y)
    for (int xx = 0; xx < width; ++xx)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          out.row(static_cast<Eigen::Index>(2 * y + dy) * ow + 2 * xx + dx) =
              z.block(static_cast<Eigen::Index>(y) * width + xx, (dy * 2 + dx) * cout, 1, cout) +
              bias.value();
  return make_result(std::move(out), {x, weight, bias},
                     [x, weight, bias, height, width, cout, ow](const Mat& g) {
                       Mat dz(static_cast<Eigen::Index>(height) * width, 4 * cout);
                       for (int y = 0; y < height; ++y)
                         for (int xx = 0; xx < width; ++xx)
                           for (int dy = 0; dy < 2; ++dy)
                             for (int dx = 0; dx < 2; ++dx)
                               dz.block(static_cast<Eigen::Index>(y) * width + xx, (dy * 2 + dx) * cout, 1,
                                        cout) = g.row(static_cast<Eigen::Index>(2 * y + dy) * ow + 2 * xx + dx);
                       if (bias.requires_grad()) bias.node()->accumulate(g.colwise().sum());
                       if (weight.requires_grad()) weight.node()->accumulate(x.value().transpose() * dz);
                       if (x.requires_grad()) x.node()->accumulate(dz * weight.value().transpose());
                     });
}

Var upsample_nearest2x(const Var& x, int height, int width) {
  check(x.rows() == static_cast<Eigen::Index>(height) * width, "upsample grid size");
  const int ow = 2 * width;
  Mat out(static_cast<Eigen::Index>(4) * height * width, x.cols());
  for (int y = 0; y < 2 * height; ++y)
    for (int xx = 0; xx < ow; ++xx)
      out.row(static_cast<Eigen::Index>(y) * ow + xx) = x.value().row(static_cast<Eigen::Index>(y / 2) * width + xx / 2);
  return make_result(std::move(out), {x}, [x, height, width, ow](const Mat& g) {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (int y = 0; y < 2 * height; ++y)
      for (int xx = 0; xx < ow; ++xx)
        dx.row(static_cast<Eigen::Index>(y / 2) * width + xx / 2) += g.row(static_cast<Eigen::Index>(y) * ow + xx);
    x.node()->accumulate(dx);
  });
}

Var avg_pool(const Var& x, int height, int width, int factor) {
  check(x.rows() == static_cast<Eigen::Index>(height) * width, "avg_pool grid size");
  check(factor > 0 && height % factor == 0 && width % factor == 0, "avg_pool factor must divide grid");
  const int oh = height / factor, ow = width / factor;
  const double inv = 1.0 / (factor * factor);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(oh) * ow, x.cols());
  for (int y = 0; y < height; ++y)
    for (int xx = 0; xx < width; ++xx)
      out.row(static_cast<Eigen::Index>(y / factor) * ow + xx / factor) +=
          x.value().row(static_cast<Eigen::Index>(y) * width + xx) * inv;
  return make_result(std::move(out), {x}, [x, height, width, factor, ow, inv](const Mat& g) {
    Mat dx(x.rows(), x.cols());
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx)
        dx.row(static_cast<Eigen::Index>(y) * width + xx) =
            g.row(static_cast<Eigen::Index>(y / factor) * ow + xx / factor) * inv;
    x.node()->accumulate(dx);
  });
}

Mat bilinear_matrix(int in_size, int out_size) {
  Mat m = Mat::Zero(out_size, in_size);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in_size - 1);
    const double w1 = src - i0;
    m(o, i0) += 1.0 - w1;
    m(o, i1) += w1;
  }
  return m;
}

Var bilinear_resize(const Var& map, int out_height, int out_width) {
  Mat mh = bilinear_matrix(static_cast<int>(map.rows()), out_height);
  Mat mw = bilinear_matrix(static_cast<int>(map.cols()), out_width);
  Mat out = mh * map.value() * mw.transpose();
  return make_result(std::move(out), {map}, [map, mh, mw](const Mat& g) {
    map.node()->accumulate(mh.transpose() * g * mw);
  });
}

// ---------------------------------------------------------------------------

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  check(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross_entropy target count");
  Mat probs = logits.value();
  softmax_inplace(probs);
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    check(t < probs.cols(), "cross_entropy target out of vocabulary");
    // log-softmax computed from logits for accuracy
    const auto row = logits.value().row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(t);
    ++count;
  }
  Mat out(1, 1);
  out(0, 0) = count > 0 ? total / count : 0.0;
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result(std::move(out), {logits}, [logits, probs, tg, count](const Mat& g) {
    if (count == 0) return;
    Mat d = Mat::Zero(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      if (tg[r] < 0) continue;
      d.row(r) = probs.row(r);
      d(r, tg[r]) -= 1.0;
    }
    logits.node()->accumulate(d * (g(0, 0) / count));
  });
}

Var dice_loss(const Var& logits, const Mat& target, double eps) {
  check(logits.rows() == target.rows() && logits.cols() == target.cols(), "dice_loss shape mismatch");
  Mat p = (1.0 / (1.0 + (-logits.value().array()).exp())).matrix();
  const double inter = p.cwiseProduct(target).sum();
  const double denom = p.sum() + target.sum() + eps;
  Mat out(1, 1);
  out(0, 0) = 1.0 - (2.0 * inter + eps) / denom;
  return make_result(std::move(out), {logits}, [logits, p, target, inter, denom, eps](const Mat& g) {
    const double num = 2.0 * inter + eps;
    Mat dp = (-(2.0 * target.array() * denom - num) / (denom * denom)).matrix();
    Mat dl = dp.array() * p.array() * (1.0 - p.array());
    logits.node()->accumulate(dl * g(0, 0));
  });
}

Var bce_with_logits(const Var& logits, const Mat& target) {
  check(logits.rows() == target.rows() && logits.cols() == target.cols(), "bce shape mismatch");
  const auto& l = logits.value().array();
  const double n = static_cast<double>(l.size());
  const double total =
      (l.max(0.0) - l * target.array() + (1.0 + (-l.abs()).exp()).log()).sum();
  Mat out(1, 1);
  out(0, 0) = total / n;
  return make_result(std::move(out), {logits}, [logits, target, n](const Mat& g) {
    Mat p = (1.0 / (1.0 + (-logits.value().array()).exp())).matrix();
    logits.node()->accumulate((p - target) * (g(0, 0) / n));
  });
}

}  // namespace oisa::ag
