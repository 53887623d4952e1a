#include "oisa/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace oisa::nn {

Var ParamStore::add(const std::string& name, Mat init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Var v(std::move(init), true);
  params_.push_back({name, v});
  return v;
}

Var ParamStore::normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
  return add(name, std::move(m));
}

Var ParamStore::zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return add(name, Mat::Zero(rows, cols));
}

Var ParamStore::ones(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return add(name, Mat::Ones(rows, cols));
}

const NamedParam* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<Var> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<Var> out;
  for (const auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.var);
  return out;
}

std::vector<Var> ParamStore::all() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var);
  return out;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, bool with_bias,
                      double gain) {
  Linear l;
  l.weight = ps.normal(name + ".weight", in, out, gain / std::sqrt(static_cast<double>(in)));
  if (with_bias) l.bias = ps.zeros(name + ".bias", 1, out);
  return l;
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_row(y, bias) : y;
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, int width) {
  return {ps.ones(name + ".gain", 1, width), ps.zeros(name + ".bias", 1, width)};
}

Mlp Mlp::create(ParamStore& ps, const std::string& name, int in, int hidden, int out, double out_gain) {
  return {Linear::create(ps, name + ".fc1", in, hidden), Linear::create(ps, name + ".fc2", hidden, out, true, out_gain)};
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& ps, const std::string& name, int width,
                                              int n_heads, double out_gain) {
  MultiHeadAttention m;
  m.q = Linear::create(ps, name + ".q", width, width);
  m.k = Linear::create(ps, name + ".k", width, width);
  m.v = Linear::create(ps, name + ".v", width, width);
  m.o = Linear::create(ps, name + ".o", width, width, true, out_gain);
  m.n_heads = n_heads;
  return m;
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& context, bool causal,
                                   std::span<const int> q_positions, std::span<const int> k_positions) const {
  Var qq = q(queries);
  Var kk = k(context);
  Var vv = v(context);
  if (!q_positions.empty()) qq = ag::rope(qq, q_positions, n_heads);
  if (!k_positions.empty()) kk = ag::rope(kk, k_positions, n_heads);
  return o(ag::attention(qq, kk, vv, n_heads, causal));
}

TransformerBlock TransformerBlock::create(ParamStore& ps, const std::string& name, int width, int n_heads,
                                          int mlp_hidden, int depth_scale) {
  const double out_gain = 1.0 / std::sqrt(2.0 * std::max(depth_scale, 1));
  TransformerBlock b;
  b.ln1 = LayerNorm::create(ps, name + ".ln1", width);
  b.attn = MultiHeadAttention::create(ps, name + ".attn", width, n_heads, out_gain);
  b.ln2 = LayerNorm::create(ps, name + ".ln2", width);
  b.mlp = Mlp::create(ps, name + ".mlp", width, mlp_hidden, width, out_gain);
  return b;
}

Var TransformerBlock::operator()(const Var& x, bool causal, std::span<const int> positions) const {
  Var h = ln1(x);
  Var y = ag::add(x, attn(h, h, causal, positions, positions));
  return ag::add(y, mlp(ln2(y)));
}

}  // namespace oisa::nn
