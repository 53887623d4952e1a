#pragma once

#include "oisa/autograd.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace oisa::nn {

using ag::Mat;
using ag::Var;

struct NamedParam {
  std::string name;
  Var var;
};

// Owns every trainable tensor of a model in registration order. Registration
// order and the seed fully determine the initial weights.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var add(const std::string& name, Mat init);
  Var normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev);
  Var zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Var ones(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  const std::vector<NamedParam>& params() const { return params_; }
  const NamedParam* find(const std::string& name) const;
  std::vector<Var> with_prefix(const std::string& prefix) const;
  std::vector<Var> all() const;
  std::size_t count() const;  // total scalar count
  void zero_grad();

 private:
  std::vector<NamedParam> params_;
  std::mt19937_64 rng_;
};

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out, undefined when bias-free

  static Linear create(ParamStore& ps, const std::string& name, int in, int out, bool with_bias = true,
                       double gain = 1.0);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gain;
  Var bias;

  static LayerNorm create(ParamStore& ps, const std::string& name, int width);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gain, bias); }
};

struct Mlp {
  Linear fc1;
  Linear fc2;

  static Mlp create(ParamStore& ps, const std::string& name, int in, int hidden, int out,
                    double out_gain = 1.0);
  Var operator()(const Var& x) const { return fc2(ag::gelu(fc1(x))); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int n_heads = 1;

  static MultiHeadAttention create(ParamStore& ps, const std::string& name, int width, int n_heads,
                                   double out_gain = 1.0);
  // Attention of `queries` over `context`; positions enable rotary encoding.
  Var operator()(const Var& queries, const Var& context, bool causal,
                 std::span<const int> q_positions = {}, std::span<const int> k_positions = {}) const;
};

// Pre-norm transformer block: x + Attn(LN x), then x + MLP(LN x).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Mlp mlp;

  static TransformerBlock create(ParamStore& ps, const std::string& name, int width, int n_heads,
                                 int mlp_hidden, int depth_scale);
  Var operator()(const Var& x, bool causal, std::span<const int> positions = {}) const;
};

}  // namespace oisa::nn
