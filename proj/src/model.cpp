#include "uled/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "uled/errors.hpp"
#include "uled/rng.hpp"

namespace uled {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * kInvSqrt2)); }

double gelu_deriv(double u) {
  return 0.5 * (1.0 + std::erf(u * kInvSqrt2)) + u * std::exp(-0.5 * u * u) * kInvSqrt2Pi;
}

// Row-wise parameterless layer norm: n = (x - mean) / sqrt(var + eps).
// r keeps the per-row denominator for the backward pass.
void layer_norm(const Matrix& x, Matrix& n, std::vector<double>& r) {
  const std::size_t t_len = x.rows(), dim = x.cols();
  n = Matrix(t_len, dim);
  r.assign(t_len, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    double mean = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mean += x(t, j);
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = x(t, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    r[t] = std::sqrt(var + kLnEps);
    for (std::size_t j = 0; j < dim; ++j) n(t, j) = (x(t, j) - mean) / r[t];
  }
}

// Backward of the parameterless layer norm above:
// dx = (dn - mean(dn) - n * mean(dn .* n)) / r, per row.
Matrix ln_backward(const Matrix& dn, const Matrix& n, const std::vector<double>& r) {
  const std::size_t t_len = dn.rows(), dim = dn.cols();
  Matrix dx(t_len, dim);
  for (std::size_t t = 0; t < t_len; ++t) {
    double mean_dn = 0.0, mean_dn_n = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      mean_dn += dn(t, j);
      mean_dn_n += dn(t, j) * n(t, j);
    }
    mean_dn /= static_cast<double>(dim);
    mean_dn_n /= static_cast<double>(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      dx(t, j) = (dn(t, j) - mean_dn - n(t, j) * mean_dn_n) / r[t];
    }
  }
  return dx;
}

void add_in_place(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] += b.values()[i];
}

Matrix col_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t t = 0; t < m.rows(); ++t) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(t, j);
  }
  return out;
}

struct BlockActs {
  Matrix x_in;                // block input
  Matrix n_att;               // normalized attention input
  std::vector<double> r_att;
  Matrix q, k, v;
  Matrix att;                 // [T x T], row t nonzero only for u <= t
  Matrix ctx;
  Matrix x_mid;               // after attention residual
  Matrix n_mid;               // normalized MLP input (h for mlp_in)
  std::vector<double> r_mid;
  Matrix mlp_pre;             // mlp_in output, pre-activation
  Matrix mlp_act;             // GELU output (h for mlp_out)
  Matrix mlp_out;             // mlp_out output
};

struct Activations {
  Matrix x0;
  std::vector<BlockActs> blocks;
  Matrix n_f;
  std::vector<double> r_f;
  Matrix x_f;
  Matrix logits;
};

Activations run_forward(const Parameters& params, const std::vector<int>& tokens,
                        const std::optional<TapInjection>& injection) {
  const ModelConfig& cfg = params.config;
  const std::size_t t_len = tokens.size();
  if (t_len == 0 || t_len > cfg.max_seq_len) {
    throw LengthError("forward: sequence length " + std::to_string(t_len) +
                      " outside [1, " + std::to_string(cfg.max_seq_len) + "]");
  }
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size) {
      throw VocabularyError("forward: token id " + std::to_string(tok) + " out of range");
    }
  }
  if (injection && injection->module.block >= cfg.n_blocks) {
    throw ConfigError("forward: injection module out of range");
  }

  const std::size_t e_dim = cfg.embed_dim;
  const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(e_dim));

  Activations acts;
  acts.x0 = Matrix(t_len, e_dim);
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto tok = static_cast<std::size_t>(tokens[t]);
    for (std::size_t j = 0; j < e_dim; ++j) {
      acts.x0(t, j) = params.tok_emb(tok, j) + params.pos_emb(t, j);
    }
  }

  Matrix x = acts.x0;
  acts.blocks.resize(cfg.n_blocks);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const BlockParams& bp = params.blocks[b];
    BlockActs& a = acts.blocks[b];
    a.x_in = x;

    layer_norm(a.x_in, a.n_att, a.r_att);
    a.q = matmul(a.n_att, bp.wq);
    a.k = matmul(a.n_att, bp.wk);
    a.v = matmul(a.n_att, bp.wv);

    a.att = Matrix(t_len, t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      std::vector<double> scores(t + 1);
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t j = 0; j < e_dim; ++j) s += a.q(t, j) * a.k(u, j);
        scores[u] = s * inv_sqrt_e;
        best = std::max(best, scores[u]);
      }
      double denom = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        scores[u] = std::exp(scores[u] - best);
        denom += scores[u];
      }
      for (std::size_t u = 0; u <= t; ++u) a.att(t, u) = scores[u] / denom;
    }

    a.ctx = Matrix(t_len, e_dim);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t u = 0; u <= t; ++u) {
        const double w = a.att(t, u);
        for (std::size_t j = 0; j < e_dim; ++j) a.ctx(t, j) += w * a.v(u, j);
      }
    }

    Matrix attn_out = matmul(a.ctx, bp.wo);
    a.x_mid = a.x_in;
    add_in_place(a.x_mid, attn_out);

    layer_norm(a.x_mid, a.n_mid, a.r_mid);
    a.mlp_pre = matmul(a.n_mid, bp.w_mlp_in);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < cfg.mlp_hidden; ++j) a.mlp_pre(t, j) += bp.b_mlp_in(0, j);
    }
    if (injection && injection->module.block == b &&
        injection->module.slot == ModuleRef::Slot::mlp_in) {
      a.mlp_pre(injection->position, injection->coord) += injection->amount;
    }
    a.mlp_act = Matrix(t_len, cfg.mlp_hidden);
    for (std::size_t i = 0; i < a.mlp_pre.size(); ++i) {
      a.mlp_act.values()[i] = gelu(a.mlp_pre.values()[i]);
    }
    a.mlp_out = matmul(a.mlp_act, bp.w_mlp_out);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < e_dim; ++j) a.mlp_out(t, j) += bp.b_mlp_out(0, j);
    }
    if (injection && injection->module.block == b &&
        injection->module.slot == ModuleRef::Slot::mlp_out) {
      a.mlp_out(injection->position, injection->coord) += injection->amount;
    }

    x = a.x_mid;
    add_in_place(x, a.mlp_out);
  }

  layer_norm(x, acts.n_f, acts.r_f);
  acts.x_f = Matrix(t_len, e_dim);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < e_dim; ++j) {
      acts.x_f(t, j) = acts.n_f(t, j) * params.ln_f_scale(0, j) + params.ln_f_shift(0, j);
    }
  }
  acts.logits = matmul(acts.x_f, params.w_head);
  ensure_finite(acts.logits, "logits");
  return acts;
}

const Matrix& tap_input_of(const BlockActs& a, ModuleRef::Slot slot) {
  return slot == ModuleRef::Slot::mlp_in ? a.n_mid : a.mlp_act;
}

void check_taps(const ModelConfig& cfg, const std::vector<ModuleRef>& taps) {
  for (const auto& m : taps) {
    if (m.block >= cfg.n_blocks) {
      throw ConfigError("tap module " + to_string(m) + " out of range");
    }
  }
}

// Teacher-forced masked loss: masked position t scores tokens[t] under the
// logits at t-1. Fills dlogits (same shape as logits) when non-null.
double masked_loss(const Matrix& logits, const std::vector<int>& tokens,
                   const std::vector<bool>& label_mask, bool mean_loss, Matrix* dlogits) {
  const std::size_t t_len = tokens.size();
  if (label_mask.size() != t_len) throw ShapeError("loss: mask length mismatch");
  std::size_t n_labels = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!label_mask[t]) continue;
    if (t == 0) throw NoLabelError("loss: position 0 has no preceding prediction");
    ++n_labels;
  }
  if (n_labels == 0) throw NoLabelError("loss: empty label mask");

  const std::size_t v = logits.cols();
  if (dlogits) *dlogits = Matrix(t_len, v);
  double loss = 0.0;
  for (std::size_t t = 1; t < t_len; ++t) {
    if (!label_mask[t]) continue;
    const auto row = logits.row(t - 1);
    double best = row[0];
    for (std::size_t j = 1; j < v; ++j) best = std::max(best, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - best);
    const double lse = best + std::log(denom);
    loss += lse - row[static_cast<std::size_t>(tokens[t])];
    if (dlogits) {
      for (std::size_t j = 0; j < v; ++j) {
        (*dlogits)(t - 1, j) += std::exp(row[j] - lse);
      }
      (*dlogits)(t - 1, static_cast<std::size_t>(tokens[t])) -= 1.0;
    }
  }
  if (mean_loss) {
    const double scale = 1.0 / static_cast<double>(n_labels);
    loss *= scale;
    if (dlogits) {
      for (double& g : dlogits->values()) g *= scale;
    }
  }
  return loss;
}

Parameters zeros_like(const Parameters& p) {
  Parameters z = p;
  z.for_each_tensor([](const std::string&, Matrix& m) {
    std::fill(m.values().begin(), m.values().end(), 0.0);
  });
  return z;
}

std::vector<Matrix*> tensor_list(Parameters& p) {
  std::vector<Matrix*> out;
  p.for_each_tensor([&out](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

void fill_uniform(Matrix& m, Rng& rng, double a) {
  for (double& x : m.values()) x = rng.uniform(-a, a);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || n_blocks < 1 || mlp_hidden < 1 || max_seq_len < 1) {
    throw ConfigError("model config: all dims must be >= 1");
  }
  if (vocab_size > 4096) throw ConfigError("model config: vocab_size above desk-scale cap 4096");
}

std::string to_string(const ModuleRef& m) {
  return std::to_string(m.block) + (m.slot == ModuleRef::Slot::mlp_in ? ".mlp_in" : ".mlp_out");
}

ModuleRef parse_module_ref(const std::string& text) {
  const auto dot = text.find('.');
  if (dot == std::string::npos || dot == 0) {
    throw ParseError("module ref '" + text + "': expected <block>.<slot>");
  }
  std::size_t block = 0;
  const char* first = text.data();
  const auto [ptr, ec] = std::from_chars(first, first + dot, block);
  if (ec != std::errc() || ptr != first + dot) {
    throw ParseError("module ref '" + text + "': bad block index");
  }
  const std::string slot = text.substr(dot + 1);
  if (slot == "mlp_in") return {block, ModuleRef::Slot::mlp_in};
  if (slot == "mlp_out") return {block, ModuleRef::Slot::mlp_out};
  throw ParseError("module ref '" + text + "': slot must be mlp_in or mlp_out");
}

void Parameters::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("tok_emb", tok_emb);
  fn("pos_emb", pos_emb);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    fn(p + "wq", blocks[b].wq);
    fn(p + "wk", blocks[b].wk);
    fn(p + "wv", blocks[b].wv);
    fn(p + "wo", blocks[b].wo);
    fn(p + "w_mlp_in", blocks[b].w_mlp_in);
    fn(p + "b_mlp_in", blocks[b].b_mlp_in);
    fn(p + "w_mlp_out", blocks[b].w_mlp_out);
    fn(p + "b_mlp_out", blocks[b].b_mlp_out);
  }
  fn("ln_f_scale", ln_f_scale);
  fn("ln_f_shift", ln_f_shift);
  fn("w_head", w_head);
}

void Parameters::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<Parameters*>(this)->for_each_tensor(
      [&fn](const std::string& name, Matrix& m) { fn(name, m); });
}

std::pair<std::size_t, std::size_t> Parameters::module_dims(const ModuleRef& m) const {
  if (m.block >= blocks.size()) {
    throw ConfigError("module " + to_string(m) + " out of range");
  }
  if (m.slot == ModuleRef::Slot::mlp_in) return {config.embed_dim, config.mlp_hidden};
  return {config.mlp_hidden, config.embed_dim};
}

Matrix& Parameters::module_weight(const ModuleRef& m) {
  if (m.block >= blocks.size()) {
    throw ConfigError("module " + to_string(m) + " out of range");
  }
  return m.slot == ModuleRef::Slot::mlp_in ? blocks[m.block].w_mlp_in
                                           : blocks[m.block].w_mlp_out;
}

const Matrix& Parameters::module_weight(const ModuleRef& m) const {
  return const_cast<Parameters*>(this)->module_weight(m);
}

std::size_t Parameters::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t v = cfg.vocab_size, e = cfg.embed_dim, m = cfg.mlp_hidden;
  return v * e + cfg.max_seq_len * e +
         cfg.n_blocks * (4 * e * e + e * m + m + m * e + e) + 2 * e + e * v;
}

Parameters init_model(const ModelConfig& cfg) {
  cfg.validate();
  Parameters p;
  p.config = cfg;
  const std::size_t v = cfg.vocab_size, e = cfg.embed_dim, m = cfg.mlp_hidden;
  Rng rng(cfg.seed);

  p.tok_emb = Matrix(v, e);
  fill_uniform(p.tok_emb, rng, 0.1);
  p.pos_emb = Matrix(cfg.max_seq_len, e);
  fill_uniform(p.pos_emb, rng, 0.1);

  const double a_e = 1.0 / std::sqrt(static_cast<double>(e));
  const double a_m = 1.0 / std::sqrt(static_cast<double>(m));
  p.blocks.resize(cfg.n_blocks);
  for (auto& b : p.blocks) {
    b.wq = Matrix(e, e);
    fill_uniform(b.wq, rng, a_e);
    b.wk = Matrix(e, e);
    fill_uniform(b.wk, rng, a_e);
    b.wv = Matrix(e, e);
    fill_uniform(b.wv, rng, a_e);
    b.wo = Matrix(e, e);
    fill_uniform(b.wo, rng, a_e);
    b.w_mlp_in = Matrix(e, m);
    fill_uniform(b.w_mlp_in, rng, a_e);
    b.b_mlp_in = Matrix(1, m);
    b.w_mlp_out = Matrix(m, e);
    fill_uniform(b.w_mlp_out, rng, a_m);
    b.b_mlp_out = Matrix(1, e);
  }

  p.ln_f_scale = Matrix(1, e, 1.0);
  p.ln_f_shift = Matrix(1, e);
  p.w_head = Matrix(e, v);
  fill_uniform(p.w_head, rng, a_e);
  return p;
}

ForwardTrace forward(const Parameters& params, const std::vector<int>& tokens,
                     const std::vector<ModuleRef>& taps) {
  check_taps(params.config, taps);
  Activations acts = run_forward(params, tokens, std::nullopt);
  ForwardTrace trace;
  trace.logits = std::move(acts.logits);
  for (const auto& m : taps) {
    trace.tap_inputs[m] = tap_input_of(acts.blocks[m.block], m.slot);
  }
  return trace;
}

BackwardResult loss_and_backward(const Parameters& params, const std::vector<int>& tokens,
                                 const std::vector<bool>& label_mask,
                                 const std::vector<ModuleRef>& taps, bool mean_loss) {
  check_taps(params.config, taps);
  const ModelConfig& cfg = params.config;
  const std::size_t t_len = tokens.size();
  const std::size_t e_dim = cfg.embed_dim;
  const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(e_dim));

  Activations acts = run_forward(params, tokens, std::nullopt);

  BackwardResult res;
  res.grads = zeros_like(params);
  Matrix dlogits;
  res.loss = masked_loss(acts.logits, tokens, label_mask, mean_loss, &dlogits);

  // Output head.
  res.grads.w_head = matmul(transpose(acts.x_f), dlogits);
  Matrix dx_f = matmul(dlogits, transpose(params.w_head));

  // Final layer norm with scale/shift.
  Matrix dn_f(t_len, e_dim);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < e_dim; ++j) {
      res.grads.ln_f_scale(0, j) += dx_f(t, j) * acts.n_f(t, j);
      res.grads.ln_f_shift(0, j) += dx_f(t, j);
      dn_f(t, j) = dx_f(t, j) * params.ln_f_scale(0, j);
    }
  }
  Matrix dx = ln_backward(dn_f, acts.n_f, acts.r_f);

  for (std::size_t bi = cfg.n_blocks; bi-- > 0;) {
    const BlockParams& bp = params.blocks[bi];
    BlockParams& bg = res.grads.blocks[bi];
    const BlockActs& a = acts.blocks[bi];

    // x_out = x_mid + mlp_out(gelu(mlp_in(n_mid)))
    const Matrix& d_mlp_out = dx;
    Matrix dx_mid = dx;
    for (const auto& m : taps) {
      if (m.block == bi && m.slot == ModuleRef::Slot::mlp_out) {
        res.tap_grads[m] = d_mlp_out;
        res.tap_inputs[m] = a.mlp_act;
      }
    }
    bg.w_mlp_out = matmul(transpose(a.mlp_act), d_mlp_out);
    bg.b_mlp_out = col_sums(d_mlp_out);
    Matrix d_mlp_act = matmul(d_mlp_out, transpose(bp.w_mlp_out));
    Matrix d_mlp_pre(t_len, cfg.mlp_hidden);
    for (std::size_t i = 0; i < d_mlp_pre.size(); ++i) {
      d_mlp_pre.values()[i] = d_mlp_act.values()[i] * gelu_deriv(a.mlp_pre.values()[i]);
    }
    for (const auto& m : taps) {
      if (m.block == bi && m.slot == ModuleRef::Slot::mlp_in) {
        res.tap_grads[m] = d_mlp_pre;
        res.tap_inputs[m] = a.n_mid;
      }
    }
    bg.w_mlp_in = matmul(transpose(a.n_mid), d_mlp_pre);
    bg.b_mlp_in = col_sums(d_mlp_pre);
    Matrix d_n_mid = matmul(d_mlp_pre, transpose(bp.w_mlp_in));
    add_in_place(dx_mid, ln_backward(d_n_mid, a.n_mid, a.r_mid));

    // x_mid = x_in + attn(n_att)
    const Matrix& d_attn_out = dx_mid;
    Matrix dx_in = dx_mid;
    bg.wo = matmul(transpose(a.ctx), d_attn_out);
    Matrix d_ctx = matmul(d_attn_out, transpose(bp.wo));

    Matrix d_att(t_len, t_len);
    Matrix dv(t_len, e_dim);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t j = 0; j < e_dim; ++j) s += d_ctx(t, j) * a.v(u, j);
        d_att(t, u) = s;
        for (std::size_t j = 0; j < e_dim; ++j) dv(u, j) += a.att(t, u) * d_ctx(t, j);
      }
    }
    Matrix d_scores(t_len, t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      double dot = 0.0;
      for (std::size_t u = 0; u <= t; ++u) dot += a.att(t, u) * d_att(t, u);
      for (std::size_t u = 0; u <= t; ++u) {
        d_scores(t, u) = a.att(t, u) * (d_att(t, u) - dot);
      }
    }
    Matrix dq(t_len, e_dim), dk(t_len, e_dim);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t u = 0; u <= t; ++u) {
        const double g = d_scores(t, u) * inv_sqrt_e;
        for (std::size_t j = 0; j < e_dim; ++j) {
          dq(t, j) += g * a.k(u, j);
          dk(u, j) += g * a.q(t, j);
        }
      }
    }
    bg.wq = matmul(transpose(a.n_att), dq);
    bg.wk = matmul(transpose(a.n_att), dk);
    bg.wv = matmul(transpose(a.n_att), dv);
    Matrix d_n_att = matmul(dq, transpose(bp.wq));
    add_in_place(d_n_att, matmul(dk, transpose(bp.wk)));
    add_in_place(d_n_att, matmul(dv, transpose(bp.wv)));
    add_in_place(dx_in, ln_backward(d_n_att, a.n_att, a.r_att));

    dx = std::move(dx_in);
  }

  for (std::size_t t = 0; t < t_len; ++t) {
    const auto tok = static_cast<std::size_t>(tokens[t]);
    for (std::size_t j = 0; j < e_dim; ++j) {
      res.grads.tok_emb(tok, j) += dx(t, j);
      res.grads.pos_emb(t, j) += dx(t, j);
    }
  }
  return res;
}

double loss_only(const Parameters& params, const std::vector<int>& tokens,
                 const std::vector<bool>& label_mask,
                 const std::optional<TapInjection>& injection, bool mean_loss) {
  Activations acts = run_forward(params, tokens, injection);
  return masked_loss(acts.logits, tokens, label_mask, mean_loss, nullptr);
}

Parameters apply_delta(const Parameters& params, const ModuleRef& m, const Matrix& delta) {
  const auto [d, d_out] = params.module_dims(m);
  if (delta.rows() != d || delta.cols() != d_out) {
    throw ShapeError("apply_delta: delta is " + std::to_string(delta.rows()) + "x" +
                     std::to_string(delta.cols()) + ", module wants " + std::to_string(d) +
                     "x" + std::to_string(d_out));
  }
  ensure_finite(delta, "apply_delta delta");
  Parameters out = params;
  Matrix& w = out.module_weight(m);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    // Skipping exact zeros keeps untouched entries bit-identical.
    if (delta.values()[i] != 0.0) w.values()[i] += delta.values()[i];
  }
  return out;
}

Parameters pretrain(const Parameters& params, const std::vector<TrainSequence>& corpus,
                    std::size_t steps, double step_size, std::uint64_t seed) {
  if (corpus.empty()) throw EmptyBatchError("pretrain: empty corpus");
  Parameters p = params;
  Rng rng(seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  for (std::size_t step = 0; step < steps; ++step) {
    if (cursor == order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    const TrainSequence& seq = corpus[order[cursor++]];
    BackwardResult res;
    try {
      res = loss_and_backward(p, seq.tokens, seq.label_mask, {});
    } catch (const NumericalError& e) {
      throw TrainingError("pretrain: numerical failure at step " + std::to_string(step) +
                          ": " + e.what());
    }
    if (!std::isfinite(res.loss)) {
      throw TrainingError("pretrain: non-finite loss at step " + std::to_string(step));
    }
    const auto dst = tensor_list(p);
    const auto src = tensor_list(res.grads);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t j = 0; j < dst[i]->size(); ++j) {
        dst[i]->values()[j] -= step_size * src[i]->values()[j];
      }
    }
  }
  return p;
}

std::vector<int> greedy_decode(const Parameters& params, const std::vector<int>& prompt,
                               std::size_t max_new, int stop_token) {
  if (prompt.empty()) throw LengthError("greedy_decode: empty prompt");
  if (prompt.size() + max_new > params.config.max_seq_len) {
    throw LengthError("greedy_decode: prompt + max_new exceeds max_seq_len");
  }
  std::vector<int> seq = prompt;
  std::vector<int> out;
  for (std::size_t i = 0; i < max_new; ++i) {
    const ForwardTrace trace = forward(params, seq, {});
    const auto row = trace.logits.row(seq.size() - 1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    const int tok = static_cast<int>(best);
    out.push_back(tok);
    seq.push_back(tok);
    if (tok == stop_token) break;
  }
  return out;
}

}  // namespace uled
