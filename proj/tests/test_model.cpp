#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "uled/errors.hpp"
#include "uled/model.hpp"
#include "uled/rng.hpp"

using namespace uled;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.embed_dim = 8;
  cfg.n_blocks = 2;
  cfg.mlp_hidden = 8;
  cfg.max_seq_len = 8;
  cfg.seed = 5;
  return cfg;
}

std::vector<ModuleRef> all_modules(const ModelConfig& cfg) {
  std::vector<ModuleRef> out;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    out.push_back({b, ModuleRef::Slot::mlp_in});
    out.push_back({b, ModuleRef::Slot::mlp_out});
  }
  return out;
}

bool bits_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.values()[i]) !=
        std::bit_cast<std::uint64_t>(b.values()[i])) {
      return false;
    }
  }
  return true;
}

bool bits_equal(const Parameters& a, const Parameters& b) {
  if (a.config != b.config) return false;
  std::vector<const Matrix*> ta, tb;
  a.for_each_tensor([&](const std::string&, const Matrix& m) { ta.push_back(&m); });
  b.for_each_tensor([&](const std::string&, const Matrix& m) { tb.push_back(&m); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!bits_equal(*ta[i], *tb[i])) return false;
  }
  return true;
}

// Straight-line reimplementation of the forward pass with plain loops in
// the same summation order; outputs must match the library bit for bit.
struct OracleForward {
  Matrix logits;
  std::map<ModuleRef, Matrix> taps;
};

void oracle_ln(const Matrix& x, Matrix& n) {
  const std::size_t t_len = x.rows(), dim = x.cols();
  n = Matrix(t_len, dim);
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
    const double r = std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < dim; ++j) n(t, j) = (x(t, j) - mean) / r;
  }
}

Matrix oracle_mm(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) sum += a(i, k) * b(k, j);
      c(i, j) = sum;
    }
  }
  return c;
}

OracleForward oracle_forward(const Parameters& p, const std::vector<int>& tokens) {
  const ModelConfig& cfg = p.config;
  const std::size_t t_len = tokens.size(), e = cfg.embed_dim;
  const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(e));

  Matrix x(t_len, e);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < e; ++j) {
      x(t, j) = p.tok_emb(static_cast<std::size_t>(tokens[t]), j) + p.pos_emb(t, j);
    }
  }

  OracleForward out;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const BlockParams& bp = p.blocks[b];
    Matrix n_att;
    oracle_ln(x, n_att);
    Matrix q = oracle_mm(n_att, bp.wq);
    Matrix k = oracle_mm(n_att, bp.wk);
    Matrix v = oracle_mm(n_att, bp.wv);

    Matrix att(t_len, t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      std::vector<double> scores(t + 1);
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t j = 0; j < e; ++j) s += q(t, j) * k(u, j);
        scores[u] = s * inv_sqrt_e;
        best = std::max(best, scores[u]);
      }
      double denom = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        scores[u] = std::exp(scores[u] - best);
        denom += scores[u];
      }
      for (std::size_t u = 0; u <= t; ++u) att(t, u) = scores[u] / denom;
    }

    Matrix ctx(t_len, e);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t u = 0; u <= t; ++u) {
        const double w = att(t, u);
        for (std::size_t j = 0; j < e; ++j) ctx(t, j) += w * v(u, j);
      }
    }

    Matrix attn_out = oracle_mm(ctx, bp.wo);
    Matrix x_mid = x;
    for (std::size_t i = 0; i < x_mid.size(); ++i) x_mid.values()[i] += attn_out.values()[i];

    Matrix n_mid;
    oracle_ln(x_mid, n_mid);
    Matrix pre = oracle_mm(n_mid, bp.w_mlp_in);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < cfg.mlp_hidden; ++j) pre(t, j) += bp.b_mlp_in(0, j);
    }
    Matrix act(t_len, cfg.mlp_hidden);
    for (std::size_t i = 0; i < pre.size(); ++i) {
      const double u = pre.values()[i];
      act.values()[i] = 0.5 * u * (1.0 + std::erf(u * 0.70710678118654752440));
    }
    Matrix mlp_out = oracle_mm(act, bp.w_mlp_out);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < e; ++j) mlp_out(t, j) += bp.b_mlp_out(0, j);
    }

    out.taps[{b, ModuleRef::Slot::mlp_in}] = n_mid;
    out.taps[{b, ModuleRef::Slot::mlp_out}] = act;

    Matrix next = x_mid;
    for (std::size_t i = 0; i < next.size(); ++i) next.values()[i] += mlp_out.values()[i];
    x = next;
  }

  Matrix n_f;
  oracle_ln(x, n_f);
  Matrix x_f(t_len, e);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < e; ++j) {
      x_f(t, j) = n_f(t, j) * p.ln_f_scale(0, j) + p.ln_f_shift(0, j);
    }
  }
  out.logits = oracle_mm(x_f, p.w_head);
  return out;
}

// Guarded relative error for gradient checks; the guard keeps vanishing
// entries from blowing up on finite-difference noise.
double grad_rel_err(double fd, double an) {
  return std::fabs(fd - an) / std::max(std::fabs(fd) + std::fabs(an), 1e-6);
}

}  // namespace

TEST_CASE("parameter count matches the closed form and the tensor sum") {
  ModelConfig cfg = toy_config();
  const std::size_t v = cfg.vocab_size, e = cfg.embed_dim, s = cfg.max_seq_len,
                    b = cfg.n_blocks, m = cfg.mlp_hidden;
  const std::size_t closed = v * e + s * e + b * (4 * e * e + 2 * e * m + m + e) + 2 * e + e * v;
  CHECK(parameter_count(cfg) == closed);

  Parameters p = init_model(cfg);
  std::size_t total = 0;
  p.for_each_tensor([&](const std::string&, const Matrix& t) { total += t.size(); });
  CHECK(total == closed);
  CHECK(p.parameter_count() == closed);
}

TEST_CASE("initialization is deterministic in the seed") {
  ModelConfig cfg = toy_config();
  CHECK(bits_equal(init_model(cfg), init_model(cfg)));
  ModelConfig other = cfg;
  other.seed = 6;
  CHECK_FALSE(init_model(other) == init_model(cfg));
}

TEST_CASE("config validation rejects degenerate dimensions") {
  ModelConfig cfg = toy_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config();
  cfg.max_seq_len = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(toy_config().validate());
}

TEST_CASE("module references round-trip through their string form") {
  ModuleRef m{1, ModuleRef::Slot::mlp_out};
  CHECK(to_string(m) == "1.mlp_out");
  CHECK(parse_module_ref("1.mlp_out") == m);
  CHECK(parse_module_ref("0.mlp_in") == ModuleRef{0, ModuleRef::Slot::mlp_in});
  CHECK_THROWS_AS(parse_module_ref("mlp_in"), ParseError);
  CHECK_THROWS_AS(parse_module_ref("1.attention"), ParseError);
  CHECK_THROWS_AS(parse_module_ref("x.mlp_in"), ParseError);
  CHECK_THROWS_AS(parse_module_ref(""), ParseError);
}

TEST_CASE("module weights expose the documented shapes") {
  Parameters p = init_model(toy_config());
  auto [d_in, d_out] = p.module_dims({0, ModuleRef::Slot::mlp_in});
  CHECK(d_in == 8);
  CHECK(d_out == 8);
  CHECK(&p.module_weight({1, ModuleRef::Slot::mlp_out}) == &p.blocks[1].w_mlp_out);
  CHECK_THROWS_AS(p.module_dims({7, ModuleRef::Slot::mlp_in}), ConfigError);
}

TEST_CASE("forward matches an independent straight-line oracle bit for bit") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7, 11, 0};
  ForwardTrace got = forward(p, tokens, all_modules(p.config));
  OracleForward want = oracle_forward(p, tokens);
  CHECK(bits_equal(got.logits, want.logits));
  REQUIRE(got.tap_inputs.size() == want.taps.size());
  for (const auto& [m, tap] : want.taps) {
    CHECK(bits_equal(got.tap_inputs.at(m), tap));
  }
}

TEST_CASE("causal masking: a prefix forward reproduces the full run's prefix rows") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7, 11};
  ForwardTrace full = forward(p, tokens, all_modules(p.config));
  for (std::size_t cut = 1; cut < tokens.size(); ++cut) {
    std::vector<int> prefix(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(cut));
    ForwardTrace part = forward(p, prefix, all_modules(p.config));
    for (std::size_t t = 0; t < cut; ++t) {
      for (std::size_t j = 0; j < p.config.vocab_size; ++j) {
        CHECK(part.logits(t, j) == full.logits(t, j));
      }
      for (const auto& [m, tap] : part.tap_inputs) {
        for (std::size_t j = 0; j < tap.cols(); ++j) {
          CHECK(tap(t, j) == full.tap_inputs.at(m)(t, j));
        }
      }
    }
  }
}

TEST_CASE("forward input validation") {
  Parameters p = init_model(toy_config());
  CHECK_THROWS_AS(forward(p, {}, {}), LengthError);
  CHECK_THROWS_AS(forward(p, std::vector<int>(9, 1), {}), LengthError);
  CHECK_THROWS_AS(forward(p, {1, 12}, {}), VocabularyError);
  CHECK_THROWS_AS(forward(p, {1, -1}, {}), VocabularyError);
  CHECK_THROWS_AS(forward(p, {1, 2}, {{5, ModuleRef::Slot::mlp_in}}), ConfigError);
}

TEST_CASE("all-zero parameters give uniform logits and loss ln V") {
  Parameters p = init_model(toy_config());
  p.for_each_tensor([](const std::string&, Matrix& t) {
    for (auto& x : t.values()) x = 0.0;
  });
  std::vector<int> tokens = {3, 7, 5};
  std::vector<bool> mask = {false, false, true};
  const double want = std::log(static_cast<double>(p.config.vocab_size));
  CHECK(loss_only(p, tokens, mask) == doctest::Approx(want).epsilon(1e-12));
  BackwardResult bw = loss_and_backward(p, tokens, mask, {});
  CHECK(bw.loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("loss masking edge cases") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {3, 7, 5};
  CHECK_THROWS_AS(loss_only(p, tokens, {true, false, false}), NoLabelError);
  CHECK_THROWS_AS(loss_only(p, tokens, {false, false, false}), NoLabelError);
  CHECK_THROWS_AS(loss_only(p, tokens, {false, true}), ShapeError);
}

TEST_CASE("mean loss is the summed loss over the label count") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {3, 7, 5, 2, 9};
  std::vector<bool> mask = {false, false, true, true, true};
  const double sum = loss_only(p, tokens, mask, std::nullopt, false);
  const double mean = loss_only(p, tokens, mask, std::nullopt, true);
  CHECK(mean == doctest::Approx(sum / 3.0).epsilon(1e-15));
}

TEST_CASE("every parameter gradient matches central finite differences") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7, 11};
  std::vector<bool> mask = {false, false, true, true, true};
  BackwardResult bw = loss_and_backward(p, tokens, mask, {});

  std::vector<Matrix*> tensors;
  p.for_each_tensor([&](const std::string&, Matrix& t) { tensors.push_back(&t); });
  std::vector<const Matrix*> grads;
  bw.grads.for_each_tensor([&](const std::string&, const Matrix& g) { grads.push_back(&g); });
  REQUIRE(tensors.size() == grads.size());

  const double step = 1e-5;
  double worst = 0.0;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Matrix& t = *tensors[ti];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.values()[i];
      t.values()[i] = keep + step;
      const double up = loss_only(p, tokens, mask);
      t.values()[i] = keep - step;
      const double down = loss_only(p, tokens, mask);
      t.values()[i] = keep;
      worst = std::max(worst, grad_rel_err((up - down) / (2.0 * step), grads[ti]->values()[i]));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("tap gradients match finite differences through output injection") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7, 11};
  std::vector<bool> mask = {false, false, true, true, true};
  const auto modules = all_modules(p.config);
  BackwardResult bw = loss_and_backward(p, tokens, mask, modules);

  const double step = 1e-5;
  double worst = 0.0;
  for (const auto& m : modules) {
    const Matrix& g = bw.tap_grads.at(m);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        const double up = loss_only(p, tokens, mask, TapInjection{m, t, j, step});
        const double down = loss_only(p, tokens, mask, TapInjection{m, t, j, -step});
        worst = std::max(worst, grad_rel_err((up - down) / (2.0 * step), g(t, j)));
      }
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("tap gradients vanish at and after the last supervised position") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7, 11};
  std::vector<bool> mask = {false, false, true, false, false};
  BackwardResult bw = loss_and_backward(p, tokens, mask, all_modules(p.config));
  for (const auto& [m, g] : bw.tap_grads) {
    bool some_nonzero = false;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        if (t >= 2) {
          CHECK(g(t, j) == 0.0);
        } else {
          some_nonzero = some_nonzero || g(t, j) != 0.0;
        }
      }
    }
    CHECK(some_nonzero);  // the signal sits strictly before the label
  }
}

TEST_CASE("tap inputs agree between forward and backward") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7};
  std::vector<bool> mask = {false, true, true, true};
  const auto modules = all_modules(p.config);
  ForwardTrace fw = forward(p, tokens, modules);
  BackwardResult bw = loss_and_backward(p, tokens, mask, modules);
  for (const auto& m : modules) {
    CHECK(bits_equal(fw.tap_inputs.at(m), bw.tap_inputs.at(m)));
  }
}

TEST_CASE("apply_delta changes exactly the addressed weight") {
  Parameters p = init_model(toy_config());
  ModuleRef m{1, ModuleRef::Slot::mlp_in};
  Matrix delta(8, 8);
  delta(2, 3) = 0.25;
  delta(7, 0) = -1.5;
  Parameters q = apply_delta(p, m, delta);

  CHECK(q.module_weight(m)(2, 3) == p.module_weight(m)(2, 3) + 0.25);
  CHECK(q.module_weight(m)(7, 0) == p.module_weight(m)(7, 0) - 1.5);
  // zero-entry skip keeps every untouched value bit-identical
  Matrix probe = q.module_weight(m);
  probe(2, 3) = p.module_weight(m)(2, 3);
  probe(7, 0) = p.module_weight(m)(7, 0);
  CHECK(bits_equal(probe, p.module_weight(m)));

  Parameters back = apply_delta(q, m, [&] {
    Matrix neg = delta;
    for (auto& x : neg.values()) x = -x;
    return neg;
  }());
  for (std::size_t i = 0; i < back.module_weight(m).size(); ++i) {
    CHECK(back.module_weight(m).values()[i] ==
          doctest::Approx(p.module_weight(m).values()[i]).epsilon(1e-15));
  }

  CHECK(bits_equal(apply_delta(p, m, Matrix(8, 8)), p));
  CHECK_THROWS_AS(apply_delta(p, m, Matrix(3, 8)), ShapeError);
  Matrix bad(8, 8);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(apply_delta(p, m, bad), NumericalError);
}

TEST_CASE("a weight delta shifts the module's pre-activation by h times delta") {
  Parameters p = init_model(toy_config());
  std::vector<int> tokens = {4, 9, 2, 7, 11};
  ModuleRef edited{0, ModuleRef::Slot::mlp_in};
  ModuleRef observer{0, ModuleRef::Slot::mlp_out};

  Rng rng(33);
  Matrix delta(8, 8);
  for (auto& x : delta.values()) x = rng.uniform(-0.05, 0.05);

  ForwardTrace before = forward(p, tokens, {edited, observer});
  ForwardTrace after = forward(apply_delta(p, edited, delta), tokens, {edited, observer});

  // the module input is upstream of the edit and must not move
  CHECK(bits_equal(after.tap_inputs.at(edited), before.tap_inputs.at(edited)));

  // downstream observer sees gelu(pre + h delta): reconstruct pre from the
  // unedited weights and compare
  const Matrix& h = before.tap_inputs.at(edited);
  Matrix pre = matmul(h, p.blocks[0].w_mlp_in);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (std::size_t j = 0; j < 8; ++j) pre(t, j) += p.blocks[0].b_mlp_in(0, j);
  }
  Matrix shift = matmul(h, delta);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double u = pre(t, j) + shift(t, j);
      const double want = 0.5 * u * (1.0 + std::erf(u * 0.70710678118654752440));
      CHECK(after.tap_inputs.at(observer)(t, j) == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("pretrain with zero steps returns the parameters unchanged") {
  Parameters p = init_model(toy_config());
  std::vector<TrainSequence> corpus = {{{4, 9, 2, 7}, {false, false, true, true}}};
  CHECK(bits_equal(pretrain(p, corpus, 0, 0.05, 1), p));
}

TEST_CASE("pretrain is deterministic and reduces the corpus loss") {
  Parameters p = init_model(toy_config());
  Rng rng(42);
  std::vector<TrainSequence> corpus;
  for (int i = 0; i < 8; ++i) {
    std::vector<int> toks = {static_cast<int>(rng.below(12)), static_cast<int>(rng.below(12)),
                             2, static_cast<int>(4 + rng.below(8)), 3};
    corpus.push_back({toks, {false, false, false, true, true}});
  }
  auto corpus_loss = [&](const Parameters& q) {
    double total = 0.0;
    for (const auto& s : corpus) total += loss_only(q, s.tokens, s.label_mask);
    return total;
  };
  Parameters trained = pretrain(p, corpus, 400, 0.02, 9);
  CHECK(bits_equal(trained, pretrain(p, corpus, 400, 0.02, 9)));
  CHECK(corpus_loss(trained) < 0.5 * corpus_loss(p));
  CHECK_FALSE(bits_equal(trained, pretrain(p, corpus, 400, 0.02, 10)));
}

TEST_CASE("pretrain reports divergence with the failing step") {
  Parameters p = init_model(toy_config());
  std::vector<TrainSequence> corpus = {{{4, 9, 2, 7}, {false, false, true, true}}};
  CHECK_THROWS_WITH_AS(pretrain(p, corpus, 50, 1e6, 1), doctest::Contains("step"),
                       TrainingError);
}

TEST_CASE("greedy decode follows argmax with ties broken toward the lowest id") {
  Parameters p = init_model(toy_config());
  p.for_each_tensor([](const std::string&, Matrix& t) {
    for (auto& x : t.values()) x = 0.0;
  });
  // uniform logits everywhere: every step picks token 0
  auto out = greedy_decode(p, {5, 7}, 3);
  CHECK(out == std::vector<int>{0, 0, 0});
}

TEST_CASE("greedy decode stops at and includes the stop token") {
  Parameters p = init_model(toy_config());
  p.for_each_tensor([](const std::string&, Matrix& t) {
    for (auto& x : t.values()) x = 0.0;
  });
  auto out = greedy_decode(p, {5, 7}, 4, 0);
  CHECK(out == std::vector<int>{0});
  CHECK(greedy_decode(p, {5}, 0).empty());
}

TEST_CASE("greedy decode respects the context window") {
  Parameters p = init_model(toy_config());
  CHECK_THROWS_AS(greedy_decode(p, {1, 2, 3, 4, 5, 6}, 3), LengthError);
}
