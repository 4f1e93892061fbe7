#include "tulab/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace tulab {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;

struct ParamLayout {
  struct Block {
    long long ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
  };
  long long wte = 0, wpe = 0;
  std::vector<Block> blocks;
  long long lnf_g = 0, lnf_b = 0, head = 0;
  long long total = 0;

  static ParamLayout build(const ModelConfig& c) {
    ParamLayout l;
    const long long d = c.d_model, m = c.mlp_hidden();
    long long cur = 0;
    l.wte = cur;
    cur += static_cast<long long>(c.vocab_size) * d;
    l.wpe = cur;
    cur += static_cast<long long>(c.context_len) * d;
    l.blocks.resize(static_cast<size_t>(c.n_layers));
    for (auto& b : l.blocks) {
      b.ln1_g = cur;
      cur += d;
      b.ln1_b = cur;
      cur += d;
      b.wq = cur;
      cur += d * d;
      b.wk = cur;
      cur += d * d;
      b.wv = cur;
      cur += d * d;
      b.wo = cur;
      cur += d * d;
      b.ln2_g = cur;
      cur += d;
      b.ln2_b = cur;
      cur += d;
      b.w1 = cur;
      cur += m * d;
      b.w2 = cur;
      cur += d * m;
    }
    l.lnf_g = cur;
    cur += d;
    l.lnf_b = cur;
    cur += d;
    l.head = cur;
    cur += static_cast<long long>(c.vocab_size) * d;
    l.total = cur;
    return l;
  }
};

double gelu(double u) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * u * (1.0 + std::tanh(k * (u + 0.044715 * u * u * u)));
}

double gelu_grad(double u) {
  constexpr double k = 0.7978845608028654;
  const double s = k * (u + 0.044715 * u * u * u);
  const double t = std::tanh(s);
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * u * u);
}

// y = gamma * (x - mu)/sigma + beta, rowwise; stores xhat and 1/sigma.
void layernorm_forward(const RowMat& x, MapMat gamma, MapMat beta, RowMat& y, RowMat& xhat,
                       Eigen::VectorXd& rstd) {
  const auto T = x.rows();
  const auto d = x.cols();
  y.resize(T, d);
  xhat.resize(T, d);
  rstd.resize(T);
  for (Eigen::Index i = 0; i < T; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd(i) = rs;
    xhat.row(i) = (x.row(i).array() - mu) * rs;
    y.row(i) = xhat.row(i).cwiseProduct(gamma.row(0)) + beta.row(0);
  }
}

void layernorm_backward(const RowMat& dy, const RowMat& xhat, const Eigen::VectorXd& rstd,
                        MapMat gamma, RowMat& dx, MutMat dgamma, MutMat dbeta) {
  const auto T = dy.rows();
  const auto d = dy.cols();
  dx.resize(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gamma.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = (dxhat.array() - m1 - xhat.row(i).array() * m2) * rstd(i);
    dgamma.row(0) += dy.row(i).cwiseProduct(xhat.row(i));
    dbeta.row(0) += dy.row(i);
  }
  (void)d;
}

struct LayerTrace {
  RowMat x_in;
  RowMat ln1_xhat, a;
  Eigen::VectorXd ln1_rstd;
  RowMat q, k, v;
  std::vector<RowMat> att;  // per head, T x T, zero above the diagonal
  RowMat att_o;             // concatenated head outputs, before the output proj
  RowMat x_mid;
  RowMat ln2_xhat, b;
  Eigen::VectorXd ln2_rstd;
  RowMat u, g;
};

struct Trace {
  std::vector<LayerTrace> layers;
  RowMat final_x;
  RowMat lnf_xhat, hnorm;
  Eigen::VectorXd lnf_rstd;
  RowMat logits;
};

void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw InvalidArgument("token id " + std::to_string(t) + " outside vocab of size " +
                            std::to_string(cfg.vocab_size));
    }
  }
}

void forward_full(const ModelConfig& cfg, std::span<const double> params,
                  std::span<const int> tokens, Trace& tr) {
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim(), m = cfg.mlp_hidden();
  const ParamLayout L = ParamLayout::build(cfg);
  const double* p = params.data();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  RowMat x(T, d);
  MapMat wte(p + L.wte, cfg.vocab_size, d);
  MapMat wpe(p + L.wpe, cfg.context_len, d);
  for (int i = 0; i < T; ++i) {
    x.row(i) = wte.row(tokens[static_cast<size_t>(i)]) + wpe.row(i);
  }

  tr.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (int li = 0; li < cfg.n_layers; ++li) {
    auto& lt = tr.layers[static_cast<size_t>(li)];
    const auto& B = L.blocks[static_cast<size_t>(li)];
    lt.x_in = x;

    layernorm_forward(lt.x_in, MapMat(p + B.ln1_g, 1, d), MapMat(p + B.ln1_b, 1, d), lt.a,
                      lt.ln1_xhat, lt.ln1_rstd);

    MapMat wq(p + B.wq, d, d), wk(p + B.wk, d, d), wv(p + B.wv, d, d), wo(p + B.wo, d, d);
    lt.q.noalias() = lt.a * wq.transpose();
    lt.k.noalias() = lt.a * wk.transpose();
    lt.v.noalias() = lt.a * wv.transpose();

    lt.att.assign(static_cast<size_t>(H), RowMat::Zero(T, T));
    lt.att_o.resize(T, d);
    for (int h = 0; h < H; ++h) {
      auto Q = lt.q.middleCols(h * hd, hd);
      auto K = lt.k.middleCols(h * hd, hd);
      auto V = lt.v.middleCols(h * hd, hd);
      RowMat& P = lt.att[static_cast<size_t>(h)];
      for (int i = 0; i < T; ++i) {
        Eigen::RowVectorXd s = (Q.row(i) * K.topRows(i + 1).transpose()) * inv_sqrt;
        const double mx = s.maxCoeff();
        Eigen::RowVectorXd e = (s.array() - mx).exp();
        P.row(i).head(i + 1) = e / e.sum();
      }
      lt.att_o.middleCols(h * hd, hd).noalias() = P * V;
    }

    lt.x_mid.noalias() = lt.x_in + lt.att_o * wo.transpose();

    layernorm_forward(lt.x_mid, MapMat(p + B.ln2_g, 1, d), MapMat(p + B.ln2_b, 1, d), lt.b,
                      lt.ln2_xhat, lt.ln2_rstd);

    MapMat w1(p + B.w1, m, d), w2(p + B.w2, d, m);
    lt.u.noalias() = lt.b * w1.transpose();
    lt.g = lt.u.unaryExpr([](double v) { return gelu(v); });
    x.noalias() = lt.x_mid + lt.g * w2.transpose();
  }

  tr.final_x = x;
  layernorm_forward(tr.final_x, MapMat(p + L.lnf_g, 1, d), MapMat(p + L.lnf_b, 1, d), tr.hnorm,
                    tr.lnf_xhat, tr.lnf_rstd);
  MapMat head(p + L.head, cfg.vocab_size, d);
  tr.logits.noalias() = tr.hnorm * head.transpose();
}

void backward_full(const ModelConfig& cfg, std::span<const double> params,
                   std::span<const int> tokens, const Trace& tr, const RowMat& dlogits,
                   std::span<double> grad) {
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim(), m = cfg.mlp_hidden();
  const ParamLayout L = ParamLayout::build(cfg);
  const double* p = params.data();
  double* g = grad.data();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  MapMat head(p + L.head, cfg.vocab_size, d);
  MutMat dhead(g + L.head, cfg.vocab_size, d);
  dhead.noalias() += dlogits.transpose() * tr.hnorm;
  RowMat dhnorm = dlogits * head;

  RowMat dx;
  layernorm_backward(dhnorm, tr.lnf_xhat, tr.lnf_rstd, MapMat(p + L.lnf_g, 1, d), dx,
                     MutMat(g + L.lnf_g, 1, d), MutMat(g + L.lnf_b, 1, d));

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const auto& lt = tr.layers[static_cast<size_t>(li)];
    const auto& B = L.blocks[static_cast<size_t>(li)];
    MapMat wq(p + B.wq, d, d), wk(p + B.wk, d, d), wv(p + B.wv, d, d), wo(p + B.wo, d, d);
    MapMat w1(p + B.w1, m, d), w2(p + B.w2, d, m);

    // MLP branch: dx is the gradient on the layer output.
    MutMat dw2(g + B.w2, d, m);
    dw2.noalias() += dx.transpose() * lt.g;
    RowMat dg = dx * w2;
    RowMat du = dg.cwiseProduct(lt.u.unaryExpr([](double v) { return gelu_grad(v); }));
    MutMat dw1(g + B.w1, m, d);
    dw1.noalias() += du.transpose() * lt.b;
    RowMat db = du * w1;

    RowMat dx_mid;
    layernorm_backward(db, lt.ln2_xhat, lt.ln2_rstd, MapMat(p + B.ln2_g, 1, d), dx_mid,
                       MutMat(g + B.ln2_g, 1, d), MutMat(g + B.ln2_b, 1, d));
    dx_mid += dx;  // residual

    // Attention branch.
    MutMat dwo(g + B.wo, d, d);
    dwo.noalias() += dx_mid.transpose() * lt.att_o;
    RowMat datt_o = dx_mid * wo;

    RowMat dq = RowMat::Zero(T, d), dk = RowMat::Zero(T, d), dv = RowMat::Zero(T, d);
    for (int h = 0; h < H; ++h) {
      auto Q = lt.q.middleCols(h * hd, hd);
      auto K = lt.k.middleCols(h * hd, hd);
      auto V = lt.v.middleCols(h * hd, hd);
      const RowMat& P = lt.att[static_cast<size_t>(h)];
      auto dO = datt_o.middleCols(h * hd, hd);

      RowMat dP = dO * V.transpose();
      dv.middleCols(h * hd, hd).noalias() += P.transpose() * dO;
      RowMat dS(T, T);
      for (int i = 0; i < T; ++i) {
        const auto prow = P.row(i).head(i + 1);
        const auto dprow = dP.row(i).head(i + 1);
        const double dot = prow.cwiseProduct(dprow).sum();
        dS.row(i).setZero();
        dS.row(i).head(i + 1) =
            (prow.array() * (dprow.array() - dot)).matrix() * inv_sqrt;
      }
      dq.middleCols(h * hd, hd).noalias() += dS * K;
      dk.middleCols(h * hd, hd).noalias() += dS.transpose() * Q;
    }

    MutMat dwq(g + B.wq, d, d), dwk(g + B.wk, d, d), dwv(g + B.wv, d, d);
    dwq.noalias() += dq.transpose() * lt.a;
    dwk.noalias() += dk.transpose() * lt.a;
    dwv.noalias() += dv.transpose() * lt.a;
    RowMat da = dq * wq;
    da.noalias() += dk * wk;
    da.noalias() += dv * wv;

    RowMat dx_in;
    layernorm_backward(da, lt.ln1_xhat, lt.ln1_rstd, MapMat(p + B.ln1_g, 1, d), dx_in,
                       MutMat(g + B.ln1_g, 1, d), MutMat(g + B.ln1_b, 1, d));
    dx = dx_mid + dx_in;
  }

  MutMat dwte(g + L.wte, cfg.vocab_size, d);
  MutMat dwpe(g + L.wpe, cfg.context_len, d);
  for (int i = 0; i < T; ++i) {
    dwte.row(tokens[static_cast<size_t>(i)]) += dx.row(i);
    dwpe.row(i) += dx.row(i);
  }
}

struct Packed {
  std::vector<int> tokens;
  int first_pred;  // first position whose next-token prediction is scored
  int n_pred;
};

Packed pack_example(const ModelConfig& cfg, const std::vector<int>& prompt,
                    const std::vector<int>& target) {
  Packed pk;
  pk.tokens.reserve(prompt.size() + target.size() + 3);
  pk.tokens.push_back(Tokenizer::kBos);
  pk.tokens.insert(pk.tokens.end(), prompt.begin(), prompt.end());
  pk.tokens.push_back(Tokenizer::kSep);
  pk.tokens.insert(pk.tokens.end(), target.begin(), target.end());
  pk.tokens.push_back(Tokenizer::kEos);
  if (static_cast<int>(pk.tokens.size()) > cfg.context_len) {
    throw InvalidArgument("packed sequence of length " + std::to_string(pk.tokens.size()) +
                          " exceeds context_len " + std::to_string(cfg.context_len));
  }
  check_tokens(cfg, pk.tokens);
  pk.first_pred = static_cast<int>(prompt.size()) + 1;  // the SEP position
  pk.n_pred = static_cast<int>(target.size()) + 1;      // target tokens plus EOS
  return pk;
}

double nll_row(const RowMat& logits, int row, int y) {
  const double mx = logits.row(row).maxCoeff();
  const double lse = mx + std::log((logits.row(row).array() - mx).exp().sum());
  return lse - logits(row, y);
}

// dlogits row = scale * (softmax - onehot(y))
void nll_grad_row(const RowMat& logits, int row, int y, double scale, RowMat& dlogits) {
  const double mx = logits.row(row).maxCoeff();
  Eigen::RowVectorXd e = (logits.row(row).array() - mx).exp();
  dlogits.row(row) += (e / e.sum()) * scale;
  dlogits(row, y) -= scale;
}

struct DecodeState {
  std::vector<RowMat> k_cache, v_cache;
  int len = 0;
};

Eigen::RowVectorXd decode_append(const ModelConfig& cfg, std::span<const double> params,
                                 DecodeState& st, int token) {
  const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim(), m = cfg.mlp_hidden();
  if (st.k_cache.empty()) {
    st.k_cache.assign(static_cast<size_t>(cfg.n_layers), RowMat::Zero(cfg.context_len, d));
    st.v_cache.assign(static_cast<size_t>(cfg.n_layers), RowMat::Zero(cfg.context_len, d));
  }
  if (st.len >= cfg.context_len) {
    throw InvalidArgument("decode state is full at context_len " +
                          std::to_string(cfg.context_len));
  }
  const ParamLayout L = ParamLayout::build(cfg);
  const double* p = params.data();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  MapMat wte(p + L.wte, cfg.vocab_size, d);
  MapMat wpe(p + L.wpe, cfg.context_len, d);
  RowMat x = wte.row(token) + wpe.row(st.len);

  RowMat a, xhat;
  Eigen::VectorXd rstd;
  for (int li = 0; li < cfg.n_layers; ++li) {
    const auto& B = L.blocks[static_cast<size_t>(li)];
    layernorm_forward(x, MapMat(p + B.ln1_g, 1, d), MapMat(p + B.ln1_b, 1, d), a, xhat, rstd);
    MapMat wq(p + B.wq, d, d), wk(p + B.wk, d, d), wv(p + B.wv, d, d), wo(p + B.wo, d, d);
    RowMat& kc = st.k_cache[static_cast<size_t>(li)];
    RowMat& vc = st.v_cache[static_cast<size_t>(li)];
    kc.row(st.len).noalias() = a * wk.transpose();
    vc.row(st.len).noalias() = a * wv.transpose();
    RowMat q = a * wq.transpose();

    RowMat att_o(1, d);
    const int n = st.len + 1;
    for (int h = 0; h < H; ++h) {
      auto Kh = kc.topRows(n).middleCols(h * hd, hd);
      auto Vh = vc.topRows(n).middleCols(h * hd, hd);
      Eigen::RowVectorXd s = (q.middleCols(h * hd, hd) * Kh.transpose()) * inv_sqrt;
      const double mx = s.maxCoeff();
      Eigen::RowVectorXd e = (s.array() - mx).exp();
      e /= e.sum();
      att_o.middleCols(h * hd, hd).noalias() = e * Vh;
    }
    x.noalias() += att_o * wo.transpose();

    RowMat b;
    layernorm_forward(x, MapMat(p + B.ln2_g, 1, d), MapMat(p + B.ln2_b, 1, d), b, xhat, rstd);
    MapMat w1(p + B.w1, m, d), w2(p + B.w2, d, m);
    RowMat u = b * w1.transpose();
    RowMat gact = u.unaryExpr([](double v) { return gelu(v); });
    x.noalias() += gact * w2.transpose();
  }

  RowMat h;
  layernorm_forward(x, MapMat(p + L.lnf_g, 1, d), MapMat(p + L.lnf_b, 1, d), h, xhat, rstd);
  MapMat head(p + L.head, cfg.vocab_size, d);
  Eigen::RowVectorXd logits = h * head.transpose();
  ++st.len;
  return logits;
}

}  // namespace

long long ModelConfig::param_count() const { return ParamLayout::build(*this).total; }

void ModelConfig::validate() const {
  if (vocab_size < 5) throw InvalidArgument("vocab_size must cover the four specials");
  if (context_len < 4) throw InvalidArgument("context_len too small");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0) {
    throw InvalidArgument("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw InvalidArgument("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
  }
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::f_R:
      return "f_R";
    case Provenance::f_0:
      return "f_0";
    case Provenance::f:
      return "f";
    case Provenance::f_prime:
      return "f_prime";
  }
  throw InvalidArgument("unknown provenance");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "f_R") return Provenance::f_R;
  if (s == "f_0") return Provenance::f_0;
  if (s == "f") return Provenance::f;
  if (s == "f_prime") return Provenance::f_prime;
  throw InvalidArgument("unknown provenance: " + s);
}

Checkpoint init_random(const ModelConfig& config) {
  config.validate();
  const ParamLayout L = ParamLayout::build(config);
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.provenance = Provenance::f_R;
  ckpt.params.assign(static_cast<size_t>(L.total), 0.0);

  Rng rng(derive_seed(config.seed, "model.init"));
  std::normal_distribution<double> dist(0.0, kInitStd);
  const double resid_std = kInitStd / std::sqrt(2.0 * config.n_layers);
  std::normal_distribution<double> resid_dist(0.0, resid_std);
  const int d = config.d_model, m = config.mlp_hidden();

  auto fill = [&](long long off, long long count, std::normal_distribution<double>& dd) {
    for (long long i = 0; i < count; ++i) ckpt.params[static_cast<size_t>(off + i)] = dd(rng);
  };
  auto ones = [&](long long off, long long count) {
    for (long long i = 0; i < count; ++i) ckpt.params[static_cast<size_t>(off + i)] = 1.0;
  };

  fill(L.wte, static_cast<long long>(config.vocab_size) * d, dist);
  fill(L.wpe, static_cast<long long>(config.context_len) * d, dist);
  for (const auto& b : L.blocks) {
    ones(b.ln1_g, d);
    fill(b.wq, static_cast<long long>(d) * d, dist);
    fill(b.wk, static_cast<long long>(d) * d, dist);
    fill(b.wv, static_cast<long long>(d) * d, dist);
    fill(b.wo, static_cast<long long>(d) * d, resid_dist);
    ones(b.ln2_g, d);
    fill(b.w1, static_cast<long long>(m) * d, dist);
    fill(b.w2, static_cast<long long>(d) * m, resid_dist);
  }
  ones(L.lnf_g, d);
  fill(L.head, static_cast<long long>(config.vocab_size) * d, dist);

  ckpt.lineage.push_back({"init_random", "seed=" + std::to_string(config.seed)});
  return ckpt;
}

std::vector<double> params_as_vector(const Checkpoint& ckpt) { return ckpt.params; }

Checkpoint vector_to_params(const ModelConfig& config, std::vector<double> params,
                            Provenance provenance) {
  config.validate();
  if (static_cast<long long>(params.size()) != config.param_count()) {
    throw InvalidArgument("parameter vector of length " + std::to_string(params.size()) +
                          " does not match config count " + std::to_string(config.param_count()));
  }
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.provenance = provenance;
  ckpt.params = std::move(params);
  return ckpt;
}

void validate_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  if (static_cast<long long>(ckpt.params.size()) != ckpt.config.param_count()) {
    throw InvalidArgument("checkpoint parameter count mismatch");
  }
  for (double v : ckpt.params) {
    if (!std::isfinite(v)) throw NumericalFailure("checkpoint contains non-finite parameters");
  }
}

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
  id_to_word_ = {"<pad>", "<bos>", "<eos>", "<sep>"};
  for (const auto& w : words) id_to_word_.push_back(w);
  sorted_words_.reserve(id_to_word_.size());
  for (size_t i = 0; i < id_to_word_.size(); ++i) {
    sorted_words_.emplace_back(id_to_word_[i], static_cast<int>(i));
  }
  std::sort(sorted_words_.begin(), sorted_words_.end());
  for (size_t i = 1; i < sorted_words_.size(); ++i) {
    if (sorted_words_[i].first == sorted_words_[i - 1].first) {
      throw InvalidArgument("duplicate vocab word: " + sorted_words_[i].first);
    }
  }
}

int Tokenizer::id(const std::string& word) const {
  auto it = std::lower_bound(sorted_words_.begin(), sorted_words_.end(),
                             std::make_pair(word, 0));
  if (it == sorted_words_.end() || it->first != word) {
    throw InvalidArgument("word not in vocab: " + word);
  }
  return it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  }
  return id_to_word_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Tokenizer::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) words.push_back(word(i));
  return words;
}

double sequence_loss(const Checkpoint& ckpt, const std::vector<int>& prompt,
                     const std::vector<int>& target) {
  Example ex{prompt, target};
  return lm_loss(ckpt.config, ckpt.params, std::span<const Example>(&ex, 1));
}

double lm_loss(const ModelConfig& cfg, std::span<const double> params,
               std::span<const Example> batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  double total = 0.0;
  long long n_pred = 0;
  Trace tr;
  for (const auto& ex : batch) {
    Packed pk = pack_example(cfg, ex.prompt, ex.target);
    forward_full(cfg, params, pk.tokens, tr);
    for (int j = 0; j < pk.n_pred; ++j) {
      const int pos = pk.first_pred + j;
      total += nll_row(tr.logits, pos, pk.tokens[static_cast<size_t>(pos + 1)]);
    }
    n_pred += pk.n_pred;
  }
  return total / static_cast<double>(n_pred);
}

double lm_loss_and_grad(const ModelConfig& cfg, std::span<const double> params,
                        std::span<const Example> batch, std::span<double> grad) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  long long n_pred = 0;
  for (const auto& ex : batch) n_pred += static_cast<long long>(ex.target.size()) + 1;
  const double scale = 1.0 / static_cast<double>(n_pred);

  double total = 0.0;
  Trace tr;
  for (const auto& ex : batch) {
    Packed pk = pack_example(cfg, ex.prompt, ex.target);
    forward_full(cfg, params, pk.tokens, tr);
    RowMat dlogits = RowMat::Zero(static_cast<Eigen::Index>(pk.tokens.size()), cfg.vocab_size);
    for (int j = 0; j < pk.n_pred; ++j) {
      const int pos = pk.first_pred + j;
      const int y = pk.tokens[static_cast<size_t>(pos + 1)];
      total += nll_row(tr.logits, pos, y);
      nll_grad_row(tr.logits, pos, y, scale, dlogits);
    }
    backward_full(cfg, params, pk.tokens, tr, dlogits, grad);
  }
  return total * scale;
}

double sequence_logprob(const ModelConfig& cfg, std::span<const double> params,
                        const std::vector<int>& prompt, const std::vector<int>& target) {
  Packed pk = pack_example(cfg, prompt, target);
  Trace tr;
  forward_full(cfg, params, pk.tokens, tr);
  double lp = 0.0;
  for (int j = 0; j < pk.n_pred; ++j) {
    const int pos = pk.first_pred + j;
    lp -= nll_row(tr.logits, pos, pk.tokens[static_cast<size_t>(pos + 1)]);
  }
  return lp;
}

double sequence_logprob_grad(const ModelConfig& cfg, std::span<const double> params,
                             const std::vector<int>& prompt, const std::vector<int>& target,
                             double weight, std::span<double> grad) {
  Packed pk = pack_example(cfg, prompt, target);
  Trace tr;
  forward_full(cfg, params, pk.tokens, tr);
  RowMat dlogits = RowMat::Zero(static_cast<Eigen::Index>(pk.tokens.size()), cfg.vocab_size);
  double lp = 0.0;
  for (int j = 0; j < pk.n_pred; ++j) {
    const int pos = pk.first_pred + j;
    const int y = pk.tokens[static_cast<size_t>(pos + 1)];
    lp -= nll_row(tr.logits, pos, y);
    // d(logprob)/dlogits = onehot - softmax, so the NLL direction negated
    nll_grad_row(tr.logits, pos, y, -weight, dlogits);
  }
  backward_full(cfg, params, pk.tokens, tr, dlogits, grad);
  return lp;
}

double dpo_loss(const Checkpoint& policy, const Checkpoint& reference,
                const std::vector<int>& prompt, const std::vector<int>& y_win,
                const std::vector<int>& y_lose, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
  if (!(policy.config == reference.config)) {
    throw InvalidArgument("policy and reference configs differ");
  }
  const double pw = sequence_logprob(policy.config, policy.params, prompt, y_win);
  const double pl = sequence_logprob(policy.config, policy.params, prompt, y_lose);
  const double rw = sequence_logprob(reference.config, reference.params, prompt, y_win);
  const double rl = sequence_logprob(reference.config, reference.params, prompt, y_lose);
  const double z = beta * ((pw - rw) - (pl - rl));
  // softplus(-z), stable in both tails
  return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

std::vector<int> generate(const Checkpoint& ckpt, const std::vector<int>& prompt,
                          const DecodeOptions& opts) {
  const auto& cfg = ckpt.config;
  if (prompt.empty()) throw InvalidArgument("prompt must be nonempty");
  if (static_cast<int>(prompt.size()) >= cfg.context_len) {
    throw InvalidArgument("prompt length " + std::to_string(prompt.size()) +
                          " must be below context_len " + std::to_string(cfg.context_len));
  }
  check_tokens(cfg, prompt);
  if (opts.max_len <= 0) return {};

  DecodeState st;
  Eigen::RowVectorXd logits;
  for (int t : prompt) logits = decode_append(cfg, ckpt.params, st, t);

  Rng rng(derive_seed(opts.seed, "model.sample"));
  std::vector<int> out;
  for (int i = 0; i < opts.max_len; ++i) {
    int next = 0;
    if (opts.greedy) {
      logits.maxCoeff(&next);
    } else {
      const double tau = opts.temperature > 0.0 ? opts.temperature : 1.0;
      Eigen::RowVectorXd scaled = logits / tau;
      const double mx = scaled.maxCoeff();
      Eigen::RowVectorXd probs = (scaled.array() - mx).exp();
      probs /= probs.sum();
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      double r = uni(rng), acc = 0.0;
      next = cfg.vocab_size - 1;
      for (int v = 0; v < cfg.vocab_size; ++v) {
        acc += probs(v);
        if (r <= acc) {
          next = v;
          break;
        }
      }
    }
    if (next == Tokenizer::kEos) break;
    out.push_back(next);
    if (st.len >= cfg.context_len) break;
    logits = decode_append(cfg, ckpt.params, st, next);
  }
  return out;
}

std::vector<int> make_prompt(const Tokenizer& tok, const std::vector<std::string>& query) {
  std::vector<int> ids;
  ids.reserve(query.size() + 2);
  ids.push_back(Tokenizer::kBos);
  for (const auto& w : query) ids.push_back(tok.id(w));
  ids.push_back(Tokenizer::kSep);
  return ids;
}

std::vector<double> next_token_logits(const Checkpoint& ckpt, const std::vector<int>& prefix) {
  if (prefix.empty()) throw InvalidArgument("prefix must be nonempty");
  check_tokens(ckpt.config, prefix);
  if (static_cast<int>(prefix.size()) > ckpt.config.context_len) {
    throw InvalidArgument("prefix exceeds context_len");
  }
  DecodeState st;
  Eigen::RowVectorXd logits;
  for (int t : prefix) logits = decode_append(ckpt.config, ckpt.params, st, t);
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

}  // namespace tulab
