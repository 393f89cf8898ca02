#include "trajcast/net.hpp"

#include <cmath>

namespace trajcast {

using nlohmann::json;

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  auto linear = [&](const std::string& name, auto& l) {
    fn(name + ".weight", l.weight);
    fn(name + ".bias", l.bias);
  };
  auto norm = [&](const std::string& name, auto& n) {
    fn(name + ".gamma", n.gamma);
    fn(name + ".beta", n.beta);
  };
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& layer = p.layers[i];
    const std::string pre = "encoder." + std::to_string(i) + ".";
    linear(pre + "attn.query", layer.query);
    linear(pre + "attn.key", layer.key);
    linear(pre + "attn.value", layer.value);
    linear(pre + "attn.output", layer.output);
    norm(pre + "norm1", layer.norm1);
    linear(pre + "ff1", layer.ff1);
    linear(pre + "ff2", layer.ff2);
    norm(pre + "norm2", layer.norm2);
  }
  for (std::size_t j = 0; j < p.fc.size(); ++j) linear("fc." + std::to_string(j), p.fc[j]);
  linear("latent", p.latent);
  linear("decoder", p.decoder);
}

Linear make_linear(int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Linear l{Matrix(out, in), Matrix(1, out)};
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = u(rng);
  return l;
}

LayerNorm make_norm(int dim) { return {Matrix::Ones(1, dim), Matrix::Zero(1, dim)}; }

Matrix linear_forward(const Matrix& x, const Linear& l) {
  Matrix y = x * l.weight.transpose();
  y.rowwise() += l.bias.row(0);
  return y;
}

/// Accumulates parameter gradients; writes the input gradient when `dx` is set.
void linear_backward(const Matrix& x, const Matrix& dy, const Linear& l, Linear& grad,
                     Matrix* dx) {
  grad.weight.noalias() += dy.transpose() * x;
  grad.bias += dy.colwise().sum();
  if (dx) *dx = dy * l.weight;
}

struct NormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

Matrix layer_norm_forward(const Matrix& x, const LayerNorm& n, NormCache& cache) {
  const Eigen::Index rows = x.rows();
  const double d = static_cast<double>(x.cols());
  cache.xhat.resize(rows, x.cols());
  cache.inv_std.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).sum() / d;
    const auto centered = (x.row(r).array() - mean).eval();
    const double var = centered.square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = centered * inv;
  }
  Matrix y = cache.xhat.array().rowwise() * n.gamma.row(0).array();
  y.rowwise() += n.beta.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNorm& n, const NormCache& cache,
                           LayerNorm& grad) {
  grad.gamma += dy.cwiseProduct(cache.xhat).colwise().sum();
  grad.beta += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * n.gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_dxhat = dxhat.row(r).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(r).dot(cache.xhat.row(r)) / d;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat)
                    .matrix();
  }
  return dx;
}

/// Inverted dropout mask (entries 0 or 1/(1-rate)); empty when dropout is off.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, const DropoutContext& ctx) {
  if (!ctx.active()) return {};
  std::bernoulli_distribution keep(1.0 - ctx.rate);
  const double scale = 1.0 / (1.0 - ctx.rate);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*ctx.rng) ? scale : 0.0;
  return m;
}

void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

void check_positive(int v, const char* field) {
  if (v <= 0) throw ConfigError(std::string("net config field '") + field + "' must be positive");
}

}  // namespace

struct LayerCache {
  Matrix x, q, k, v;
  std::vector<Matrix> probs, prob_masks;
  Matrix attn;
  Matrix drop1;
  NormCache norm1;
  Matrix h1;
  Matrix f1;
  Matrix drop_ff;
  Matrix f1_out;
  Matrix drop2;
  NormCache norm2;
};

struct ForwardCache {
  int batch = 0;
  std::vector<LayerCache> layers;
  Matrix z0;
  std::array<Matrix, 3> fc_pre, fc_act;
};

std::string_view to_string(Aggregation a) { return a == Aggregation::flatten ? "flatten" : "mean_pool"; }

Aggregation parse_aggregation(std::string_view text) {
  if (text == "flatten") return Aggregation::flatten;
  if (text == "mean_pool") return Aggregation::mean_pool;
  throw ConfigError("net config field 'aggregation' must be flatten or mean_pool, got '" +
                    std::string(text) + "'");
}

void NetConfig::validate() const {
  check_positive(seq_len, "seq_len");
  if (n_classes != kNumClasses) throw ConfigError("net config field 'n_classes' must be 16");
  check_positive(n_layers, "n_layers");
  check_positive(n_heads, "n_heads");
  check_positive(ff_dim, "ff_dim");
  for (int d : fc_dims) check_positive(d, "fc_dims");
  check_positive(horizon, "horizon");
  if (token_dim() % n_heads != 0) {
    throw ConfigError("net config field 'n_heads' must divide the token dimension 80");
  }
  if (latent_dim != 16) throw ConfigError("net config field 'latent_dim' must be 16");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("net config field 'dropout' must be in [0, 1)");
  }
}

json to_json(const NetConfig& c) {
  return json{{"seq_len", c.seq_len},     {"n_classes", c.n_classes},
              {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
              {"ff_dim", c.ff_dim},       {"fc_dims", c.fc_dims},
              {"latent_dim", c.latent_dim}, {"horizon", c.horizon},
              {"dropout", c.dropout},     {"aggregation", std::string(to_string(c.aggregation))}};
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  try {
    c.seq_len = j.value("seq_len", c.seq_len);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    if (j.contains("fc_dims")) {
      const auto dims = j.at("fc_dims").get<std::vector<int>>();
      if (dims.size() != 3) throw ConfigError("net config field 'fc_dims' needs 3 entries");
      std::copy(dims.begin(), dims.end(), c.fc_dims.begin());
    }
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.horizon = j.value("horizon", c.horizon);
    c.dropout = j.value("dropout", c.dropout);
    c.aggregation = parse_aggregation(j.value("aggregation", std::string("flatten")));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad net config: ") + e.what());
  }
  c.validate();
  return c;
}

void ForecasterParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit_params(*this, fn);
}

void ForecasterParams::for_each(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t ForecasterParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ForecasterParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

ForecasterParams ForecasterParams::zeros_like() const {
  ForecasterParams z = *this;
  z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

ForecasterParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg.token_dim();
  ForecasterParams p;
  p.config = cfg;
  for (int i = 0; i < cfg.n_layers; ++i) {
    EncoderLayer layer;
    layer.query = make_linear(d, d, rng);
    layer.key = make_linear(d, d, rng);
    layer.value = make_linear(d, d, rng);
    layer.output = make_linear(d, d, rng);
    layer.norm1 = make_norm(d);
    layer.ff1 = make_linear(d, cfg.ff_dim, rng);
    layer.ff2 = make_linear(cfg.ff_dim, d, rng);
    layer.norm2 = make_norm(d);
    p.layers.push_back(std::move(layer));
  }
  int in = cfg.fc_input_dim();
  for (std::size_t j = 0; j < p.fc.size(); ++j) {
    p.fc[j] = make_linear(in, cfg.fc_dims[j], rng);
    in = cfg.fc_dims[j];
  }
  p.latent = make_linear(in, cfg.latent_dim, rng);
  p.decoder = make_linear(cfg.latent_dim, cfg.output_dim(), rng);
  return p;
}

Matrix positional_encoding(int length, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("positional encoding dimension must be even, got " + std::to_string(dim));
  }
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double angle = pos / std::pow(10000.0, (2.0 * i) / dim);
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Matrix stack_tokens(const std::vector<const DetectionWindow*>& windows, int seq_len,
                    bool use_anatomy) {
  Matrix tokens(static_cast<Eigen::Index>(windows.size()) * seq_len, kTokenDim);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const DetectionWindow& w = *windows[b];
    if (w.length() != seq_len) {
      throw ShapeError("window has " + std::to_string(w.length()) + " frames, model expects " +
                       std::to_string(seq_len));
    }
    for (int i = 0; i < seq_len; ++i) {
      w.frame(i).write_token(tokens.row(static_cast<Eigen::Index>(b) * seq_len + i).data());
    }
  }
  if (!use_anatomy) tokens.leftCols(kNumAnatomyClasses * kRowWidth).setZero();
  return tokens;
}

namespace {

Matrix encoder_layer_forward(const Matrix& x, const EncoderLayer& p, const NetConfig& cfg,
                             int batch, const DropoutContext& drop, LayerCache& c) {
  const int s = cfg.seq_len;
  const int heads = cfg.n_heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  c.x = x;
  c.q = linear_forward(x, p.query);
  c.k = linear_forward(x, p.key);
  c.v = linear_forward(x, p.value);
  c.attn.resize(x.rows(), x.cols());
  c.probs.resize(static_cast<std::size_t>(batch) * heads);
  c.prob_masks.resize(c.probs.size());
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qh = c.q.block(b * s, h * dh, s, dh);
      const auto kh = c.k.block(b * s, h * dh, s, dh);
      const auto vh = c.v.block(b * s, h * dh, s, dh);
      Matrix scores = (qh * kh.transpose()) * scale;
      for (int r = 0; r < s; ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      const std::size_t idx = static_cast<std::size_t>(b) * heads + h;
      Matrix mask = dropout_mask(s, s, drop);
      if (mask.size() != 0) {
        c.attn.block(b * s, h * dh, s, dh).noalias() = scores.cwiseProduct(mask) * vh;
      } else {
        c.attn.block(b * s, h * dh, s, dh).noalias() = scores * vh;
      }
      c.probs[idx] = std::move(scores);
      c.prob_masks[idx] = std::move(mask);
    }
  }

  Matrix y = linear_forward(c.attn, p.output);
  c.drop1 = dropout_mask(y.rows(), y.cols(), drop);
  apply_mask(y, c.drop1);
  c.h1 = layer_norm_forward(x + y, p.norm1, c.norm1);

  c.f1 = linear_forward(c.h1, p.ff1);
  c.f1_out = c.f1.cwiseMax(0.0);
  c.drop_ff = dropout_mask(c.f1_out.rows(), c.f1_out.cols(), drop);
  apply_mask(c.f1_out, c.drop_ff);
  Matrix f2 = linear_forward(c.f1_out, p.ff2);
  c.drop2 = dropout_mask(f2.rows(), f2.cols(), drop);
  apply_mask(f2, c.drop2);
  return layer_norm_forward(c.h1 + f2, p.norm2, c.norm2);
}

Matrix encoder_layer_backward(const Matrix& d_out, const EncoderLayer& p, const NetConfig& cfg,
                              int batch, const LayerCache& c, EncoderLayer& g) {
  const int s = cfg.seq_len;
  const int heads = cfg.n_heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix d_r2 = layer_norm_backward(d_out, p.norm2, c.norm2, g.norm2);
  Matrix d_f2 = d_r2;
  apply_mask(d_f2, c.drop2);
  Matrix d_f1;
  linear_backward(c.f1_out, d_f2, p.ff2, g.ff2, &d_f1);
  apply_mask(d_f1, c.drop_ff);
  d_f1.array() *= (c.f1.array() > 0.0).cast<double>();
  Matrix d_h1;
  linear_backward(c.h1, d_f1, p.ff1, g.ff1, &d_h1);
  d_h1 += d_r2;

  const Matrix d_r1 = layer_norm_backward(d_h1, p.norm1, c.norm1, g.norm1);
  Matrix d_y = d_r1;
  apply_mask(d_y, c.drop1);
  Matrix d_attn;
  linear_backward(c.attn, d_y, p.output, g.output, &d_attn);

  Matrix d_q(c.q.rows(), c.q.cols());
  Matrix d_k(c.k.rows(), c.k.cols());
  Matrix d_v(c.v.rows(), c.v.cols());
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const std::size_t idx = static_cast<std::size_t>(b) * heads + h;
      const Matrix& probs = c.probs[idx];
      const Matrix& mask = c.prob_masks[idx];
      const auto qh = c.q.block(b * s, h * dh, s, dh);
      const auto kh = c.k.block(b * s, h * dh, s, dh);
      const auto vh = c.v.block(b * s, h * dh, s, dh);
      const auto d_oh = d_attn.block(b * s, h * dh, s, dh);

      Matrix d_probs = d_oh * vh.transpose();
      if (mask.size() != 0) {
        d_v.block(b * s, h * dh, s, dh).noalias() = probs.cwiseProduct(mask).transpose() * d_oh;
        d_probs.array() *= mask.array();
      } else {
        d_v.block(b * s, h * dh, s, dh).noalias() = probs.transpose() * d_oh;
      }
      // Softmax backward, row by row: dS = P * (dP - <dP, P>).
      const Eigen::VectorXd inner = d_probs.cwiseProduct(probs).rowwise().sum();
      Matrix d_scores = (d_probs.colwise() - inner).cwiseProduct(probs) * scale;
      d_q.block(b * s, h * dh, s, dh).noalias() = d_scores * kh;
      d_k.block(b * s, h * dh, s, dh).noalias() = d_scores.transpose() * qh;
    }
  }

  Matrix d_x = d_r1;
  Matrix tmp;
  linear_backward(c.x, d_q, p.query, g.query, &tmp);
  d_x += tmp;
  linear_backward(c.x, d_k, p.key, g.key, &tmp);
  d_x += tmp;
  linear_backward(c.x, d_v, p.value, g.value, &tmp);
  d_x += tmp;
  return d_x;
}

}  // namespace

BatchOutput forward_batch(const ForecasterParams& params, const Matrix& tokens,
                          const DropoutContext& dropout, bool keep_cache) {
  const NetConfig& cfg = params.config;
  const int s = cfg.seq_len;
  const int d = cfg.token_dim();
  if (tokens.cols() != d || tokens.rows() == 0 || tokens.rows() % s != 0) {
    throw ShapeError("token matrix must be (B*" + std::to_string(s) + ") x " + std::to_string(d));
  }
  if (!tokens.allFinite()) throw InputError("input window contains non-finite values");
  if (tokens.minCoeff() < 0.0 || tokens.maxCoeff() > 1.0) {
    throw InputError("input window values must lie in [0, 1]");
  }
  const int batch = static_cast<int>(tokens.rows() / s);

  auto cache = std::make_shared<ForwardCache>();
  cache->batch = batch;
  cache->layers.resize(params.layers.size());

  const Matrix pe = positional_encoding(s, d);
  Matrix x = tokens;
  for (int b = 0; b < batch; ++b) x.middleRows(b * s, s) += pe;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = encoder_layer_forward(x, params.layers[i], cfg, batch, dropout, cache->layers[i]);
  }

  if (cfg.aggregation == Aggregation::flatten) {
    cache->z0 = Eigen::Map<const Matrix>(x.data(), batch, static_cast<Eigen::Index>(s) * d);
  } else {
    cache->z0.resize(batch, d);
    for (int b = 0; b < batch; ++b) cache->z0.row(b) = x.middleRows(b * s, s).colwise().mean();
  }

  const Matrix* a = &cache->z0;
  for (std::size_t j = 0; j < params.fc.size(); ++j) {
    cache->fc_pre[j] = linear_forward(*a, params.fc[j]);
    cache->fc_act[j] = cache->fc_pre[j].cwiseMax(0.0);
    a = &cache->fc_act[j];
  }
  BatchOutput out;
  out.latents = linear_forward(*a, params.latent);
  out.outputs = linear_forward(out.latents, params.decoder);
  if (keep_cache) out.cache = std::move(cache);
  return out;
}

ForecasterParams backward_batch(const ForecasterParams& params, const BatchOutput& fwd,
                                const Matrix& upstream) {
  if (!fwd.cache) throw ConfigError("backward needs a forward pass run with keep_cache");
  const ForwardCache& c = *fwd.cache;
  const NetConfig& cfg = params.config;
  if (upstream.rows() != c.batch || upstream.cols() != cfg.output_dim()) {
    throw ShapeError("upstream gradient must be B x " + std::to_string(cfg.output_dim()));
  }
  const int s = cfg.seq_len;
  const int d = cfg.token_dim();

  ForecasterParams g = params.zeros_like();
  Matrix d_latent;
  linear_backward(fwd.latents, upstream, params.decoder, g.decoder, &d_latent);
  Matrix d_act;
  linear_backward(c.fc_act.back(), d_latent, params.latent, g.latent, &d_act);
  for (int j = static_cast<int>(params.fc.size()) - 1; j >= 0; --j) {
    d_act.array() *= (c.fc_pre[j].array() > 0.0).cast<double>();
    const Matrix& input = j == 0 ? c.z0 : c.fc_act[j - 1];
    Matrix d_in;
    linear_backward(input, d_act, params.fc[j], g.fc[j], &d_in);
    d_act = std::move(d_in);
  }

  Matrix d_x(static_cast<Eigen::Index>(c.batch) * s, d);
  if (cfg.aggregation == Aggregation::flatten) {
    d_x = Eigen::Map<const Matrix>(d_act.data(), d_x.rows(), d);
  } else {
    for (int b = 0; b < c.batch; ++b) {
      d_x.middleRows(b * s, s).rowwise() = d_act.row(b) / static_cast<double>(s);
    }
  }
  for (int i = static_cast<int>(params.layers.size()) - 1; i >= 0; --i) {
    d_x = encoder_layer_backward(d_x, params.layers[i], cfg, c.batch, c.layers[i], g.layers[i]);
  }
  return g;
}

DeltaTrajectory output_row_to_deltas(const Matrix& outputs, int row, int horizon) {
  return DeltaTrajectory(Eigen::Map<const Matrix>(outputs.row(row).data(), horizon, 4));
}

Prediction forward_masked(const ForecasterParams& params, const DetectionWindow& window,
                          bool use_anatomy) {
  const Matrix tokens = stack_tokens({&window}, params.config.seq_len, use_anatomy);
  const BatchOutput out = forward_batch(params, tokens);
  return {output_row_to_deltas(out.outputs, 0, params.config.horizon), out.latents.row(0).transpose()};
}

Prediction forward(const ForecasterParams& params, const DetectionWindow& window) {
  return forward_masked(params, window, true);
}

ForecasterParams backward(const ForecasterParams& params, const DetectionWindow& window,
                          const Matrix& upstream, bool use_anatomy) {
  const int f = params.config.horizon;
  if (upstream.rows() != f || upstream.cols() != 4) {
    throw ShapeError("upstream gradient must be " + std::to_string(f) + " x 4");
  }
  const Matrix tokens = stack_tokens({&window}, params.config.seq_len, use_anatomy);
  const BatchOutput out = forward_batch(params, tokens, {}, true);
  const Matrix flat = Eigen::Map<const Matrix>(upstream.data(), 1, f * 4);
  return backward_batch(params, out, flat);
}

}  // namespace trajcast
