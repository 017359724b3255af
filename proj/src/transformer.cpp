#include "boostformer/transformer.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace boostformer {

void TransformerConfig::validate() const {
  if (layers < 1) throw ConfigError("transformer layers must be >= 1");
  if (heads < 1) throw ConfigError("transformer heads must be >= 1");
  if (d_model < 1 || d_model % heads != 0)
    throw ConfigError("d_model must be a positive multiple of heads");
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (vocab_size <= kNumSpecialTokens) throw ConfigError("vocab_size must exceed the special tokens");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

ParameterLayout::ParameterLayout(const TransformerConfig& config) {
  const Eigen::Index d = config.d_model;
  const Eigen::Index f = config.d_ff;
  token_embedding = add("tok_emb.weight", config.vocab_size, d);
  position_embedding = add("pos_emb.weight", config.max_len, d);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer s{};
    s.q_w = add(p + "attn.q.weight", d, d);
    s.q_b = add(p + "attn.q.bias", 1, d);
    s.k_w = add(p + "attn.k.weight", d, d);
    s.k_b = add(p + "attn.k.bias", 1, d);
    s.v_w = add(p + "attn.v.weight", d, d);
    s.v_b = add(p + "attn.v.bias", 1, d);
    s.o_w = add(p + "attn.o.weight", d, d);
    s.o_b = add(p + "attn.o.bias", 1, d);
    s.ln1_g = add(p + "ln1.gamma", 1, d);
    s.ln1_b = add(p + "ln1.beta", 1, d);
    s.ff1_w = add(p + "ff1.weight", f, d);
    s.ff1_b = add(p + "ff1.bias", 1, f);
    s.ff2_w = add(p + "ff2.weight", d, f);
    s.ff2_b = add(p + "ff2.bias", 1, d);
    s.ln2_g = add(p + "ln2.gamma", 1, d);
    s.ln2_b = add(p + "ln2.beta", 1, d);
    layer.push_back(s);
  }
  head_w = add("head.weight", config.num_classes, d);
  head_b = add("head.bias", 1, config.num_classes);
}

std::size_t ParameterLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  slots_.push_back(TensorSlot{std::move(name), rows, cols, total_});
  total_ += rows * cols;
  return slots_.size() - 1;
}

const TensorSlot& ParameterLayout::slot(std::string_view name) const {
  for (const auto& s : slots_)
    if (s.name == name) return s;
  throw std::out_of_range("unknown tensor " + std::string(name));
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Matrix, typename Vector>
Matrix layer_norm(const Matrix& x, Vector& rstd) {
  using Scalar = typename Matrix::Scalar;
  const Eigen::Index d = x.cols();
  Matrix xhat(x.rows(), d);
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> centered = (x.row(r).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(d);
    rstd[r] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat.row(r) = centered * rstd[r];
  }
  return xhat;
}

// d(loss)/dx given d(loss)/dxhat for a row-wise normalization.
template <typename Matrix, typename Vector>
Matrix layer_norm_backward(const Matrix& dxhat, const Matrix& xhat, const Vector& rstd) {
  Matrix dx(dxhat.rows(), dxhat.cols());
  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
    const auto mean_d = dxhat.row(r).mean();
    const auto mean_dx = dxhat.row(r).dot(xhat.row(r)) / static_cast<decltype(mean_d)>(dxhat.cols());
    dx.row(r) = rstd[r] * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * static_cast<Scalar>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename Matrix>
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  using Scalar = typename Matrix::Scalar;
  Matrix mask(rows, cols);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = uniform01(rng) < rate ? Scalar(0) : keep_scale;
  return mask;
}

}  // namespace

template <typename Scalar>
Transformer<Scalar>::Transformer(const TransformerConfig& config, std::uint64_t seed)
    : config_(config), layout_(std::make_shared<const ParameterLayout>(config)) {
  config_.validate();
  params_ = Vector::Zero(layout_->total_size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto fill_normal = [&](std::size_t slot, double stddev) {
    MatrixMap m = view(params_, slot);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * normal(rng));
  };
  auto fill_xavier = [&](std::size_t slot) {
    MatrixMap m = view(params_, slot);
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<Scalar>(bound * (2.0 * uniform01(rng) - 1.0));
  };
  auto fill_ones = [&](std::size_t slot) { view(params_, slot).setOnes(); };

  fill_normal(layout_->token_embedding, 1.0);
  fill_normal(layout_->position_embedding, 0.5);
  for (const auto& l : layout_->layer) {
    for (std::size_t w : {l.q_w, l.k_w, l.v_w, l.o_w, l.ff1_w, l.ff2_w}) fill_xavier(w);
    fill_ones(l.ln1_g);
    fill_ones(l.ln2_g);
  }
  if (!config_.zero_head) fill_xavier(layout_->head_w);
}

template <typename Scalar>
Transformer<Scalar> Transformer<Scalar>::init_from(const Transformer& previous,
                                                   const TransformerConfig& config) {
  if (!(previous.config_ == config))
    throw std::domain_error("init_from: transformer configuration mismatch");
  return Transformer(previous);
}

template <typename Scalar>
typename Transformer<Scalar>::MatrixMap Transformer<Scalar>::view(Vector& buffer,
                                                                  std::size_t slot) const {
  const TensorSlot& s = layout_->slot(slot);
  return MatrixMap(buffer.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
typename Transformer<Scalar>::ConstMatrixMap Transformer<Scalar>::view(const Vector& buffer,
                                                                       std::size_t slot) const {
  const TensorSlot& s = layout_->slot(slot);
  return ConstMatrixMap(buffer.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
typename Transformer<Scalar>::MatrixMap Transformer<Scalar>::tensor(std::string_view name) {
  const TensorSlot& s = layout_->slot(name);
  return MatrixMap(params_.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
typename Transformer<Scalar>::ConstMatrixMap Transformer<Scalar>::tensor(
    std::string_view name) const {
  const TensorSlot& s = layout_->slot(name);
  return ConstMatrixMap(params_.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
void Transformer<Scalar>::check_input(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw std::domain_error("empty token sequence");
  if (static_cast<int>(tokens.size()) > config_.max_len)
    throw std::domain_error("sequence length " + std::to_string(tokens.size()) +
                            " exceeds max_len " + std::to_string(config_.max_len));
  if (tokens[0] != kClsToken) throw std::domain_error("position 0 must hold the classification token");
  for (TokenId t : tokens)
    if (t < 0 || t >= config_.vocab_size)
      throw std::domain_error("token id " + std::to_string(t) + " outside the vocabulary");
}

template <typename Scalar>
Eigen::VectorXd Transformer<Scalar>::predict(std::span<const TokenId> tokens) const {
  return run(tokens, nullptr, nullptr, nullptr);
}

template <typename Scalar>
std::pair<Eigen::VectorXd, AttentionRecord> Transformer<Scalar>::forward(
    std::span<const TokenId> tokens) const {
  AttentionRecord record;
  Eigen::VectorXd logits = run(tokens, nullptr, &record, nullptr);
  return {std::move(logits), std::move(record)};
}

template <typename Scalar>
Eigen::VectorXd Transformer<Scalar>::forward_train(std::span<const TokenId> tokens, Cache& cache,
                                                   std::mt19937_64* dropout_rng) const {
  return run(tokens, &cache, nullptr, dropout_rng);
}

template <typename Scalar>
Eigen::VectorXd Transformer<Scalar>::run(std::span<const TokenId> tokens, Cache* cache,
                                         AttentionRecord* record,
                                         std::mt19937_64* dropout_rng) const {
  check_input(tokens);
  const Eigen::Index s = static_cast<Eigen::Index>(tokens.size());
  const int d = config_.d_model;
  const int heads = config_.heads;
  const int dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const bool use_dropout = dropout_rng != nullptr && config_.dropout > 0.0;
  const ParameterLayout& L = *layout_;

  std::vector<bool> source_valid(tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) source_valid[j] = tokens[j] != kPadToken;

  const ConstMatrixMap tok = view(params_, L.token_embedding);
  const ConstMatrixMap pos = view(params_, L.position_embedding);
  Matrix x(s, d);
  for (Eigen::Index i = 0; i < s; ++i) x.row(i) = tok.row(tokens[i]) + pos.row(i);

  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.clear();
    cache->embed_mask.resize(0, 0);
  }
  if (use_dropout) {
    Matrix mask = dropout_mask<Matrix>(s, d, config_.dropout, *dropout_rng);
    x.array() *= mask.array();
    if (cache) cache->embed_mask = std::move(mask);
  }
  if (record) record->layers.clear();

  for (std::size_t li = 0; li < L.layer.size(); ++li) {
    const auto& ls = L.layer[li];
    // The head reads only position 0, so the last layer needs no other query
    // rows unless the full attention pattern is being recorded.
    const Eigen::Index nq = (li + 1 == L.layer.size() && !record) ? 1 : s;
    LayerCache c;
    c.x_in = x;
    c.q = (x.topRows(nq) * view(params_, ls.q_w).transpose()).rowwise() + view(params_, ls.q_b).row(0);
    c.k = (x * view(params_, ls.k_w).transpose()).rowwise() + view(params_, ls.k_b).row(0);
    c.v = (x * view(params_, ls.v_w).transpose()).rowwise() + view(params_, ls.v_b).row(0);
    c.ctx.resize(nq, d);
    c.probs.resize(heads);
    Eigen::MatrixXd averaged;
    if (record) averaged = Eigen::MatrixXd::Zero(s, s);
    for (int h = 0; h < heads; ++h) {
      Matrix scores = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index r = 0; r < nq; ++r) {
        Scalar row_max = -std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index j = 0; j < s; ++j)
          if (source_valid[j]) row_max = std::max(row_max, scores(r, j));
        Scalar total = 0;
        for (Eigen::Index j = 0; j < s; ++j) {
          const Scalar e = source_valid[j] ? std::exp(scores(r, j) - row_max) : Scalar(0);
          scores(r, j) = e;
          total += e;
        }
        scores.row(r) /= total;
      }
      c.ctx.middleCols(h * dh, dh) = scores * c.v.middleCols(h * dh, dh);
      if (record) averaged += scores.template cast<double>();
      c.probs[h] = std::move(scores);
    }
    if (record) record->layers.push_back(averaged / static_cast<double>(heads));

    Matrix attn = (c.ctx * view(params_, ls.o_w).transpose()).rowwise() + view(params_, ls.o_b).row(0);
    if (use_dropout) {
      c.attn_mask = dropout_mask<Matrix>(nq, d, config_.dropout, *dropout_rng);
      attn.array() *= c.attn_mask.array();
    }
    c.xhat1 = layer_norm(Matrix(x.topRows(nq) + attn), c.rstd1);
    c.y1 = (c.xhat1.array().rowwise() * view(params_, ls.ln1_g).row(0).array()).matrix().rowwise() +
           view(params_, ls.ln1_b).row(0);

    c.h_pre = (c.y1 * view(params_, ls.ff1_w).transpose()).rowwise() + view(params_, ls.ff1_b).row(0);
    c.h_act = c.h_pre.unaryExpr([](Scalar v) { return gelu(v); });
    Matrix ff = (c.h_act * view(params_, ls.ff2_w).transpose()).rowwise() + view(params_, ls.ff2_b).row(0);
    if (use_dropout) {
      c.ff_mask = dropout_mask<Matrix>(nq, d, config_.dropout, *dropout_rng);
      ff.array() *= c.ff_mask.array();
    }
    c.xhat2 = layer_norm(Matrix(c.y1 + ff), c.rstd2);
    x = (c.xhat2.array().rowwise() * view(params_, ls.ln2_g).row(0).array()).matrix().rowwise() +
        view(params_, ls.ln2_b).row(0);
    if (cache) cache->layers.push_back(std::move(c));
  }

  const RowVector cls = x.row(0);
  const Vector out = view(params_, L.head_w) * cls.transpose() + view(params_, L.head_b).row(0).transpose();
  if (cache) cache->cls_hidden = cls;
  Eigen::VectorXd logits = out.template cast<double>();
  if (!logits.allFinite()) throw NumericError("non-finite transformer output");
  return logits;
}

template <typename Scalar>
void Transformer<Scalar>::backward(const Cache& cache, const Eigen::VectorXd& dlogits,
                                   Vector& grad) const {
  const ParameterLayout& L = *layout_;
  if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
  const Eigen::Index s = static_cast<Eigen::Index>(cache.tokens.size());
  const int d = config_.d_model;
  const int heads = config_.heads;
  const int dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  const Vector dout = dlogits.template cast<Scalar>();
  view(grad, L.head_w) += dout * cache.cls_hidden;
  view(grad, L.head_b).row(0) += dout.transpose();
  Matrix dy = Matrix::Zero(cache.layers.back().q.rows(), d);
  dy.row(0) = (view(params_, L.head_w).transpose() * dout).transpose();

  for (std::size_t li = L.layer.size(); li-- > 0;) {
    const auto& ls = L.layer[li];
    const LayerCache& c = cache.layers[li];
    const Eigen::Index nq = c.q.rows();

    // Second sublayer: y2 = LN(y1 + dropout(FF(y1))).
    view(grad, ls.ln2_g).row(0) += dy.cwiseProduct(c.xhat2).colwise().sum();
    view(grad, ls.ln2_b).row(0) += dy.colwise().sum();
    const Matrix dr2 = layer_norm_backward(
        Matrix(dy.array().rowwise() * view(params_, ls.ln2_g).row(0).array()), c.xhat2, c.rstd2);
    Matrix dy1 = dr2;
    Matrix dff = dr2;
    if (c.ff_mask.size() > 0) dff.array() *= c.ff_mask.array();
    view(grad, ls.ff2_w) += dff.transpose() * c.h_act;
    view(grad, ls.ff2_b).row(0) += dff.colwise().sum();
    Matrix dhid = dff * view(params_, ls.ff2_w);
    for (Eigen::Index i = 0; i < dhid.size(); ++i) dhid.data()[i] *= gelu_grad(c.h_pre.data()[i]);
    view(grad, ls.ff1_w) += dhid.transpose() * c.y1;
    view(grad, ls.ff1_b).row(0) += dhid.colwise().sum();
    dy1 += dhid * view(params_, ls.ff1_w);

    // First sublayer: y1 = LN(x + dropout(Attn(x))).
    view(grad, ls.ln1_g).row(0) += dy1.cwiseProduct(c.xhat1).colwise().sum();
    view(grad, ls.ln1_b).row(0) += dy1.colwise().sum();
    const Matrix dr1 = layer_norm_backward(
        Matrix(dy1.array().rowwise() * view(params_, ls.ln1_g).row(0).array()), c.xhat1, c.rstd1);
    Matrix dx = Matrix::Zero(s, d);
    dx.topRows(nq) = dr1;
    Matrix dattn = dr1;
    if (c.attn_mask.size() > 0) dattn.array() *= c.attn_mask.array();
    view(grad, ls.o_w) += dattn.transpose() * c.ctx;
    view(grad, ls.o_b).row(0) += dattn.colwise().sum();
    const Matrix dctx = dattn * view(params_, ls.o_w);

    Matrix dq(nq, d), dk(s, d), dv(s, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = c.probs[h];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Matrix dp = dctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dctx_h;
      const Vector row_dot = dp.cwiseProduct(p).rowwise().sum();
      const Matrix dscores = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(h * dh, dh) = dscores * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dscores.transpose() * c.q.middleCols(h * dh, dh);
    }
    view(grad, ls.q_w) += dq.transpose() * c.x_in.topRows(nq);
    view(grad, ls.q_b).row(0) += dq.colwise().sum();
    view(grad, ls.k_w) += dk.transpose() * c.x_in;
    view(grad, ls.k_b).row(0) += dk.colwise().sum();
    view(grad, ls.v_w) += dv.transpose() * c.x_in;
    view(grad, ls.v_b).row(0) += dv.colwise().sum();
    dx.topRows(nq) += dq * view(params_, ls.q_w);
    dx += dk * view(params_, ls.k_w) + dv * view(params_, ls.v_w);
    dy = std::move(dx);
  }

  if (cache.embed_mask.size() > 0) dy.array() *= cache.embed_mask.array();
  MatrixMap gtok = view(grad, L.token_embedding);
  MatrixMap gpos = view(grad, L.position_embedding);
  for (Eigen::Index i = 0; i < s; ++i) {
    gtok.row(cache.tokens[i]) += dy.row(i);
    gpos.row(i) += dy.row(i);
  }
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace boostformer
