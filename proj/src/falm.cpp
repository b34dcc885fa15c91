#include "interloc/falm.hpp"

#include <cmath>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"

namespace interloc::falm {

using tensor::Tensor;
using tensor::Var;

void FalmConfig::validate() const {
  if (input_dim == 0 || d_model == 0) throw ConfigError("falm widths must be positive");
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("falm d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  if (lambda < 0 || lambda_t < 0 || lambda_c < 0 || lambda_n < 0)
    throw ConfigError("falm loss weights must be non-negative");
}

Matrix build_reference_embedding(const EpisodeRecord& ep, const Span& ref) {
  const auto clips = clips_in_span_checked(ref, ep.clip_count);
  const std::size_t d = ep.features.cols();
  Matrix out(3, d);
  std::vector<double> mean(d, 0.0);
  for (auto c : clips)
    for (std::size_t j = 0; j < d; ++j) mean[j] += ep.features(c, j);
  for (std::size_t j = 0; j < d; ++j) {
    out(0, j) = ep.features(clips.front(), j);
    out(1, j) = ep.features(clips.back(), j);
    out(2, j) = static_cast<float>(mean[j] / static_cast<double>(clips.size()));
  }
  return out;
}

std::vector<double> reference_positions(const Span& ref, std::size_t clip_count) {
  const auto clips = clips_in_span_checked(ref, clip_count);
  const double first = static_cast<double>(clips.front());
  const double last = static_cast<double>(clips.back());
  return {first, last, 0.5 * (first + last)};
}

template <typename T>
AlignmentModel<T>::AlignmentModel(const FalmConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg.seed, {hash_string("falm")}));
  const auto d = cfg.d_model;
  proj_ = nn::Linear<T>(store_, "falm.proj", cfg.input_dim, d, rng);
  auto type_init = [&](const std::string& name) {
    Tensor<T> t(1, d);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, 0.02));
    return store_.add(name, std::move(t));
  };
  type_q_ = type_init("falm.type_q");
  type_f_ = type_init("falm.type_f");
  type_r_ = type_init("falm.type_r");
  for (std::size_t i = 0; i < cfg.t_q_layers; ++i)
    t_q_.emplace_back(store_, "falm.tq" + std::to_string(i), d, cfg.heads, cfg.ffn_hidden, rng);
  for (std::size_t i = 0; i < cfg.t_v_layers; ++i)
    t_v_.emplace_back(store_, "falm.tv" + std::to_string(i), d, cfg.heads, cfg.ffn_hidden, rng);
  for (std::size_t i = 0; i < cfg.t_m_layers; ++i)
    t_m_.emplace_back(store_, "falm.tm" + std::to_string(i), d, cfg.heads, cfg.ffn_hidden, rng);
  final_ln_ = nn::LayerNorm<T>(store_, "falm.ln", d);
  head_p_ = nn::SigmoidHead<T>(store_, "falm.head_p", d, cfg.head_hidden, rng);
  head_c_ = nn::SigmoidHead<T>(store_, "falm.head_c", d, cfg.head_hidden, rng);
  head_k_ = nn::SigmoidHead<T>(store_, "falm.head_k", d, cfg.head_hidden, rng);
  head_t_ = nn::SigmoidHead<T>(store_, "falm.head_t", d, cfg.head_hidden, rng);
}

template <typename T>
typename AlignmentModel<T>::Graph AlignmentModel<T>::forward(const Tensor<T>& e_v,
                                                             const Tensor<T>& e_q,
                                                             const Tensor<T>& e_f,
                                                             const Tensor<T>& e_r,
                                                             const std::vector<double>* ref_pos) const {
  const auto in = cfg_.input_dim;
  auto check = [&](const Tensor<T>& t, const char* what, bool exact3) {
    if (t.cols() != in || t.rows() == 0 || (exact3 && t.rows() != 3))
      throw ShapeMismatch(std::string("falm input ") + what + " is " + std::to_string(t.rows()) +
                          "x" + std::to_string(t.cols()) + ", expected width " +
                          std::to_string(in));
  };
  check(e_v, "e_v", false);
  check(e_q, "e_q", false);
  check(e_f, "e_f", false);
  check(e_r, "e_r", true);

  const auto d = cfg_.d_model;
  const std::size_t m = e_v.rows();

  V xv = proj_(V::constant(e_v));
  if (cfg_.use_positional) {
    std::vector<double> pos(m);
    for (std::size_t i = 0; i < m; ++i) pos[i] = static_cast<double>(i);
    xv = tensor::add(xv, V::constant(tensor::sinusoidal_encoding<T>(pos, d)));
  }
  for (const auto& layer : t_v_) xv = layer(xv);

  V xr = tensor::add_row(proj_(V::constant(e_r)), type_r_);
  if (cfg_.use_positional && cfg_.reference_positions && ref_pos) {
    if (ref_pos->size() != 3) throw ShapeMismatch("reference positions must have 3 entries");
    xr = tensor::add(xr, V::constant(tensor::sinusoidal_encoding<T>(*ref_pos, d)));
  }
  const std::vector<V> segments{tensor::add_row(proj_(V::constant(e_q)), type_q_),
                                tensor::add_row(proj_(V::constant(e_f)), type_f_), xr};
  V xt = tensor::concat_rows<T>(segments);
  for (const auto& layer : t_q_) xt = layer(xt);

  V y = xv;
  for (const auto& layer : t_m_) y = layer(y, xt);
  Graph g;
  g.e_a = final_ln_(y);
  g.p = head_p_(g.e_a);
  g.p_c = head_c_(g.e_a);
  g.p_k = head_k_(g.e_a);
  g.p_t = head_t_(g.e_a);
  return g;
}

namespace {

std::vector<double> column(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> column(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

template <typename T>
FalmOutput falm_forward(const AlignmentModel<T>& model, const Matrix& e_v, const Matrix& e_q,
                        const Matrix& e_f, const Matrix& e_r, std::optional<Span> ref) {
  std::vector<double> pos;
  if (ref) pos = reference_positions(*ref, e_v.rows());
  auto g = model.forward(to_tensor<T>(e_v), to_tensor<T>(e_q), to_tensor<T>(e_f),
                         to_tensor<T>(e_r), ref ? &pos : nullptr);
  FalmOutput out;
  out.p = column(g.p.value());
  out.p_c = column(g.p_c.value());
  out.p_k = column(g.p_k.value());
  out.p_t = column(g.p_t.value());
  out.e_a = to_matrix(g.e_a.value());
  return out;
}

template <typename T>
FalmOutput falm_forward(const AlignmentModel<T>& model, const EpisodeRecord& ep,
                        const QueryRecord& query, const FeedbackSample& feedback) {
  return falm_forward(model, ep.features, query.embedding_tokens, feedback.embedding_tokens,
                      build_reference_embedding(ep, feedback.ref_span), feedback.ref_span);
}

template <typename T>
LabelTensors<T> label_tensors(const labelgen::AlignmentLabels& labels) {
  const std::size_t m = labels.size();
  if (labels.s_c.size() != m || labels.s_k.size() != m || labels.l_t.size() != m)
    throw ShapeMismatch("alignment labels have inconsistent lengths");
  LabelTensors<T> out;
  out.l = Tensor<T>(m, 1);
  out.l_t = Tensor<T>(m, 1);
  out.s_c = Tensor<T>(m, 1);
  out.s_k = Tensor<T>(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    out.l(i, 0) = static_cast<T>(labels.l[i]);
    out.l_t(i, 0) = static_cast<T>(labels.l_t[i]);
    out.s_c(i, 0) = static_cast<T>(labels.s_c[i]);
    out.s_k(i, 0) = static_cast<T>(labels.s_k[i]);
  }
  out.all = Tensor<T>(m, 1, T(1));
  out.mask_t = Tensor<T>(m, 1, labels.has_temporal ? T(1) : T(0));
  out.mask_c = Tensor<T>(m, 1, labels.has_contains ? T(1) : T(0));
  out.mask_k = Tensor<T>(m, 1, labels.has_not_contains ? T(1) : T(0));
  return out;
}

template <typename T>
Var<T> falm_loss(const typename AlignmentModel<T>::Graph& out,
                 const labelgen::AlignmentLabels& labels, const FalmConfig& cfg) {
  if (out.p.rows() != labels.size())
    throw ShapeMismatch("falm_loss: " + std::to_string(out.p.rows()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  const auto lt = label_tensors<T>(labels);
  Var<T> loss = tensor::scale(tensor::bce_loss(out.p, lt.l, lt.all), static_cast<T>(cfg.lambda));
  if (labels.has_temporal)
    loss = tensor::add(loss, tensor::scale(tensor::bce_loss(out.p_t, lt.l_t, lt.mask_t),
                                           static_cast<T>(cfg.lambda_t)));
  if (labels.has_contains)
    loss = tensor::add(loss, tensor::scale(tensor::mse_loss(out.p_c, lt.s_c, lt.mask_c),
                                           static_cast<T>(cfg.lambda_c)));
  if (labels.has_not_contains)
    loss = tensor::add(loss, tensor::scale(tensor::mse_loss(out.p_k, lt.s_k, lt.mask_k),
                                           static_cast<T>(cfg.lambda_n)));
  return loss;
}

double falm_loss_value(const FalmOutput& out, const labelgen::AlignmentLabels& labels,
                       const FalmConfig& cfg) {
  const std::size_t m = labels.size();
  if (out.p.size() != m) throw ShapeMismatch("falm_loss_value: length mismatch");
  auto bce = [&](const std::vector<double>& p, const std::vector<std::uint8_t>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double q = std::clamp(p[i], tensor::kBceClamp, 1.0 - tensor::kBceClamp);
      s -= y[i] ? std::log(q) : std::log(1.0 - q);
    }
    return s / static_cast<double>(m);
  };
  auto mse = [&](const std::vector<double>& p, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
    return s / static_cast<double>(m);
  };
  double loss = cfg.lambda * bce(out.p, labels.l);
  if (labels.has_temporal) loss += cfg.lambda_t * bce(out.p_t, labels.l_t);
  if (labels.has_contains) loss += cfg.lambda_c * mse(out.p_c, labels.s_c);
  if (labels.has_not_contains) loss += cfg.lambda_n * mse(out.p_k, labels.s_k);
  return loss;
}

#define INTERLOC_INSTANTIATE(T)                                                                 \
  template class AlignmentModel<T>;                                                             \
  template FalmOutput falm_forward<T>(const AlignmentModel<T>&, const Matrix&, const Matrix&,   \
                                      const Matrix&, const Matrix&, std::optional<Span>);       \
  template FalmOutput falm_forward<T>(const AlignmentModel<T>&, const EpisodeRecord&,           \
                                      const QueryRecord&, const FeedbackSample&);               \
  template LabelTensors<T> label_tensors<T>(const labelgen::AlignmentLabels&);                  \
  template Var<T> falm_loss<T>(const typename AlignmentModel<T>::Graph&,                        \
                               const labelgen::AlignmentLabels&, const FalmConfig&);

INTERLOC_INSTANTIATE(float)
INTERLOC_INSTANTIATE(double)

#undef INTERLOC_INSTANTIATE

}  // namespace interloc::falm
