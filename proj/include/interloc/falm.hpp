#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/nn.hpp"
#include "interloc/tensor.hpp"

namespace interloc {

/// Copies a stored matrix into a constant tensor of the requested precision.
template <typename T>
tensor::Tensor<T> to_tensor(const Matrix& m) {
  tensor::Tensor<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.data().size(); ++i) out.data()[i] = static_cast<T>(m.data()[i]);
  return out;
}

template <typename T>
Matrix to_matrix(const tensor::Tensor<T>& t) {
  Matrix out(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = static_cast<float>(t.data()[i]);
  return out;
}

}  // namespace interloc

namespace interloc::falm {

struct FalmConfig {
  std::size_t input_dim = 32;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t t_q_layers = 2;
  std::size_t t_v_layers = 2;
  std::size_t t_m_layers = 2;
  std::size_t ffn_hidden = 128;
  std::size_t head_hidden = 64;
  double lambda = 1.0;
  double lambda_t = 0.5;
  double lambda_c = 0.25;
  double lambda_n = 0.25;
  /// Sinusoidal positions on video tokens.
  bool use_positional = true;
  /// Also tag the three reference rows with the positions of the clips they summarize.
  bool reference_positions = true;
  std::uint64_t seed = 21;

  void validate() const;
};

struct FalmOutput {
  std::vector<double> p, p_c, p_k, p_t;
  Matrix e_a;
};

/// Rows: first ref clip, last ref clip, mean over ref clips. Throws DegenerateSpan.
Matrix build_reference_embedding(const EpisodeRecord& ep, const Span& ref);

/// Positions attached to the reference rows: first clip, last clip, and their midpoint.
std::vector<double> reference_positions(const Span& ref, std::size_t clip_count);

template <typename T>
class AlignmentModel {
 public:
  using V = tensor::Var<T>;

  struct Graph {
    V p, p_c, p_k, p_t;  // m x 1 each
    V e_a;               // m x d_model
  };

  explicit AlignmentModel(const FalmConfig& cfg);

  /// Differentiable forward pass. `ref_pos` (3 entries) is used when reference_positions is on.
  Graph forward(const tensor::Tensor<T>& e_v, const tensor::Tensor<T>& e_q,
                const tensor::Tensor<T>& e_f, const tensor::Tensor<T>& e_r,
                const std::vector<double>* ref_pos = nullptr) const;

  const FalmConfig& config() const noexcept { return cfg_; }
  nn::ParameterStore<T>& params() noexcept { return store_; }
  const nn::ParameterStore<T>& params() const noexcept { return store_; }

 private:
  FalmConfig cfg_;
  nn::ParameterStore<T> store_;
  nn::Linear<T> proj_;
  V type_q_, type_f_, type_r_;
  std::vector<nn::EncoderLayer<T>> t_q_, t_v_;
  std::vector<nn::DecoderLayer<T>> t_m_;
  nn::LayerNorm<T> final_ln_;
  nn::SigmoidHead<T> head_p_, head_c_, head_k_, head_t_;
};

/// Inference entry point; validates shapes and returns plain vectors.
template <typename T>
FalmOutput falm_forward(const AlignmentModel<T>& model, const Matrix& e_v, const Matrix& e_q,
                        const Matrix& e_f, const Matrix& e_r,
                        std::optional<Span> ref = std::nullopt);

/// Convenience: FALM scores for one feedback sample on its episode.
template <typename T>
FalmOutput falm_forward(const AlignmentModel<T>& model, const EpisodeRecord& ep,
                        const QueryRecord& query, const FeedbackSample& feedback);

/// Label tensors in the layout the loss expects.
template <typename T>
struct LabelTensors {
  tensor::Tensor<T> l, l_t, s_c, s_k;
  tensor::Tensor<T> all, mask_t, mask_c, mask_k;
};

template <typename T>
LabelTensors<T> label_tensors(const labelgen::AlignmentLabels& labels);

/// lambda*BCE(L,P) + lambda_t*BCE(Lt,Pt) + lambda_c*MSE(Sc,Pc) + lambda_n*MSE(Sk,Pk), with
/// terms whose clause type is absent dropped.
template <typename T>
tensor::Var<T> falm_loss(const typename AlignmentModel<T>::Graph& out,
                         const labelgen::AlignmentLabels& labels, const FalmConfig& cfg);

/// Same loss on plain outputs (no gradient).
double falm_loss_value(const FalmOutput& out, const labelgen::AlignmentLabels& labels,
                       const FalmConfig& cfg);

}  // namespace interloc::falm
