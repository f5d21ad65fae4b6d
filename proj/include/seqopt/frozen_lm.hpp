#pragma once

// Q-network parameterization: a frozen prefix encoder standing in for the
// policy language model, a fixed head matrix whose rows score tokens, and a
// trainable adapter MLP between them. Q(prefix, .) = W * adapter(encode(prefix)).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqopt/numkit.hpp"
#include "seqopt/sparse_math.hpp"

namespace seqopt {

using Token = int;
using TokenSeq = std::vector<Token>;

struct VocabSpec {
  Index size = 0;
  std::vector<std::string> labels;  // optional, for display

  std::string label(Token t) const;
};

/// Single-layer tanh recurrence over fixed random token embeddings:
/// s <- tanh(R [s; embed(z)] + b), starting from a fixed initial state.
class FrozenEncoder {
 public:
  FrozenEncoder() = default;
  FrozenEncoder(Index vocab_size, Index input_dim, Index state_dim, std::uint64_t seed);
  FrozenEncoder(DenseMatrix embedding, DenseMatrix recurrence, DenseVector bias, DenseVector initial_state,
                std::uint64_t seed);

  Index vocab_size() const { return embedding_.rows(); }
  Index input_dim() const { return embedding_.cols(); }
  Index dim() const { return initial_state_.size(); }
  std::uint64_t seed() const { return seed_; }

  const DenseMatrix& embedding() const { return embedding_; }
  const DenseMatrix& recurrence() const { return recurrence_; }
  const DenseVector& bias() const { return bias_; }
  const DenseVector& initial_state() const { return initial_state_; }

  DenseVector step(const DenseVector& state, Token token) const;
  void check_token(Token token) const;

 private:
  DenseMatrix embedding_;   // |V| x d_in
  DenseMatrix recurrence_;  // dim x (dim + d_in)
  DenseVector bias_;
  DenseVector initial_state_;
  std::uint64_t seed_ = 0;
};

DenseVector encode_prefix(const FrozenEncoder& encoder, std::span<const Token> prefix);

/// All encodings e_0 .. e_n of the prefixes of `tokens`, computed in one pass.
std::vector<DenseVector> encode_all_prefixes(const FrozenEncoder& encoder, std::span<const Token> tokens);

struct LmHead {
  DenseMatrix matrix;  // |V| x dim(E); row i scores token i
  std::uint64_t seed = 0;

  static LmHead random(Index vocab_size, Index dim, std::uint64_t seed);
  /// Identity in the leading |V| x |V| block, zero elsewhere; needs dim >= |V|.
  static LmHead identity_padded(Index vocab_size, Index dim);
};

struct ModelSpec {
  Index vocab_size = 2000;
  Index embed_dim = 32;   // dim(E)
  Index input_dim = 32;   // token embedding width inside the encoder
  Index hidden = 256;     // adapter hidden width
  std::uint64_t encoder_seed = 1;
  std::uint64_t head_seed = 2;
  bool tabular = false;   // identity-padded head, needs embed_dim >= vocab_size
  Activation activation = Activation::relu;

  void validate() const;
};

/// The encoder and head are shared immutable state: copies of a model (for
/// instance a target network) alias them and own only adapter and optimizer.
class QFunctionModel {
 public:
  QFunctionModel(std::shared_ptr<const FrozenEncoder> encoder, std::shared_ptr<const LmHead> head,
                 MlpParams<double> adapter, double learning_rate);

  static QFunctionModel create(const ModelSpec& spec, std::uint64_t adapter_seed, double learning_rate);

  const FrozenEncoder& encoder() const { return *encoder_; }
  const LmHead& head() const { return *head_; }
  const std::shared_ptr<const FrozenEncoder>& shared_encoder() const { return encoder_; }
  const std::shared_ptr<const LmHead>& shared_head() const { return head_; }

  MlpParams<double>& adapter() { return adapter_; }
  const MlpParams<double>& adapter() const { return adapter_; }
  AdamState<double>& optimizer() { return optimizer_; }
  const AdamState<double>& optimizer() const { return optimizer_; }

  Index vocab_size() const { return head_->matrix.rows(); }
  Index dim() const { return head_->matrix.cols(); }

 private:
  std::shared_ptr<const FrozenEncoder> encoder_;
  std::shared_ptr<const LmHead> head_;
  MlpParams<double> adapter_;
  AdamState<double> optimizer_;
};

/// W e: token scores from the raw encoding, adapter not applied.
DenseVector base_logits(const QFunctionModel& model, const DenseVector& encoding);

DenseVector q_from_encoding(const QFunctionModel& model, const DenseVector& encoding);
DenseVector q_values(const QFunctionModel& model, std::span<const Token> prefix);

/// Column-batched forms: column j of the result belongs to column j of
/// `encodings`.
DenseMatrix base_logits_batch(const QFunctionModel& model, const DenseMatrix& encodings);
DenseMatrix q_from_encodings(const QFunctionModel& model, const DenseMatrix& encodings);

struct IgnorableSet {
  Mask ignored;
  Index k = 0;

  Index retained() const { return ignored.size() - ignored.count(); }
};

/// Tokens whose base logit is strictly below the k-th largest base logit.
IgnorableSet ignorable_set_from_encoding(const QFunctionModel& model, const DenseVector& encoding, Index k);
IgnorableSet ignorable_set(const QFunctionModel& model, std::span<const Token> prefix, Index k);

/// Adds the adapter gradient of (Q(e, action) - target)^2 into `grad_acc` and
/// returns the squared residual. The target is treated as a constant.
double accumulate_td_gradient(const QFunctionModel& model, const DenseVector& encoding, Token action,
                              double target, MlpParams<double>& grad_acc);

/// Sum of accumulate_td_gradient over the columns of `encodings`, computed
/// with matrix products.
double accumulate_td_gradient_batch(const QFunctionModel& model, const DenseMatrix& encodings,
                                    std::span<const Token> actions, std::span<const double> targets,
                                    MlpParams<double>& grad_acc);

/// One Adam step on the adapter with `grads` (already averaged by the caller).
void apply_adapter_gradients(QFunctionModel& model, const MlpParams<double>& grads);

/// Single-sample TD regression step; returns the squared residual before the
/// update.
double train_adapter_step(QFunctionModel& model, std::span<const Token> prefix, Token action, double target);

// Checkpoints. The file records seeds, dimensions and every parameter array,
// including optimizer moments, as raw little-endian doubles; loading
// reproduces q_values bit for bit.
void save_checkpoint(const QFunctionModel& model, const std::filesystem::path& path);
QFunctionModel load_checkpoint(const std::filesystem::path& path);

/// Serialized bytes of the frozen parts only (encoder and head).
std::string serialize_frozen(const QFunctionModel& model);

}  // namespace seqopt
