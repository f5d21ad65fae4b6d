#include "seqopt/frozen_lm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace seqopt {

namespace {

template <typename Rng>
void fill_normal(DenseMatrix& m, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n(rng);
}

template <typename Rng>
void fill_normal(DenseVector& v, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Index i = 0; i < v.size(); ++i) v(i) = scale * n(rng);
}

constexpr char kMagic[8] = {'S', 'E', 'Q', 'O', 'P', 'T', 'Q', '1'};

class ByteWriter {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  template <typename Derived>
  void array(const Eigen::DenseBase<Derived>& a) {
    u64(static_cast<std::uint64_t>(a.rows()));
    u64(static_cast<std::uint64_t>(a.cols()));
    // Column-major element order.
    for (Index j = 0; j < a.cols(); ++j)
      for (Index i = 0; i < a.rows(); ++i) f64(a(i, j));
  }
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  DenseMatrix matrix() {
    const auto rows = static_cast<Index>(u64());
    const auto cols = static_cast<Index>(u64());
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) * 8 > bytes_.size() - pos_) {
      throw InputError("checkpoint: array header exceeds file size");
    }
    DenseMatrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = f64();
    return m;
  }
  DenseVector vector() {
    DenseMatrix m = matrix();
    if (m.cols() != 1) throw InputError("checkpoint: expected a column vector");
    return m.col(0);
  }
  void raw(void* p, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw InputError("checkpoint: truncated file");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

void write_frozen(ByteWriter& w, const FrozenEncoder& enc, const LmHead& head) {
  w.u64(enc.seed());
  w.array(enc.embedding());
  w.array(enc.recurrence());
  w.array(enc.bias());
  w.array(enc.initial_state());
  w.u64(head.seed);
  w.array(head.matrix);
}

void write_mlp(ByteWriter& w, const MlpParams<double>& p) {
  for_each_tensor([&w](const auto& t) { w.array(t); }, p);
}

MlpParams<double> read_mlp(ByteReader& r, Activation act) {
  MlpParams<double> p;
  p.activation = act;
  p.w1 = r.matrix();
  p.b1 = r.vector();
  p.w2 = r.matrix();
  p.b2 = r.vector();
  p.validate();
  return p;
}

}  // namespace

std::string VocabSpec::label(Token t) const {
  if (t >= 0 && static_cast<std::size_t>(t) < labels.size()) return labels[static_cast<std::size_t>(t)];
  return "<" + std::to_string(t) + ">";
}

FrozenEncoder::FrozenEncoder(Index vocab_size, Index input_dim, Index state_dim, std::uint64_t seed)
    : seed_(seed) {
  if (vocab_size < 2) throw ConfigError("encoder: vocabulary size must be >= 2");
  if (input_dim < 1 || state_dim < 1) throw ConfigError("encoder: dimensions must be positive");
  std::mt19937_64 rng(seed);
  embedding_.resize(vocab_size, input_dim);
  fill_normal(embedding_, 1.0 / std::sqrt(double(input_dim)), rng);
  recurrence_.resize(state_dim, state_dim + input_dim);
  fill_normal(recurrence_, 1.0 / std::sqrt(double(state_dim + input_dim)), rng);
  bias_.resize(state_dim);
  fill_normal(bias_, 0.1, rng);
  initial_state_.resize(state_dim);
  fill_normal(initial_state_, 1.0 / std::sqrt(double(state_dim)), rng);
}

FrozenEncoder::FrozenEncoder(DenseMatrix embedding, DenseMatrix recurrence, DenseVector bias,
                             DenseVector initial_state, std::uint64_t seed)
    : embedding_(std::move(embedding)),
      recurrence_(std::move(recurrence)),
      bias_(std::move(bias)),
      initial_state_(std::move(initial_state)),
      seed_(seed) {
  const Index dim = initial_state_.size();
  if (embedding_.rows() < 2 || recurrence_.rows() != dim || recurrence_.cols() != dim + embedding_.cols() ||
      bias_.size() != dim) {
    throw ConfigError("encoder: inconsistent parameter shapes");
  }
}

void FrozenEncoder::check_token(Token token) const {
  if (token < 0 || token >= vocab_size()) {
    throw InputError("token " + std::to_string(token) + " outside vocabulary of size " +
                     std::to_string(vocab_size()));
  }
}

DenseVector FrozenEncoder::step(const DenseVector& state, Token token) const {
  check_token(token);
  const Index d = dim();
  DenseVector pre = bias_;
  pre.noalias() += recurrence_.leftCols(d) * state;
  pre.noalias() += recurrence_.rightCols(input_dim()) * embedding_.row(token).transpose();
  return pre.array().tanh().matrix();
}

DenseVector encode_prefix(const FrozenEncoder& encoder, std::span<const Token> prefix) {
  DenseVector s = encoder.initial_state();
  for (Token t : prefix) s = encoder.step(s, t);
  return s;
}

std::vector<DenseVector> encode_all_prefixes(const FrozenEncoder& encoder, std::span<const Token> tokens) {
  std::vector<DenseVector> out;
  out.reserve(tokens.size() + 1);
  out.push_back(encoder.initial_state());
  for (Token t : tokens) out.push_back(encoder.step(out.back(), t));
  return out;
}

LmHead LmHead::random(Index vocab_size, Index dim, std::uint64_t seed) {
  LmHead h;
  h.seed = seed;
  h.matrix.resize(vocab_size, dim);
  std::mt19937_64 rng(seed);
  fill_normal(h.matrix, 1.0, rng);
  return h;
}

LmHead LmHead::identity_padded(Index vocab_size, Index dim) {
  if (dim < vocab_size) throw ConfigError("identity head needs dim(E) >= |V|");
  LmHead h;
  h.matrix = DenseMatrix::Identity(vocab_size, dim);
  return h;
}

void ModelSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
  if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
  if (input_dim < 1) throw ConfigError("model.input_dim must be >= 1");
  if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
  if (tabular && embed_dim < vocab_size) throw ConfigError("model.tabular requires embed_dim >= vocab_size");
}

QFunctionModel::QFunctionModel(std::shared_ptr<const FrozenEncoder> encoder, std::shared_ptr<const LmHead> head,
                               MlpParams<double> adapter, double learning_rate)
    : encoder_(std::move(encoder)), head_(std::move(head)), adapter_(std::move(adapter)) {
  if (!encoder_ || !head_) throw ConfigError("model: encoder and head are required");
  adapter_.validate();
  if (encoder_->dim() != head_->matrix.cols() || adapter_.dim() != encoder_->dim()) {
    throw ConfigError("model: encoder, head and adapter disagree on dim(E)");
  }
  if (encoder_->vocab_size() != head_->matrix.rows()) {
    throw ConfigError("model: encoder and head disagree on vocabulary size");
  }
  optimizer_ = AdamState<double>::for_params(adapter_, learning_rate);
}

QFunctionModel QFunctionModel::create(const ModelSpec& spec, std::uint64_t adapter_seed, double learning_rate) {
  spec.validate();
  auto enc = std::make_shared<const FrozenEncoder>(spec.vocab_size, spec.input_dim, spec.embed_dim, spec.encoder_seed);
  auto head = std::make_shared<const LmHead>(spec.tabular ? LmHead::identity_padded(spec.vocab_size, spec.embed_dim)
                                                          : LmHead::random(spec.vocab_size, spec.embed_dim, spec.head_seed));
  std::mt19937_64 rng(adapter_seed);
  auto adapter = mlp_init_uniform<double>(spec.embed_dim, spec.hidden, rng, spec.activation);
  return QFunctionModel(std::move(enc), std::move(head), std::move(adapter), learning_rate);
}

DenseVector base_logits(const QFunctionModel& model, const DenseVector& encoding) {
  if (encoding.size() != model.dim()) throw ConfigError("base_logits: encoding length != dim(E)");
  return model.head().matrix * encoding;
}

DenseVector q_from_encoding(const QFunctionModel& model, const DenseVector& encoding) {
  const auto f = mlp_forward(model.adapter(), encoding);
  return model.head().matrix * f.output;
}

DenseMatrix base_logits_batch(const QFunctionModel& model, const DenseMatrix& encodings) {
  if (encodings.rows() != model.dim()) throw ConfigError("base_logits_batch: encoding rows != dim(E)");
  return model.head().matrix * encodings;
}

DenseMatrix q_from_encodings(const QFunctionModel& model, const DenseMatrix& encodings) {
  const auto f = mlp_forward_batch(model.adapter(), encodings);
  return model.head().matrix * f.output;
}

DenseVector q_values(const QFunctionModel& model, std::span<const Token> prefix) {
  return q_from_encoding(model, encode_prefix(model.encoder(), prefix));
}

IgnorableSet ignorable_set_from_encoding(const QFunctionModel& model, const DenseVector& encoding, Index k) {
  return IgnorableSet{below_kth_largest(base_logits(model, encoding), k), k};
}

IgnorableSet ignorable_set(const QFunctionModel& model, std::span<const Token> prefix, Index k) {
  if (k < 1 || k > model.vocab_size()) throw ConfigError("ignorable_set: k outside [1, |V|]");
  return ignorable_set_from_encoding(model, encode_prefix(model.encoder(), prefix), k);
}

double accumulate_td_gradient(const QFunctionModel& model, const DenseVector& encoding, Token action,
                              double target, MlpParams<double>& grad_acc) {
  if (!std::isfinite(target)) throw NumericError("td step: non-finite target value");
  model.encoder().check_token(action);
  const auto f = mlp_forward(model.adapter(), encoding);
  const auto w = model.head().matrix.row(action).transpose();
  const double residual = w.dot(f.output) - target;
  if (residual == 0.0) return 0.0;
  const DenseVector upstream = (2.0 * residual) * w;
  const auto g = mlp_backward(model.adapter(), f.cache, upstream);
  for_each_tensor([](auto& acc, const auto& t) { acc += t; }, grad_acc, g);
  return residual * residual;
}

double accumulate_td_gradient_batch(const QFunctionModel& model, const DenseMatrix& encodings,
                                    std::span<const Token> actions, std::span<const double> targets,
                                    MlpParams<double>& grad_acc) {
  const Index n = encodings.cols();
  if (static_cast<Index>(actions.size()) != n || static_cast<Index>(targets.size()) != n) {
    throw ConfigError("td batch: encodings, actions and targets disagree in count");
  }
  if (n == 0) return 0.0;
  const auto f = mlp_forward_batch(model.adapter(), encodings);
  const DenseMatrix& head = model.head().matrix;
  DenseMatrix upstream(model.dim(), n);
  double loss = 0.0;
  for (Index j = 0; j < n; ++j) {
    const double target = targets[static_cast<std::size_t>(j)];
    if (!std::isfinite(target)) throw NumericError("td step: non-finite target value");
    const Token a = actions[static_cast<std::size_t>(j)];
    model.encoder().check_token(a);
    const double residual = head.row(a).dot(f.output.col(j)) - target;
    upstream.col(j) = (2.0 * residual) * head.row(a).transpose();
    loss += residual * residual;
  }
  const auto g = mlp_backward_batch(model.adapter(), f.cache, upstream);
  for_each_tensor([](auto& acc, const auto& t) { acc += t; }, grad_acc, g);
  return loss;
}

void apply_adapter_gradients(QFunctionModel& model, const MlpParams<double>& grads) {
  adam_step(model.optimizer(), model.adapter(), grads);
}

double train_adapter_step(QFunctionModel& model, std::span<const Token> prefix, Token action, double target) {
  const DenseVector e = encode_prefix(model.encoder(), prefix);
  auto grads = MlpParams<double>::zeros(model.dim(), model.adapter().hidden(), model.adapter().activation);
  const double loss = accumulate_td_gradient(model, e, action, target, grads);
  apply_adapter_gradients(model, grads);
  return loss;
}

std::string serialize_frozen(const QFunctionModel& model) {
  ByteWriter w;
  write_frozen(w, model.encoder(), model.head());
  return w.take();
}

void save_checkpoint(const QFunctionModel& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(model.adapter().activation == Activation::relu ? 0 : 1);
  write_frozen(w, model.encoder(), model.head());
  write_mlp(w, model.adapter());
  const auto& opt = model.optimizer();
  w.u64(static_cast<std::uint64_t>(opt.step_count));
  w.f64(opt.learning_rate);
  w.f64(opt.beta1);
  w.f64(opt.beta2);
  w.f64(opt.epsilon);
  write_mlp(w, opt.first_moment);
  write_mlp(w, opt.second_moment);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("checkpoint: cannot open " + path.string() + " for writing");
  const std::string bytes = w.take();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("checkpoint: write failed for " + path.string());
}

QFunctionModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(std::move(bytes));
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw InputError("checkpoint: bad magic");
  const Activation act = r.u64() == 0 ? Activation::relu : Activation::identity;

  const std::uint64_t enc_seed = r.u64();
  DenseMatrix emb = r.matrix();
  DenseMatrix rec = r.matrix();
  DenseVector bias = r.vector();
  DenseVector init = r.vector();
  auto enc = std::make_shared<const FrozenEncoder>(std::move(emb), std::move(rec), std::move(bias),
                                                   std::move(init), enc_seed);
  LmHead head;
  head.seed = r.u64();
  head.matrix = r.matrix();

  MlpParams<double> adapter = read_mlp(r, act);
  AdamState<double> opt;
  opt.step_count = static_cast<long>(r.u64());
  opt.learning_rate = r.f64();
  opt.beta1 = r.f64();
  opt.beta2 = r.f64();
  opt.epsilon = r.f64();
  opt.first_moment = read_mlp(r, act);
  opt.second_moment = read_mlp(r, act);
  if (!r.done()) throw InputError("checkpoint: trailing bytes");

  QFunctionModel model(std::move(enc), std::make_shared<const LmHead>(std::move(head)), std::move(adapter),
                       opt.learning_rate);
  if (!opt.first_moment.same_shape(model.adapter()) || !opt.second_moment.same_shape(model.adapter())) {
    throw InputError("checkpoint: optimizer state shape mismatch");
  }
  model.optimizer() = std::move(opt);
  return model;
}

}  // namespace seqopt
