#include "cilf/model.hpp"

#include <cmath>

#include "cilf/errors.hpp"

namespace cilf {
namespace {

Tensor gaussian(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = std * rng.normal();
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}


constexpr std::size_t kConvKernel = 3;
constexpr std::size_t kPool = 2;

}  // namespace

void ArchSpec::validate() const {
  if (channels == 0 || side == 0) throw ConfigError("architecture: input channels and side must be positive");
  if (feature_dim < 2) throw ConfigError("architecture: feature_dim must be >= 2");
  if (kind == ArchKind::Mlp) {
    for (auto h : hidden) {
      if (h == 0) throw ConfigError("architecture: hidden widths must be positive");
    }
  } else {
    if (conv_channels.size() != 2 || conv_channels[0] == 0 || conv_channels[1] == 0) {
      throw ConfigError("architecture: small_conv needs two positive conv channel counts");
    }
    if (side % 4 != 0) throw ConfigError("architecture: small_conv needs side divisible by 4");
  }
}

std::string arch_name(ArchKind kind) { return kind == ArchKind::Mlp ? "mlp" : "small_conv"; }

ArchKind parse_arch(const std::string& name) {
  if (name == "mlp") return ArchKind::Mlp;
  if (name == "small_conv") return ArchKind::SmallConv;
  throw ConfigError("unknown architecture '" + name + "' (expected mlp or small_conv)");
}

FeatureExtractor::FeatureExtractor(ArchSpec arch, Rng& rng) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t in = 0;
  if (arch_.kind == ArchKind::Mlp) {
    in = arch_.channels * arch_.side * arch_.side;
    for (auto h : arch_.hidden) {
      weights_.push_back(gaussian({in, h}, std::sqrt(2.0 / double(in)), rng));
      biases_.push_back(zeros_param({h}));
      in = h;
    }
  } else {
    std::size_t c_in = arch_.channels;
    for (auto c_out : arch_.conv_channels) {
      const double fan_in = double(c_in * kConvKernel * kConvKernel);
      kernels_.push_back(gaussian({c_out, c_in, kConvKernel, kConvKernel}, std::sqrt(2.0 / fan_in), rng));
      c_in = c_out;
    }
    const std::size_t reduced = arch_.side / (kPool * kPool);
    in = c_in * reduced * reduced;
  }
  weights_.push_back(gaussian({in, arch_.feature_dim}, std::sqrt(1.0 / double(in)), rng));
  biases_.push_back(zeros_param({arch_.feature_dim}));
}

void FeatureExtractor::check_input(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != arch_.channels || batch.dim(2) != arch_.side ||
      batch.dim(3) != arch_.side) {
    throw DimensionError("extractor expects [B×" + std::to_string(arch_.channels) + "×" + std::to_string(arch_.side) +
                         "×" + std::to_string(arch_.side) + "] input, got " + shape_string(batch.shape()));
  }
}

template <typename Bind>
Var FeatureExtractor::forward_impl(Var input, Bind bind) const {
  check_input(input.value());
  const std::size_t batch = input.value().dim(0);
  Var h = input;
  if (arch_.kind == ArchKind::SmallConv) {
    for (const auto& k : kernels_) {
      h = ops::conv2d(h, bind(k), 1, kConvKernel / 2);
      h = ops::relu(h);
      h = ops::avg_pool2d(h, kPool);
    }
  }
  h = ops::reshape(h, {batch, h.value().size() / batch});
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = ops::matmul(h, bind(weights_[i]));
    h = ops::add_bias(h, bind(biases_[i]));
    if (i + 1 < weights_.size()) h = ops::relu(h);
  }
  return h;
}

Var FeatureExtractor::forward(Tape& tape, Var input) {
  // Parameters are owned by *this and outlive the tape.
  return forward_impl(input, [&tape](const Tensor& t) { return tape.parameter(const_cast<Tensor&>(t)); });
}

Var FeatureExtractor::forward_frozen(Tape& tape, Var input) const {
  return forward_impl(input, [&tape](const Tensor& t) { return tape.constant(t); });
}

Tensor FeatureExtractor::extract(const Tensor& batch) const {
  Tape tape;
  Var out = forward_frozen(tape, tape.constant(batch));
  return out.value();
}

NamedParams FeatureExtractor::named_parameters() {
  NamedParams out;
  for (std::size_t i = 0; i < kernels_.size(); ++i) out.emplace_back("extractor/conv" + std::to_string(i), &kernels_[i]);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.emplace_back("extractor/dense" + std::to_string(i) + "/weight", &weights_[i]);
    out.emplace_back("extractor/dense" + std::to_string(i) + "/bias", &biases_[i]);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> FeatureExtractor::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [name, t] : const_cast<FeatureExtractor*>(this)->named_parameters()) out.emplace_back(name, t);
  return out;
}

std::vector<Tensor*> FeatureExtractor::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

bool FeatureExtractor::operator==(const FeatureExtractor& other) const {
  const auto a = named_tensors();
  const auto b = other.named_tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second->shape() != b[i].second->shape() ||
        a[i].second->values() != b[i].second->values()) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(std::size_t feature_dim, std::size_t views_per_class)
    : feature_dim_(feature_dim), views_(views_per_class) {
  if (feature_dim == 0 || views_per_class == 0) throw ConfigError("classifier head needs d >= 1 and views >= 1");
}

Var ClassifierHead::affine(Var features, Var weight, Var bias) const {
  if (num_nodes_ == 0) throw PreconditionError("classifier head has no class nodes yet");
  const Tensor& z = features.value();
  if (z.rank() != 2 || z.dim(1) != feature_dim_) {
    throw DimensionError("classifier expects [B×" + std::to_string(feature_dim_) + "] features, got " +
                         shape_string(z.shape()));
  }
  return ops::add_bias(ops::matmul(features, ops::transpose(weight)), bias);
}

Var ClassifierHead::forward(Tape& tape, Var features) {
  if (num_nodes_ == 0) throw PreconditionError("classifier head has no class nodes yet");
  return affine(features, tape.parameter(weight_), tape.parameter(bias_));
}

Var ClassifierHead::forward_frozen(Tape& tape, Var features) const {
  if (num_nodes_ == 0) throw PreconditionError("classifier head has no class nodes yet");
  return affine(features, tape.constant(weight_), tape.constant(bias_));
}

Tensor ClassifierHead::classify(const Tensor& features) const {
  if (num_nodes_ == 0) throw PreconditionError("classifier head has no class nodes yet");
  if (features.rank() != 2 || features.dim(1) != feature_dim_) {
    throw DimensionError("classifier expects [B×" + std::to_string(feature_dim_) + "] features, got " +
                         shape_string(features.shape()));
  }
  // Plain dot products in a fixed order: a logit never depends on how many
  // other nodes or rows are present.
  const std::size_t batch = features.dim(0);
  Tensor out({batch, num_nodes_});
  for (std::size_t r = 0; r < batch; ++r) {
    const double* z = features.data().data() + r * feature_dim_;
    for (std::size_t c = 0; c < num_nodes_; ++c) {
      const double* w = weight_.data().data() + c * feature_dim_;
      double acc = 0.0;
      for (std::size_t j = 0; j < feature_dim_; ++j) acc += z[j] * w[j];
      out[r * num_nodes_ + c] = acc + bias_[c];
    }
  }
  return out;
}

void ClassifierHead::expand(std::size_t new_classes, Rng& rng) {
  if (new_classes == 0) throw ArgumentError("expand_head: class count must be >= 1");
  const std::size_t added = views_ * new_classes;
  const std::size_t total = num_nodes_ + added;
  std::vector<double> w(total * feature_dim_, 0.0);
  std::vector<double> b(total, 0.0);
  if (num_nodes_ > 0) {
    std::copy(weight_.data().begin(), weight_.data().end(), w.begin());
    std::copy(bias_.data().begin(), bias_.data().end(), b.begin());
  }
  for (std::size_t i = num_nodes_ * feature_dim_; i < w.size(); ++i) w[i] = 0.01 * rng.normal();
  weight_ = Tensor({total, feature_dim_}, std::move(w));
  bias_ = Tensor({total}, std::move(b));
  weight_.set_requires_grad(true);
  bias_.set_requires_grad(true);
  num_nodes_ = total;
}

NamedParams ClassifierHead::named_parameters() {
  if (num_nodes_ == 0) return {};
  return {{"head/weight", &weight_}, {"head/bias", &bias_}};
}

std::vector<Tensor*> ClassifierHead::parameters() {
  if (num_nodes_ == 0) return {};
  return {&weight_, &bias_};
}

void ClassifierHead::assign(Tensor weight, Tensor bias) {
  if (weight.rank() != 2 || weight.dim(1) != feature_dim_ || bias.rank() != 1 || bias.dim(0) != weight.dim(0) ||
      weight.dim(0) % views_ != 0) {
    throw DimensionError("head arrays " + shape_string(weight.shape()) + " / " + shape_string(bias.shape()) +
                         " do not fit d=" + std::to_string(feature_dim_) + ", views=" + std::to_string(views_));
  }
  num_nodes_ = weight.dim(0);
  weight_ = std::move(weight);
  bias_ = std::move(bias);
  weight_.set_requires_grad(true);
  bias_.set_requires_grad(true);
}

std::vector<Tensor*> IncrementalModel::parameters() {
  auto out = extractor.parameters();
  for (auto* p : head.parameters()) out.push_back(p);
  return out;
}

}  // namespace cilf
