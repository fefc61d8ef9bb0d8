#include "dcvh/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcvh/binary_io.hpp"
#include "dcvh/error.hpp"

namespace dcvh {

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.code_bits = 64;
  c.conv1_kernels = 1000;
  c.conv2_kernels = 1000;
  c.text_fc = 1000;
  return c;
}

namespace {

Tensor init_weights(Shape shape, double range, std::mt19937_64& rng) {
  return Tensor::uniform(std::move(shape), -range, range, rng);
}

}  // namespace

DbeLayer::DbeLayer(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                   std::size_t code_bits, double init_range, std::mt19937_64& rng)
    : weights(params.add(prefix + ".weights", init_weights({input_dim, code_bits}, init_range, rng))),
      gamma(params.add(prefix + ".gamma", Tensor({code_bits}, 1.0))),
      beta(params.add(prefix + ".beta", Tensor({code_bits}, 0.0))),
      bn(code_bits) {}

ModelForward DbeLayer::forward(const ParamSet& params, const Tensor& x, Mode mode, bool with_grad) {
  auto lin = linear(x, params.value(weights), with_grad);
  auto norm = batchnorm(lin.value, params.value(gamma), params.value(beta), mode, bn, with_grad);
  auto rect = activation(norm.value, Activation::kRelu, with_grad);

  // tanh rounds to exactly 1.0 beyond ~19; keep codes strictly below 1.
  constexpr double kBelowOne = 0.99999999999999989;  // nextafter(1.0, 0.0)
  Tensor z = rect.value;
  Tensor slope(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double t = std::min(std::tanh(z[i]), kBelowOne);
    z[i] = t;
    slope[i] = 1.0 - t * t;
  }

  ModelForward out{std::move(z), {}};
  if (with_grad) {
    out.backward = [w = weights, g = gamma, b = beta, lin_back = std::move(lin.backward),
                    norm_back = std::move(norm.backward), rect_back = std::move(rect.backward),
                    slope = std::move(slope)](const Tensor& dz, ParamSet& ps) {
      Tensor d(slope.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = dz[i] * slope[i];
      auto dn = norm_back(rect_back(d));
      ps.accumulate(g, dn.gamma);
      ps.accumulate(b, dn.beta);
      auto dl = lin_back(dn.input);
      ps.accumulate(w, dl.weights);
      return std::move(dl.input);
    };
  }
  return out;
}

DenseBlock::DenseBlock(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                       std::size_t width, double init_range, std::mt19937_64& rng)
    : weights(params.add(prefix + ".weights", init_weights({input_dim, width}, init_range, rng))),
      gamma(params.add(prefix + ".gamma", Tensor({width}, 1.0))),
      beta(params.add(prefix + ".beta", Tensor({width}, 0.0))),
      bn(width) {}

ModelForward DenseBlock::forward(const ParamSet& params, const Tensor& x, Mode mode, bool with_grad) {
  auto lin = linear(x, params.value(weights), with_grad);
  auto norm = batchnorm(lin.value, params.value(gamma), params.value(beta), mode, bn, with_grad);
  auto rect = activation(norm.value, Activation::kRelu, with_grad);
  ModelForward out{std::move(rect.value), {}};
  if (with_grad) {
    out.backward = [w = weights, g = gamma, b = beta, lin_back = std::move(lin.backward),
                    norm_back = std::move(norm.backward),
                    rect_back = std::move(rect.backward)](const Tensor& dy, ParamSet& ps) {
      auto dn = norm_back(rect_back(dy));
      ps.accumulate(g, dn.gamma);
      ps.accumulate(b, dn.beta);
      auto dl = lin_back(dn.input);
      ps.accumulate(w, dl.weights);
      return std::move(dl.input);
    };
  }
  return out;
}

namespace {

// Chains block backward closures from last to first.
using BlockBackward = std::function<Tensor(const Tensor&, ParamSet&)>;

BlockBackward chain(std::vector<BlockBackward> stages) {
  return [stages = std::move(stages)](const Tensor& upstream, ParamSet& ps) {
    Tensor g = upstream;
    for (auto it = stages.rbegin(); it != stages.rend(); ++it) g = (*it)(g, ps);
    return g;
  };
}

void append_state(NamedTensors& out, const std::string& prefix, ParamSet& params) {
  for (Param& p : params) out.emplace_back(prefix + p.name, &p.value);
}

void append_bn(NamedTensors& out, const std::string& name, BatchNormState& bn) {
  out.emplace_back(name + ".running_mean", &bn.running_mean);
  out.emplace_back(name + ".running_var", &bn.running_var);
}

}  // namespace

ImageProjection::ImageProjection(std::size_t feature_dim, const ModelConfig& config,
                                 std::mt19937_64& rng)
    : feature_dim_(feature_dim), code_bits_(config.code_bits) {
  if (feature_dim == 0 || config.code_bits == 0) throw ConfigError("image projection needs positive widths");
  std::size_t width = feature_dim;
  for (std::size_t i = 0; i < config.image_hidden.size(); ++i) {
    if (config.image_hidden[i] == 0) throw ConfigError("hidden width must be positive");
    hidden_.emplace_back(params_, "hidden" + std::to_string(i), width, config.image_hidden[i],
                         config.init_range, rng);
    width = config.image_hidden[i];
  }
  dbe_ = DbeLayer(params_, "dbe", width, config.code_bits, config.init_range, rng);
}

ModelForward ImageProjection::forward(const Tensor& features, Mode mode, bool with_grad) {
  require_rank(features, 2, "image features");
  if (features.dim(1) != feature_dim_) {
    throw DimensionError("image features have width " + std::to_string(features.dim(1)) +
                         ", model expects " + std::to_string(feature_dim_));
  }
  std::vector<BlockBackward> stages;
  Tensor h = features;
  for (DenseBlock& block : hidden_) {
    auto f = block.forward(params_, h, mode, with_grad);
    h = std::move(f.value);
    stages.push_back(std::move(f.backward));
  }
  auto z = dbe_.forward(params_, h, mode, with_grad);
  stages.push_back(std::move(z.backward));
  ModelForward out{std::move(z.value), {}};
  if (with_grad) out.backward = chain(std::move(stages));
  return out;
}

NamedTensors ImageProjection::state() {
  NamedTensors out;
  append_state(out, "", params_);
  for (std::size_t i = 0; i < hidden_.size(); ++i) append_bn(out, "hidden" + std::to_string(i) + ".bn", hidden_[i].bn);
  append_bn(out, "dbe.bn", dbe_.bn);
  return out;
}

TextProjection::TextProjection(std::size_t embed_dim, std::size_t max_words,
                               const ModelConfig& config, std::mt19937_64& rng)
    : embed_dim_(embed_dim), max_words_(max_words), code_bits_(config.code_bits) {
  if (embed_dim == 0 || max_words == 0 || config.conv1_kernels == 0 || config.conv2_kernels == 0 ||
      config.text_fc == 0 || config.code_bits == 0) {
    throw ConfigError("text projection needs positive widths");
  }
  conv1_ = params_.add("conv1.kernels",
                       init_weights({config.conv1_kernels, embed_dim}, config.init_range, rng));
  conv2_ = params_.add("conv2.kernels",
                       init_weights({config.conv2_kernels, config.conv1_kernels * max_words},
                                    config.init_range, rng));
  fc_ = DenseBlock(params_, "fc", config.conv2_kernels, config.text_fc, config.init_range, rng);
  dbe_ = DbeLayer(params_, "dbe", config.text_fc, config.code_bits, config.init_range, rng);
}

ModelForward TextProjection::forward(const Tensor& text, Mode mode, bool with_grad) {
  require_rank(text, 2, "text vectors");
  if (text.dim(1) % embed_dim_ != 0) {
    throw DimensionError("text vector length " + std::to_string(text.dim(1)) +
                         " is not a multiple of the word dimension " + std::to_string(embed_dim_));
  }
  if (text.dim(1) != input_dim()) {
    throw DimensionError("text vector length " + std::to_string(text.dim(1)) + ", model expects " +
                         std::to_string(input_dim()));
  }
  const std::size_t batch = text.dim(0);

  // conv1: one response per word and kernel.
  auto c1 = conv1d(text, params_.value(conv1_), embed_dim_, with_grad);
  auto r1 = activation(c1.value, Activation::kRelu, with_grad);
  const Tensor flat = r1.value.reshaped({batch, r1.value.size() / std::max<std::size_t>(batch, 1)});

  // conv2: each kernel spans the whole conv1 output, so it yields one value.
  const Tensor& k2 = params_.value(conv2_);
  auto c2 = matmul_nt(flat, k2);
  auto r2 = activation(c2, Activation::kRelu, with_grad);

  auto fc = fc_.forward(params_, r2.value, mode, with_grad);
  auto z = dbe_.forward(params_, fc.value, mode, with_grad);

  ModelForward out{std::move(z.value), {}};
  if (with_grad) {
    out.backward = [i1 = conv1_, i2 = conv2_, c1_back = std::move(c1.backward),
                    r1_back = std::move(r1.backward), r1_shape = r1.value.shape(), flat, k2,
                    r2_back = std::move(r2.backward), fc_back = std::move(fc.backward),
                    z_back = std::move(z.backward)](const Tensor& dz, ParamSet& ps) {
      Tensor d2 = r2_back(fc_back(z_back(dz, ps), ps));
      ps.accumulate(i2, matmul_tn(d2, flat));
      Tensor dflat = matmul(d2, k2);
      auto g1 = c1_back(r1_back(dflat.reshaped(r1_shape)));
      ps.accumulate(i1, g1.kernels);
      return std::move(g1.input);
    };
  }
  return out;
}

NamedTensors TextProjection::state() {
  NamedTensors out;
  append_state(out, "", params_);
  append_bn(out, "fc.bn", fc_.bn);
  append_bn(out, "dbe.bn", dbe_.bn);
  return out;
}

Classifier::Classifier(std::size_t code_bits, std::size_t categories, double init_range,
                       std::mt19937_64& rng) {
  if (code_bits == 0 || categories == 0) throw ConfigError("classifier needs positive widths");
  params_.add("classifier.weights", init_weights({code_bits, categories}, init_range, rng));
}

ModelForward Classifier::forward(const Tensor& codes, bool with_grad) const {
  auto lin = linear(codes, params_.value(0), with_grad);
  ModelForward out{std::move(lin.value), {}};
  if (with_grad) {
    out.backward = [back = std::move(lin.backward)](const Tensor& dy, ParamSet& ps) {
      auto g = back(dy);
      ps.accumulate(0, g.weights);
      return std::move(g.input);
    };
  }
  return out;
}

Tensor classify(const Tensor& codes, const Classifier& classifier) {
  return classifier.forward(codes, false).value;
}

BitMatrix binarize(const Tensor& codes) {
  require_rank(codes, 2, "binarize");
  BitMatrix bits(codes.dim(0), codes.dim(1));
  for (std::size_t r = 0; r < codes.dim(0); ++r)
    for (std::size_t c = 0; c < codes.dim(1); ++c) {
      const double z = codes.at(r, c);
      if (!(z >= 0.0 && z <= 1.0)) {
        throw ContractError("binarize: code value " + std::to_string(z) + " outside [0,1]");
      }
      bits.set(r, c, z >= 0.5);
    }
  return bits;
}

const char* view_name(View view) { return view == View::kImage ? "image" : "text"; }

View parse_view(const std::string& name) {
  if (name == "image") return View::kImage;
  if (name == "text") return View::kText;
  throw ArgumentError("unknown view '" + name + "' (expected image or text)");
}

View ViewModel::view() const {
  return std::holds_alternative<ImageProjection>(projection) ? View::kImage : View::kText;
}

ModelForward ViewModel::project(const Tensor& input, Mode mode, bool with_grad) {
  return std::visit([&](auto& p) { return p.forward(input, mode, with_grad); }, projection);
}

ParamSet& ViewModel::projection_params() {
  return std::visit([](auto& p) -> ParamSet& { return p.params(); }, projection);
}

std::size_t ViewModel::input_dim() const {
  return std::visit([](const auto& p) { return p.input_dim(); }, projection);
}

std::size_t ViewModel::code_bits() const {
  return std::visit([](const auto& p) { return p.code_bits(); }, projection);
}

NamedTensors ViewModel::state() {
  NamedTensors out = std::visit([](auto& p) { return p.state(); }, projection);
  append_state(out, "", classifier.params());
  return out;
}

TwoViewModel TwoViewModel::create(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.categories == 0) throw ConfigError("model needs at least one category");
  TwoViewModel m;
  m.spec = spec;
  const ModelConfig& c = spec.config;
  std::seed_seq image_seq{seed, std::uint64_t{0}};
  std::mt19937_64 image_rng(image_seq);
  m.image.projection = ImageProjection(spec.feature_dim, c, image_rng);
  m.image.classifier = Classifier(c.code_bits, spec.categories, c.init_range, image_rng);
  std::seed_seq text_seq{seed, std::uint64_t{1}};
  std::mt19937_64 text_rng(text_seq);
  m.text.projection = TextProjection(spec.embed_dim, spec.max_words, c, text_rng);
  m.text.classifier = Classifier(c.code_bits, spec.categories, c.init_range, text_rng);
  return m;
}

NamedTensors TwoViewModel::state() {
  NamedTensors out;
  for (auto& [name, t] : image.state()) out.emplace_back("image." + name, t);
  for (auto& [name, t] : text.state()) out.emplace_back("text." + name, t);
  return out;
}

Tensor encode(ViewModel& model, const Tensor& inputs, std::size_t chunk) {
  require_rank(inputs, 2, "encode inputs");
  const std::size_t n = inputs.dim(0), bits = model.code_bits();
  Tensor out({n, bits});
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    Tensor z = model.project(gather_rows(inputs, rows), Mode::kInfer, false).value;
    std::copy(z.data().begin(), z.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * bits));
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[] = "DCVK";
constexpr std::uint8_t kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(TwoViewModel& model, const std::string& config_json) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u8(kCheckpointVersion);
  w.str(config_json);
  const ModelSpec& s = model.spec;
  w.u64(s.feature_dim);
  w.u64(s.embed_dim);
  w.u64(s.max_words);
  w.u64(s.categories);
  w.u64(s.config.code_bits);
  w.u32(static_cast<std::uint32_t>(s.config.image_hidden.size()));
  for (std::size_t h : s.config.image_hidden) w.u64(h);
  w.u64(s.config.conv1_kernels);
  w.u64(s.config.conv2_kernels);
  w.u64(s.config.text_fc);
  w.f64(s.config.init_range);

  const NamedTensors tensors = model.state();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) w.u64(d);
    for (double v : t->data()) w.f64(v);
  }
  return w.buffer();
}

Checkpoint deserialize_checkpoint(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kCheckpointMagic, "checkpoint");
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_json = r.str();
  ModelSpec s;
  s.feature_dim = r.u64();
  s.embed_dim = r.u64();
  s.max_words = r.u64();
  s.categories = r.u64();
  s.config.code_bits = r.u64();
  s.config.image_hidden.resize(r.u32());
  for (auto& h : s.config.image_hidden) h = r.u64();
  s.config.conv1_kernels = r.u64();
  s.config.conv2_kernels = r.u64();
  s.config.text_fc = r.u64();
  s.config.init_range = r.f64();
  ck.model = TwoViewModel::create(s, 0);

  NamedTensors slots = ck.model.state();
  const std::uint32_t count = r.u32();
  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                      std::to_string(slots.size()));
  }
  std::vector<bool> filled(slots.size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto slot = std::find_if(slots.begin(), slots.end(), [&](auto& e) { return e.first == name; });
    if (slot == slots.end()) throw FormatError("unexpected tensor '" + name + "' in checkpoint");
    const auto idx = static_cast<std::size_t>(slot - slots.begin());
    if (filled[idx]) throw FormatError("tensor '" + name + "' repeated in checkpoint");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != slot->second->shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(slot->second->shape()));
    }
    for (double& v : slot->second->data()) v = r.f64();
    filled[idx] = true;
  }
  if (!r.at_end()) throw FormatError("trailing bytes in checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, TwoViewModel& model,
                     const std::string& config_json) {
  io::write_file(path, serialize_checkpoint(model, config_json));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace dcvh
