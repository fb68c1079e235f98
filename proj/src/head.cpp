#include "colproj/head.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "colproj/errors.hpp"
#include "colproj/rng.hpp"

namespace colproj {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

std::string layer_name(std::size_t i, const char* what) {
  return "layers." + std::to_string(i) + "." + what;
}

// Residual-wrapped blocks: every non-final block, or the single block at
// depth 1.
bool is_wrapped(const HeadConfig& c, std::size_t layer) {
  if (!c.residual) return false;
  return c.depth == 1 || layer + 1 < c.depth;
}

}  // namespace

HeadFamily parse_head_family(const std::string& name) {
  if (name == "ffn") return HeadFamily::ffn;
  if (name == "glu") return HeadFamily::glu;
  throw ConfigError("unknown head family '" + name + "'");
}

std::string to_string(HeadFamily f) { return f == HeadFamily::ffn ? "ffn" : "glu"; }

std::string to_string(ParamRole r) {
  switch (r) {
    case ParamRole::weight: return "weight";
    case ParamRole::gate_weight: return "gate_weight";
    case ParamRole::bias: return "bias";
    case ParamRole::gate_bias: return "gate_bias";
    case ParamRole::upcast: return "upcast";
    case ParamRole::alpha: return "alpha";
  }
  return "unknown";
}

bool is_weight_matrix(ParamRole r) {
  return r == ParamRole::weight || r == ParamRole::gate_weight || r == ParamRole::upcast;
}

std::size_t HeadConfig::intermediate_dim() const {
  return static_cast<std::size_t>(std::llround(rho * static_cast<double>(input_dim)));
}

void HeadConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be at least 1");
  if (output_dim == 0) throw ConfigError("output_dim must be at least 1");
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be a positive number");
  if (!std::isfinite(alpha_init)) throw ConfigError("alpha_init must be finite");
  if (depth > 1) {
    const std::size_t m = intermediate_dim();
    if (m == 0) {
      throw ConfigError("intermediate dimension round(rho*d) is 0");
    }
    if (output_dim > m) {
      throw ConfigError("output_dim " + std::to_string(output_dim) +
                        " exceeds intermediate dimension " + std::to_string(m));
    }
  }
}

std::string HeadConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "input_dim=" << input_dim << ";output_dim=" << output_dim << ";depth=" << depth
     << ";family=" << to_string(family) << ";activation=" << to_string(activation)
     << ";gate=" << to_string(gate) << ";rho=" << rho << ";residual=" << (residual ? 1 : 0)
     << ";bias=" << (has_bias() ? 1 : 0) << ";alpha_init=" << alpha_init;
  return os.str();
}

std::uint64_t HeadConfig::hash() const {
  const std::string s = canonical();
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, s.data(), s.size());
  return h;
}

HeadConfig HeadConfig::linear(std::size_t input_dim, std::size_t output_dim) {
  HeadConfig c;
  c.input_dim = input_dim;
  c.output_dim = output_dim;
  return c;
}

HeadLayout HeadLayout::for_config(const HeadConfig& c) {
  c.validate();
  HeadLayout layout;
  std::vector<std::size_t> dims{c.input_dim};
  for (std::size_t i = 1; i < c.depth; ++i) dims.push_back(c.intermediate_dim());
  dims.push_back(c.output_dim);

  auto push = [&layout](std::string name, ParamRole role, std::size_t r, std::size_t cols) {
    layout.tensors.push_back(TensorSpec{std::move(name), role, r, cols});
    return layout.tensors.size() - 1;
  };

  const bool glu = c.family == HeadFamily::glu;
  for (std::size_t i = 0; i < c.depth; ++i) {
    LayerSlots slots{};
    slots.weight = push(layer_name(i, "weight"), ParamRole::weight, dims[i], dims[i + 1]);
    if (c.has_bias()) {
      slots.bias = push(layer_name(i, "bias"), ParamRole::bias, 1, dims[i + 1]);
    }
    if (glu) {
      slots.gate_weight =
          push(layer_name(i, "gate_weight"), ParamRole::gate_weight, dims[i], dims[i + 1]);
      if (c.has_bias()) {
        slots.gate_bias = push(layer_name(i, "gate_bias"), ParamRole::gate_bias, 1, dims[i + 1]);
      }
    }
    layout.layers.push_back(slots);
  }
  if (c.residual) {
    layout.upcast = push("upcast", ParamRole::upcast, dims[0], dims[1]);
    for (std::size_t i = 0; i < c.depth; ++i) {
      if (is_wrapped(c, i)) {
        layout.layers[i].alpha = push(layer_name(i, "alpha"), ParamRole::alpha, 1, 1);
      }
    }
  }
  return layout;
}

HeadParams::HeadParams(HeadConfig config, std::uint64_t seed, std::vector<HeadTensor> tensors)
    : config_(std::move(config)),
      layout_(HeadLayout::for_config(config_)),
      seed_(seed),
      tensors_(std::move(tensors)) {
  if (tensors_.size() != layout_.tensors.size()) {
    throw ShapeError("head expects " + std::to_string(layout_.tensors.size()) + " tensors, got " +
                     std::to_string(tensors_.size()));
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const TensorSpec& spec = layout_.tensors[i];
    const HeadTensor& t = tensors_[i];
    if (t.name != spec.name || t.role != spec.role || t.value.rows() != spec.rows ||
        t.value.cols() != spec.cols) {
      throw ShapeError("tensor " + std::to_string(i) + " is '" + t.name + "' " +
                       t.value.shape_string() + ", expected '" + spec.name + "' " +
                       std::to_string(spec.rows) + "x" + std::to_string(spec.cols));
    }
  }
}

std::size_t HeadParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

std::uint64_t HeadParams::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tensors_) {
    for (double v : t.value.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      fnv_mix(h, &bits, sizeof bits);
    }
  }
  return h;
}

bool operator==(const HeadParams& a, const HeadParams& b) {
  if (a.config_.canonical() != b.config_.canonical() || a.seed_ != b.seed_ ||
      a.tensors_.size() != b.tensors_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.role != y.role || !x.value.same_shape(y.value)) return false;
    // Bitwise comparison so that -0.0 vs 0.0 and NaN payloads count as different.
    if (std::memcmp(x.value.values().data(), y.value.values().data(),
                    x.value.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

HeadParams build_head(const HeadConfig& config, std::uint64_t seed) {
  const HeadLayout layout = HeadLayout::for_config(config);
  Rng rng(derive_seed(seed, 0x1417));
  std::vector<HeadTensor> tensors;
  tensors.reserve(layout.tensors.size());
  for (const TensorSpec& spec : layout.tensors) {
    Matrix value;
    switch (spec.role) {
      case ParamRole::weight:
      case ParamRole::gate_weight: {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
        value = rng.uniform_matrix(spec.rows, spec.cols, -limit, limit);
        break;
      }
      case ParamRole::bias:
      case ParamRole::gate_bias:
        value = Matrix::zeros(spec.rows, spec.cols);
        break;
      case ParamRole::upcast:
        value = Matrix::identity(spec.rows, spec.cols);
        break;
      case ParamRole::alpha:
        value = Matrix(1, 1, config.alpha_init);
        break;
    }
    tensors.push_back(HeadTensor{spec.name, spec.role, std::move(value)});
  }
  return HeadParams(config, seed, std::move(tensors));
}

std::size_t parameter_count(const HeadConfig& config) {
  std::size_t n = 0;
  for (const auto& spec : HeadLayout::for_config(config).tensors) n += spec.rows * spec.cols;
  return n;
}

BoundHead bind_head(ad::Tape& tape, const HeadParams& params, bool trainable) {
  BoundHead bound;
  bound.params = &params;
  bound.tensors.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) {
    bound.tensors.push_back(trainable ? tape.leaf(t.value) : tape.constant(t.value));
  }
  return bound;
}

ad::Var head_project(const BoundHead& head, ad::Var x) {
  const HeadConfig& c = head.params->config();
  const HeadLayout& layout = head.params->layout();
  if (x.value().cols() != c.input_dim) {
    throw ShapeError("head expects token dim " + std::to_string(c.input_dim) + ", got " +
                     x.value().shape_string());
  }
  const auto& t = head.tensors;
  ad::Var h = x;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const auto& slots = layout.layers[i];
    ad::Var z = ad::matmul(h, t[slots.weight]);
    if (slots.bias) z = ad::add_row_bias(z, t[*slots.bias]);
    if (c.family == HeadFamily::glu) {
      ad::Var g = ad::matmul(h, t[*slots.gate_weight]);
      if (slots.gate_bias) g = ad::add_row_bias(g, t[*slots.gate_bias]);
      z = ad::elementwise_mul(z, ad::apply_activation(g, c.gate));
    }
    const bool final_layer = i + 1 == c.depth;
    if (!final_layer && c.activation != Activation::identity) {
      z = ad::apply_activation(z, c.activation);
    }
    if (slots.alpha) {
      const ad::Var shortcut = i == 0 ? ad::matmul(h, t[*layout.upcast]) : h;
      z = ad::add(shortcut, ad::scale_by(z, t[*slots.alpha]));
    }
    h = z;
  }
  return h;
}

ad::Var head_forward(const BoundHead& head, ad::Var x) {
  return ad::row_l2_normalize(head_project(head, x));
}

Matrix head_project(const HeadParams& params, const Matrix& x) {
  ad::Tape tape;
  const BoundHead bound = bind_head(tape, params, false);
  return head_project(bound, tape.constant(x)).value();
}

Matrix head_forward(const HeadParams& params, const Matrix& x) {
  ad::Tape tape;
  const BoundHead bound = bind_head(tape, params, false);
  return head_forward(bound, tape.constant(x)).value();
}

bool is_globally_linear(const HeadConfig& c) {
  return c.family == HeadFamily::ffn && (c.depth == 1 || c.activation == Activation::identity) &&
         !c.residual && !c.has_bias();
}

Matrix effective_linear_map(const HeadParams& params) {
  const HeadConfig& c = params.config();
  if (c.family != HeadFamily::ffn) {
    throw ContractError("effective_linear_map: head is not linear (family=glu)");
  }
  if (c.depth > 1 && c.activation != Activation::identity) {
    throw ContractError("effective_linear_map: head is not linear (activation=" +
                        to_string(c.activation) + ")");
  }
  if (c.residual) {
    throw ContractError("effective_linear_map: head is not linear (residual=true)");
  }
  if (c.has_bias()) {
    throw ContractError("effective_linear_map: head is not linear (bias=true)");
  }
  Matrix w = params.tensor(params.layout().layers[0].weight);
  for (std::size_t i = 1; i < c.depth; ++i) {
    w = matmul(w, params.tensor(params.layout().layers[i].weight));
  }
  return w;
}

}  // namespace colproj
