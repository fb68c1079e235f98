#pragma once

// Projection heads: the map from backbone token vectors (dim d) to output
// token vectors (dim k), followed by row L2 normalization.
//
// Layer i maps dims[i] → dims[i+1] with dims = {d, m, ..., m, k} and
// m = round(rho·d). A non-final layer output passes through the activation.
// With residual=true every non-final block becomes h + α·g(h); the first
// block's shortcut is an identity-initialized d×m upcast. The final m→k
// block carries no residual, except at depth 1 where the single d→k block
// is wrapped with an identity-initialized d×k shortcut.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colproj/autodiff.hpp"
#include "colproj/matrix.hpp"

namespace colproj {

enum class HeadFamily { ffn, glu };

HeadFamily parse_head_family(const std::string& name);
std::string to_string(HeadFamily f);

struct HeadConfig {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t depth = 1;
  HeadFamily family = HeadFamily::ffn;
  /// Applied to non-final layer outputs; ignored at depth 1.
  Activation activation = Activation::identity;
  /// GLU gate ψ; ignored for FFN heads.
  Activation gate = Activation::sigmoid;
  double rho = 1.0;
  bool residual = false;
  /// Unset means: biases on for depth ≥ 2, off for the depth-1 baseline.
  std::optional<bool> bias;
  double alpha_init = 1.0;

  std::size_t intermediate_dim() const;
  bool has_bias() const { return bias.value_or(depth > 1); }
  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  /// Stable textual form; equal configs give equal strings.
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t hash() const;

  /// The depth-1 linear baseline h(x) = xW with the same dimensions.
  static HeadConfig linear(std::size_t input_dim, std::size_t output_dim);
};

enum class ParamRole { weight, gate_weight, bias, gate_bias, upcast, alpha };

std::string to_string(ParamRole r);
/// Weight matrices (subject to weight decay) as opposed to biases and α.
bool is_weight_matrix(ParamRole r);

struct TensorSpec {
  std::string name;
  ParamRole role;
  std::size_t rows;
  std::size_t cols;
};

/// Where each tensor of a head lives in declaration order.
struct HeadLayout {
  struct LayerSlots {
    std::size_t weight;
    std::optional<std::size_t> bias;
    std::optional<std::size_t> gate_weight;
    std::optional<std::size_t> gate_bias;
    std::optional<std::size_t> alpha;  // set when this block is residual-wrapped
  };

  std::vector<TensorSpec> tensors;
  std::vector<LayerSlots> layers;
  std::optional<std::size_t> upcast;

  static HeadLayout for_config(const HeadConfig& config);
};

struct HeadTensor {
  std::string name;
  ParamRole role;
  Matrix value;
};

class HeadParams {
 public:
  /// Checks every tensor against the layout implied by `config`.
  HeadParams(HeadConfig config, std::uint64_t seed, std::vector<HeadTensor> tensors);

  const HeadConfig& config() const { return config_; }
  const HeadLayout& layout() const { return layout_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const HeadTensor> tensors() const { return tensors_; }
  std::span<HeadTensor> tensors() { return tensors_; }
  const Matrix& tensor(std::size_t i) const { return tensors_.at(i).value; }
  Matrix& tensor(std::size_t i) { return tensors_.at(i).value; }

  std::size_t parameter_count() const;
  /// FNV-1a 64 over the raw bytes of every tensor, in declaration order.
  std::uint64_t checksum() const;

  friend bool operator==(const HeadParams& a, const HeadParams& b);

 private:
  HeadConfig config_;
  HeadLayout layout_;
  std::uint64_t seed_ = 0;
  std::vector<HeadTensor> tensors_;
};

/// Deterministic initialization: fan-balanced uniform weights, zero
/// biases, identity upcast, α = alpha_init.
HeadParams build_head(const HeadConfig& config, std::uint64_t seed);

std::size_t parameter_count(const HeadConfig& config);

/// Head parameters recorded on a tape, one Var per tensor.
struct BoundHead {
  const HeadParams* params = nullptr;
  std::vector<ad::Var> tensors;
};

/// Records every tensor as a leaf (trainable) or constant.
BoundHead bind_head(ad::Tape& tape, const HeadParams& params, bool trainable = true);

/// Pre-normalization projection on a tape.
ad::Var head_project(const BoundHead& head, ad::Var x);
/// Projection followed by row L2 normalization.
ad::Var head_forward(const BoundHead& head, ad::Var x);

Matrix head_project(const HeadParams& params, const Matrix& x);
Matrix head_forward(const HeadParams& params, const Matrix& x);

/// FFN, identity activation (or depth 1), no residual, no bias.
bool is_globally_linear(const HeadConfig& config);

/// Product of all layer matrices for a globally linear head (FFN, identity
/// activation, no residual, no bias). Throws ContractError otherwise.
Matrix effective_linear_map(const HeadParams& params);

}  // namespace colproj
