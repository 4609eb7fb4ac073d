#pragma once

// Encoder-processor-decoder graph network whose node updates attend over
// the history of message-passing states with Hadamard-product attention.

#include <cstddef>
#include <string>
#include <vector>

#include "mpt/graph.hpp"
#include "mpt/rng.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

enum class Mechanism { kHpa, kDpa };

std::string to_string(Mechanism m);
Mechanism mechanism_from_string(const std::string& s);

struct ModelConfig {
  std::size_t node_inputs = 0;
  std::size_t edge_inputs = 0;
  std::size_t outputs = 0;
  std::size_t latent = 128;
  std::size_t hidden = 128;
  std::size_t mp_steps = 15;
  std::size_t heads = 4;
  double dropout = 0.1;
  Mechanism mechanism = Mechanism::kHpa;
  bool layer_norm = true;  // on f1, f2, f3 outputs
  bool residual = true;    // on edge and node updates

  std::size_t head_dim() const { return latent / heads; }
  /// Longest token sequence any node update sees: two tokens per pass.
  std::size_t max_tokens() const { return 2 * mp_steps; }
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Two-hidden-layer ReLU MLP, optionally layer-normalized at the output.
struct Mlp {
  Tensor w0, b0, w1, b1, w2, b2;
  Tensor ln_gain, ln_bias;  // undefined when layer norm is off

  static Mlp init(std::size_t in, std::size_t hidden, std::size_t out, bool layer_norm, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

Tensor mlp_forward(const Tensor& x, const Mlp& mlp);

struct ModelParameters {
  Mlp node_encoder;    // f1
  Mlp edge_encoder;    // f2
  Mlp edge_processor;  // f3
  Mlp decoder;         // f5
  // Per-head query/key/value projections, packed column-wise: head h owns
  // columns [h*d_head, (h+1)*d_head).
  Tensor w_query, w_key, w_value;
  std::vector<Tensor> flatten;  // per head: (max_tokens*d_head) x d_head
  Tensor w_out, b_out;          // latent x latent, latent
  Tensor lambda;                // [1]; defined only when the loss learns it

  static ModelParameters init(const ModelConfig& cfg, Rng& rng);
  /// Stable ordering used by the optimizer and checkpoints.
  std::vector<NamedTensor> named() const;
};

/// Per-iteration latent graph state plus the token history consumed by the
/// node update. tokens = [v_0, ē_0, v_1, ē_1, ...], ē_m the sum of latents of
/// edges arriving at each node at pass m.
struct LatentState {
  Tensor nodes;  // [N, latent]
  Tensor edges;  // [E_directed, latent]
  std::vector<Tensor> tokens;
  std::vector<Tensor> key_cache;    // projected tokens, filled lazily
  std::vector<Tensor> value_cache;
  std::size_t iteration = 0;

  std::size_t num_pairs() const { return tokens.size() / 2; }
};

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // required when train && dropout > 0
};

struct GraphInput {
  std::size_t num_nodes = 0;
  const DirectedEdges* edges = nullptr;
  Tensor node_features;  // [N, node_inputs]
  Tensor edge_features;  // [E_directed, edge_inputs]
};

struct HpaTrace {
  Tensor scores;     // [b, s_max, d]
  Tensor attention;  // [b, s_max, d], softmax over the feature axis
  Tensor weighted;   // [b, s_max, d]
  Tensor output;     // [b, d]
};

/// Scaled Hadamard-product attention. Q [b,d], K and V [b,s,d] with s <= max_tokens;
/// K/V are zero-padded to max_tokens before the flattening map
/// [(max_tokens*d) x d] is applied.
HpaTrace hpa_trace(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& flatten_map,
                   std::size_t max_tokens);
Tensor hpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& flatten_map, std::size_t max_tokens);

/// Raw scores Q∘K/√d, [b, s, d] (no padding).
Tensor hpa_scores(const Tensor& q, const Tensor& k);

/// Scaled dot-product attention over the sequence axis; [b,d] output.
Tensor dpa(const Tensor& q, const Tensor& k, const Tensor& v);

/// Multi-head attention on already-projected Q [b,latent], K/V [b,s,latent].
Tensor mhha_projected(const Tensor& q, const Tensor& k, const Tensor& v, const ModelParameters& params,
                      const ModelConfig& cfg, const ForwardContext& ctx);
/// Multi-head attention on raw Q [b,latent], K/V [b,s,latent].
Tensor mhha(const Tensor& q, const Tensor& k, const Tensor& v, const ModelParameters& params, const ModelConfig& cfg,
            const ForwardContext& ctx);

class MessagePassingTransformer {
 public:
  MessagePassingTransformer(ModelConfig cfg, std::uint64_t seed);
  MessagePassingTransformer(ModelConfig cfg, ModelParameters params);

  const ModelConfig& config() const { return cfg_; }
  ModelParameters& params() { return params_; }
  const ModelParameters& params() const { return params_; }

  LatentState encode(const GraphInput& in) const;
  void edge_update(LatentState& state, const DirectedEdges& edges) const;
  void node_update(LatentState& state, const DirectedEdges& edges, const ForwardContext& ctx) const;
  Tensor decode(const LatentState& state) const;

  /// encode, mp_steps x (edge_update, node_update), decode. Returns [N, outputs].
  Tensor forward(const GraphInput& in, const ForwardContext& ctx) const;

 private:
  ModelConfig cfg_;
  ModelParameters params_;
};

}  // namespace mpt
