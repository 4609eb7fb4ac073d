#include "mpt/model.hpp"

#include <cmath>

#include "mpt/error.hpp"
#include "mpt/ops.hpp"

namespace mpt {

std::string to_string(Mechanism m) { return m == Mechanism::kHpa ? "hpa" : "dpa"; }

Mechanism mechanism_from_string(const std::string& s) {
  if (s == "hpa") return Mechanism::kHpa;
  if (s == "dpa") return Mechanism::kDpa;
  throw ConfigError("unknown attention mechanism '" + s + "' (expected hpa or dpa)");
}

void ModelConfig::validate() const {
  if (node_inputs == 0 || edge_inputs == 0 || outputs == 0) throw ConfigError("model input/output widths must be > 0");
  if (latent == 0 || hidden == 0 || mp_steps == 0 || heads == 0) throw ConfigError("model sizes must be > 0");
  if (latent % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide latent width (" + std::to_string(latent) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  return uniform_tensor({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
}

Tensor he(std::size_t in, std::size_t out, Rng& rng) {
  return uniform_tensor({in, out}, std::sqrt(6.0 / static_cast<double>(in)), rng);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

// [N, d] tokens -> [N, s, d]
Tensor stack_tokens(const std::vector<Tensor>& tokens) {
  std::vector<Tensor> parts;
  parts.reserve(tokens.size());
  for (const auto& t : tokens) parts.push_back(reshape(t, {t.dim(0), 1, t.dim(1)}));
  return concat(parts, 1);
}

}  // namespace

Mlp Mlp::init(std::size_t in, std::size_t hidden, std::size_t out, bool layer_norm, Rng& rng) {
  Mlp m;
  m.w0 = he(in, hidden, rng);
  m.b0 = zeros_param({hidden});
  m.w1 = he(hidden, hidden, rng);
  m.b1 = zeros_param({hidden});
  m.w2 = glorot(hidden, out, rng);
  m.b2 = zeros_param({out});
  if (layer_norm) {
    m.ln_gain = Tensor::full({out}, 1.0, true);
    m.ln_bias = zeros_param({out});
  }
  return m;
}

void Mlp::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w0", w0});
  out.push_back({prefix + ".b0", b0});
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
  if (ln_gain.defined()) {
    out.push_back({prefix + ".ln_gain", ln_gain});
    out.push_back({prefix + ".ln_bias", ln_bias});
  }
}

Tensor mlp_forward(const Tensor& x, const Mlp& mlp) {
  if (x.rank() != 2 || x.dim(1) != mlp.w0.dim(0)) {
    throw DimensionError("mlp input " + shape_str(x.shape()) + " does not match first layer " +
                         shape_str(mlp.w0.shape()));
  }
  Tensor h = relu(affine(x, mlp.w0, mlp.b0));
  h = relu(affine(h, mlp.w1, mlp.b1));
  Tensor y = affine(h, mlp.w2, mlp.b2);
  if (mlp.ln_gain.defined()) y = layernorm(y, mlp.ln_gain, mlp.ln_bias);
  return y;
}

ModelParameters ModelParameters::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  NoGradGuard no_grad;
  ModelParameters p;
  p.node_encoder = Mlp::init(cfg.node_inputs, cfg.hidden, cfg.latent, cfg.layer_norm, rng);
  p.edge_encoder = Mlp::init(cfg.edge_inputs, cfg.hidden, cfg.latent, cfg.layer_norm, rng);
  p.edge_processor = Mlp::init(3 * cfg.latent, cfg.hidden, cfg.latent, cfg.layer_norm, rng);
  p.decoder = Mlp::init(cfg.latent, cfg.hidden, cfg.outputs, false, rng);
  // Glorot per head, packed side by side.
  auto packed = [&] {
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) heads.push_back(glorot(cfg.latent, cfg.head_dim(), rng));
    Tensor t = concat(heads, 1).detach();
    t.set_requires_grad(true);
    return t;
  };
  p.w_query = packed();
  p.w_key = packed();
  p.w_value = packed();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    p.flatten.push_back(glorot(cfg.max_tokens() * cfg.head_dim(), cfg.head_dim(), rng));
  }
  p.w_out = glorot(cfg.latent, cfg.latent, rng);
  p.b_out = zeros_param({cfg.latent});
  return p;
}

std::vector<NamedTensor> ModelParameters::named() const {
  std::vector<NamedTensor> out;
  node_encoder.collect("node_encoder", out);
  edge_encoder.collect("edge_encoder", out);
  edge_processor.collect("edge_processor", out);
  decoder.collect("decoder", out);
  out.push_back({"attention.w_query", w_query});
  out.push_back({"attention.w_key", w_key});
  out.push_back({"attention.w_value", w_value});
  for (std::size_t h = 0; h < flatten.size(); ++h) out.push_back({"attention.flatten." + std::to_string(h), flatten[h]});
  out.push_back({"attention.w_out", w_out});
  out.push_back({"attention.b_out", b_out});
  if (lambda.defined()) out.push_back({"gfl.lambda", lambda});
  return out;
}

Tensor hpa_scores(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 3 || k.dim(0) != q.dim(0) || k.dim(2) != q.dim(1)) {
    throw DimensionError("hpa: Q " + shape_str(q.shape()) + " incompatible with K " + shape_str(k.shape()));
  }
  const auto d = q.dim(1);
  // Q[i,k] expands to Q[i,j,k] across the token axis.
  return scale(hadamard(reshape(q, {q.dim(0), 1, d}), k), 1.0 / std::sqrt(static_cast<double>(d)));
}

HpaTrace hpa_trace(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& flatten_map,
                   std::size_t max_tokens) {
  if (v.shape() != k.shape()) {
    throw DimensionError("hpa: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) + " differ");
  }
  if (k.rank() != 3) throw DimensionError("hpa: K must be [b,s,d], got " + shape_str(k.shape()));
  const auto b = k.dim(0), s = k.dim(1), d = k.dim(2);
  if (s > max_tokens) {
    throw SequenceOverflowError("hpa: sequence of " + std::to_string(s) + " tokens exceeds maximum " +
                                std::to_string(max_tokens));
  }
  if (flatten_map.rank() != 2 || flatten_map.dim(0) != max_tokens * d || flatten_map.dim(1) != d) {
    throw DimensionError("hpa: flatten map " + shape_str(flatten_map.shape()) + " expected [" +
                         std::to_string(max_tokens * d) + "," + std::to_string(d) + "]");
  }
  Tensor kp = k, vp = v;
  if (s < max_tokens) {
    const Tensor pad = Tensor::zeros({b, max_tokens - s, d});
    kp = concat({k, pad}, 1);
    vp = concat({v, pad}, 1);
  }
  HpaTrace t;
  t.scores = hpa_scores(q, kp);
  t.attention = softmax_axis(t.scores, 2);
  t.weighted = hadamard(t.attention, vp);
  t.output = matmul(reshape(t.weighted, {b, max_tokens * d}), flatten_map);
  return t;
}

Tensor hpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& flatten_map, std::size_t max_tokens) {
  return hpa_trace(q, k, v, flatten_map, max_tokens).output;
}

Tensor dpa(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (v.shape() != k.shape()) {
    throw DimensionError("dpa: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) + " differ");
  }
  const auto b = k.dim(0), s = k.dim(1);
  Tensor logits = sum(hpa_scores(q, k), 2);  // [b, s]
  Tensor weights = softmax_axis(logits, 1);
  return sum(hadamard(reshape(weights, {b, s, 1}), v), 1);
}

Tensor mhha_projected(const Tensor& q, const Tensor& k, const Tensor& v, const ModelParameters& params,
                      const ModelConfig& cfg, const ForwardContext& ctx) {
  const auto dh = cfg.head_dim();
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Tensor qh = narrow(q, 1, h * dh, dh);
    Tensor kh = narrow(k, 2, h * dh, dh);
    Tensor vh = narrow(v, 2, h * dh, dh);
    heads.push_back(cfg.mechanism == Mechanism::kHpa ? hpa(qh, kh, vh, params.flatten[h], cfg.max_tokens())
                                                     : dpa(qh, kh, vh));
  }
  Tensor out = add(matmul(concat(heads, 1), params.w_out), params.b_out);
  if (ctx.train && cfg.dropout > 0.0) {
    if (ctx.rng == nullptr) throw ContractError("training forward pass with dropout needs an rng");
    out = dropout(out, cfg.dropout, true, *ctx.rng);
  }
  return out;
}

Tensor mhha(const Tensor& q, const Tensor& k, const Tensor& v, const ModelParameters& params, const ModelConfig& cfg,
            const ForwardContext& ctx) {
  if (k.rank() != 3 || k.dim(2) != cfg.latent || q.rank() != 2 || q.dim(1) != cfg.latent) {
    throw DimensionError("mhha: Q " + shape_str(q.shape()) + " K " + shape_str(k.shape()) + " for latent width " +
                         std::to_string(cfg.latent));
  }
  const auto b = k.dim(0), s = k.dim(1);
  auto project = [&](const Tensor& x, const Tensor& w) {
    return reshape(matmul(reshape(x, {b * s, cfg.latent}), w), {b, s, cfg.latent});
  };
  return mhha_projected(matmul(q, params.w_query), project(k, params.w_key), project(v, params.w_value), params, cfg,
                        ctx);
}

MessagePassingTransformer::MessagePassingTransformer(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  params_ = ModelParameters::init(cfg_, rng);
}

MessagePassingTransformer::MessagePassingTransformer(ModelConfig cfg, ModelParameters params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
}

LatentState MessagePassingTransformer::encode(const GraphInput& in) const {
  if (in.edges == nullptr) throw ContractError("encode: graph input has no edge list");
  if (in.node_features.rank() != 2 || in.node_features.dim(0) != in.num_nodes ||
      in.node_features.dim(1) != cfg_.node_inputs) {
    throw DimensionError("encode: node features " + shape_str(in.node_features.shape()) + " expected [" +
                         std::to_string(in.num_nodes) + "," + std::to_string(cfg_.node_inputs) + "]");
  }
  if (in.edge_features.rank() != 2 || in.edge_features.dim(0) != in.edges->size() ||
      in.edge_features.dim(1) != cfg_.edge_inputs) {
    throw DimensionError("encode: edge features " + shape_str(in.edge_features.shape()) + " expected [" +
                         std::to_string(in.edges->size()) + "," + std::to_string(cfg_.edge_inputs) + "]");
  }
  LatentState st;
  st.nodes = mlp_forward(in.node_features, params_.node_encoder);
  st.edges = mlp_forward(in.edge_features, params_.edge_encoder);
  st.tokens = {st.nodes, scatter_add_rows(st.edges, in.edges->receivers, in.num_nodes)};
  st.iteration = 0;
  return st;
}

void MessagePassingTransformer::edge_update(LatentState& state, const DirectedEdges& edges) const {
  if (state.iteration >= cfg_.mp_steps) throw ContractError("edge_update past the last message-passing step");
  Tensor input = concat({state.edges, gather_rows(state.nodes, edges.receivers), gather_rows(state.nodes, edges.senders)}, 1);
  Tensor delta = mlp_forward(input, params_.edge_processor);
  state.edges = cfg_.residual ? add(state.edges, delta) : delta;
}

void MessagePassingTransformer::node_update(LatentState& state, const DirectedEdges& edges,
                                            const ForwardContext& ctx) const {
  if (state.iteration >= cfg_.mp_steps) throw ContractError("node_update past the last message-passing step");
  // Token projections never change once made, so each is computed once.
  for (std::size_t t = state.key_cache.size(); t < state.tokens.size(); ++t) {
    state.key_cache.push_back(matmul(state.tokens[t], params_.w_key));
    state.value_cache.push_back(matmul(state.tokens[t], params_.w_value));
  }
  Tensor q = matmul(state.nodes, params_.w_query);
  Tensor delta = mhha_projected(q, stack_tokens(state.key_cache), stack_tokens(state.value_cache), params_, cfg_, ctx);
  state.nodes = cfg_.residual ? add(state.nodes, delta) : delta;
  const std::size_t n = state.nodes.dim(0);
  state.tokens.push_back(state.nodes);
  state.tokens.push_back(scatter_add_rows(state.edges, edges.receivers, n));
  ++state.iteration;
}

Tensor MessagePassingTransformer::decode(const LatentState& state) const {
  if (state.iteration != cfg_.mp_steps) {
    throw ContractError("decode after " + std::to_string(state.iteration) + " of " + std::to_string(cfg_.mp_steps) +
                        " message-passing steps");
  }
  return mlp_forward(state.nodes, params_.decoder);
}

Tensor MessagePassingTransformer::forward(const GraphInput& in, const ForwardContext& ctx) const {
  LatentState st = encode(in);
  for (std::size_t k = 0; k < cfg_.mp_steps; ++k) {
    edge_update(st, *in.edges);
    node_update(st, *in.edges, ctx);
  }
  return decode(st);
}

}  // namespace mpt
