// The multi-view fully convolutional matching encoder and its prediction
// head. A dialogue (context utterances + response) is stacked into a
// (turns, words, dim) tensor and refined by four stages, each wired with a
// residual add so that zero-initialized convolutions reduce every stage to
// the identity map:
//
//   local matching      two 1x1 mixes + a (k1 x s1) word-axis conv
//   context matching    1D convs over the flattened word sequence
//   discourse matching  orthogonal (1 x s2) / (s2 x 1) convs across turns
//   aggregation         word-axis max-pool, two 1D convs over (turns, dim),
//                       then a turn-axis max-pool down to a single vector
//
// All convolutions keep dim channels in and out, which is what makes the
// residual adds shape-compatible. Pooling is mask-aware: padded token
// positions are zeroed at the embedding and excluded from every max.

#pragma once

#include "dconv/tape.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace dconv {

struct ModelConfig {
  int turns = 10;   // utterance slots including the response
  int words = 50;   // token positions per utterance
  int dim = 200;    // embedding dimension / channel count

  // Kernel sizes.
  int k1 = 1, s1 = 3, s2 = 3;
  int w1 = 1, w2 = 5, w3 = 3, w4 = 1;

  // Ablation switches: a disabled matching stage becomes the identity map;
  // disabling aggregation falls back to plain two-axis max-pooling.
  bool ablate_local = false;
  bool ablate_context = false;
  bool ablate_discourse = false;
  bool ablate_aggregate = false;

  void validate() const {
    if (turns < 1 || words < 1 || dim < 1)
      throw std::invalid_argument("model config: turns/words/dim must be >= 1");
    for (int k : {k1, s1, s2, w1, w2, w3, w4})
      if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("model config: kernel sizes must be odd and >= 1");
  }

  std::string ablation_name() const {
    if (ablate_local) return "-LocM";
    if (ablate_context) return "-ConM";
    if (ablate_discourse) return "-DisM";
    if (ablate_aggregate) return "-Agg";
    return "full";
  }
};

// ---------------------------------------------------------------------------
// The eleven learned convolutions, in forward order. Kernel geometry is fully
// determined by the config; `stage` ties each conv to its ablation switch.

enum class Stage { kLocal, kContext, kDiscourse, kAggregate };

struct ConvGeom {
  const char* tag;  // checkpoint / activation-tag name
  bool two_d;
  int kh, kw;  // 2D kernel dims; 1D convs use kw with kh == 1
  int cin, cout;
  Stage stage;
};

inline std::array<ConvGeom, 11> conv_layout(const ModelConfig& c) {
  const int d = c.dim, t = c.turns;
  return {{
      {"conv@1", true, 1, 1, d, d, Stage::kLocal},
      {"conv@2", true, 1, 1, d, d, Stage::kLocal},
      {"conv@3", true, c.k1, c.s1, d, d, Stage::kLocal},
      {"conv@4", true, 1, 1, d, d, Stage::kLocal},
      {"conv@5", false, 1, c.w1, d, d, Stage::kContext},
      {"conv@6", false, 1, c.w2, d, d, Stage::kContext},
      {"conv@7", true, 1, c.s2, d, d, Stage::kDiscourse},
      {"conv@8", true, c.s2, 1, d, d, Stage::kDiscourse},
      {"conv@9", true, 1, 1, d, d, Stage::kDiscourse},
      // Aggregation operates on the pooled (turns, dim) map: conv@10 slides
      // along the embedding axis with the turn slots as channels, conv@11
      // slides along the turn axis with dim channels.
      {"conv@10", false, 1, c.w3, t, t, Stage::kAggregate},
      {"conv@11", false, 1, c.w4, d, d, Stage::kAggregate},
  }};
}

inline bool stage_enabled(const ModelConfig& c, Stage s) {
  switch (s) {
    case Stage::kLocal: return !c.ablate_local;
    case Stage::kContext: return !c.ablate_context;
    case Stage::kDiscourse: return !c.ablate_discourse;
    case Stage::kAggregate: return !c.ablate_aggregate;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Parameter bundle. Convolutions belonging to an ablated stage are simply not
// allocated, so parameter counts shrink with each ablation.

template <class S>
struct ModelParamsT {
  ModelConfig config;
  int vocab_size = 0;

  TensorT<S> embedding;  // (V, dim); row 0 is the pad token
  std::array<TensorT<S>, 11> conv_kernel;
  std::array<TensorT<S>, 11> conv_bias;
  TensorT<S> head_weight;  // (dim)
  TensorT<S> head_bias;    // (1)

  static ModelParamsT init(const ModelConfig& config, int vocab_size, uint64_t seed) {
    config.validate();
    if (vocab_size < 1) throw std::invalid_argument("vocab size must be >= 1");
    ModelParamsT p;
    p.config = config;
    p.vocab_size = vocab_size;
    Rng rng(seed);

    p.embedding = TensorT<S>(Shape{vocab_size, config.dim});
    const double eb = std::sqrt(3.0 / config.dim);
    for (auto& v : p.embedding.data) v = static_cast<S>(rng.uniform(-eb, eb));
    for (int c = 0; c < config.dim; ++c) p.embedding.data[c] = S(0);  // pad row

    const auto layout = conv_layout(config);
    for (int i = 0; i < 11; ++i) {
      const ConvGeom& g = layout[i];
      if (!stage_enabled(config, g.stage)) continue;
      Shape ks = g.two_d ? Shape{g.kh, g.kw, g.cin, g.cout} : Shape{g.kw, g.cin, g.cout};
      p.conv_kernel[i] = TensorT<S>(ks);
      const int fan_in = g.kh * g.kw * g.cin;
      const int fan_out = g.kh * g.kw * g.cout;
      const double lim = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : p.conv_kernel[i].data) v = static_cast<S>(rng.uniform(-lim, lim));
      p.conv_bias[i] = TensorT<S>(Shape{g.cout});
    }

    p.head_weight = TensorT<S>(Shape{config.dim});
    const double hl = std::sqrt(6.0 / (config.dim + 1));
    for (auto& v : p.head_weight.data) v = static_cast<S>(rng.uniform(-hl, hl));
    p.head_bias = TensorT<S>(Shape{1});
    return p;
  }

  bool has_conv(int i) const { return !conv_kernel[i].data.empty(); }

  // Fixed traversal order shared by the optimizer, checkpointing, and
  // parameter accounting.
  std::vector<std::pair<std::string, TensorT<S>*>> named_tensors() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    out.emplace_back("embedding", &embedding);
    const auto layout = conv_layout(config);
    for (int i = 0; i < 11; ++i) {
      if (!has_conv(i)) continue;
      out.emplace_back(std::string(layout[i].tag) + ".kernel", &conv_kernel[i]);
      out.emplace_back(std::string(layout[i].tag) + ".bias", &conv_bias[i]);
    }
    out.emplace_back("head.weight", &head_weight);
    out.emplace_back("head.bias", &head_bias);
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& [name, t] : named_tensors()) t->requires_grad = on;
  }
  void zero_grads() {
    for (auto& [name, t] : named_tensors()) t->zero_grad();
  }
  int64_t allocated_param_count() {
    int64_t n = 0;
    for (auto& [name, t] : named_tensors()) n += t->numel();
    return n;
  }

  void zero_conv_weights() {
    for (int i = 0; i < 11; ++i) {
      std::fill(conv_kernel[i].data.begin(), conv_kernel[i].data.end(), S(0));
      std::fill(conv_bias[i].data.begin(), conv_bias[i].data.end(), S(0));
    }
  }
};

using ModelParams = ModelParamsT<float>;

// ---------------------------------------------------------------------------
// Analytic parameter accounting; must agree exactly with allocation.

struct ParamCount {
  std::vector<std::pair<std::string, int64_t>> per_tensor;
  int64_t embedding = 0;
  int64_t total = 0;
};

inline ParamCount param_count(const ModelConfig& config, int64_t vocab_size) {
  config.validate();
  ParamCount pc;
  pc.embedding = vocab_size * config.dim;
  pc.per_tensor.emplace_back("embedding", pc.embedding);
  for (const ConvGeom& g : conv_layout(config)) {
    if (!stage_enabled(config, g.stage)) continue;
    pc.per_tensor.emplace_back(std::string(g.tag) + ".kernel",
                               int64_t(g.kh) * g.kw * g.cin * g.cout);
    pc.per_tensor.emplace_back(std::string(g.tag) + ".bias", g.cout);
  }
  pc.per_tensor.emplace_back("head.weight", config.dim);
  pc.per_tensor.emplace_back("head.bias", 1);
  for (const auto& [name, n] : pc.per_tensor) pc.total += n;
  return pc;
}

// ---------------------------------------------------------------------------
// Forward pass.

template <class S>
using ActivationsT = std::vector<std::pair<std::string, TensorT<S>>>;
using Activations = ActivationsT<float>;

template <class S>
inline const TensorT<S>* find_activation(const ActivationsT<S>& acts, const std::string& tag) {
  for (const auto& [name, t] : acts)
    if (name == tag) return &t;
  return nullptr;
}

inline std::vector<std::string> activation_tags() {
  std::vector<std::string> tags = {"embedding"};
  for (int i = 1; i <= 11; ++i) tags.push_back("conv@" + std::to_string(i));
  tags.push_back("pooled");
  tags.push_back("output");
  return tags;
}

namespace detail {

// Word-validity mask broadcast across channels, as floats for a masking mul.
template <class S>
inline TensorT<S> mask_to_channels(const Mask& m, int dim) {
  TensorT<S> out(Shape{m.shape[0], m.shape[1], dim});
  for (int i = 0; i < m.shape[0]; ++i)
    for (int j = 0; j < m.shape[1]; ++j) {
      const S v = m.at(i, j) ? S(1) : S(0);
      for (int c = 0; c < dim; ++c) out.at(i, j, c) = v;
    }
  return out;
}

template <class S>
inline Mask expand_mask(const Mask& m, int dim) {
  Mask out(Shape{m.shape[0], m.shape[1], dim});
  for (int i = 0; i < m.shape[0]; ++i)
    for (int j = 0; j < m.shape[1]; ++j) {
      const uint8_t v = m.at(i, j);
      for (int c = 0; c < dim; ++c)
        out.data[(static_cast<size_t>(i) * m.shape[1] + j) * dim + c] = v;
    }
  return out;
}

}  // namespace detail

namespace detail {

template <class S>
inline void check_stage_input(const ModelParamsT<S>& params, Var x, const TapeT<S>& tape,
                              const char* stage) {
  const ModelConfig& c = params.config;
  const Shape want{c.turns, c.words, c.dim};
  if (tape.value(x).shape != want)
    throw std::invalid_argument(std::string(stage) + ": input shape " +
                                shape_str(tape.value(x).shape) + " does not match config " +
                                shape_str(want));
}

template <class S>
inline Var apply_conv(TapeT<S>& tape, ModelParamsT<S>& params, int i, Var x) {
  if (!params.has_conv(i))
    throw std::logic_error(std::string(conv_layout(params.config)[i].tag) +
                           " is not allocated (stage ablated)");
  Var k = tape.leaf(&params.conv_kernel[i]);
  Var b = tape.leaf(&params.conv_bias[i]);
  return conv_layout(params.config)[i].two_d ? tape.conv2d_same(x, k, b)
                                             : tape.conv1d_same(x, k, b);
}

template <class S>
inline void snap(TapeT<S>& tape, ActivationsT<S>* capture, const char* tag, Var v) {
  if (capture) capture->emplace_back(tag, tape.value(v));
}

}  // namespace detail

// Local matching: per-utterance features from the embedding and word views.
// Two 1x1 mixes around a residual, then a (k1 x s1) word-axis conv around a
// second residual.
template <class S>
inline Var local_matching(TapeT<S>& tape, ModelParamsT<S>& params, Var g,
                          ActivationsT<S>* capture = nullptr) {
  detail::check_stage_input(params, g, tape, "local_matching");
  Var g1 = detail::apply_conv(tape, params, 0, tape.gelu(g));
  detail::snap(tape, capture, "conv@1", g1);
  Var g2 = tape.add(detail::apply_conv(tape, params, 1, g1), g);
  detail::snap(tape, capture, "conv@2", g2);
  Var g3 = detail::apply_conv(tape, params, 2, tape.gelu(g2));
  detail::snap(tape, capture, "conv@3", g3);
  Var g4 = tape.add(detail::apply_conv(tape, params, 3, g3), g2);
  detail::snap(tape, capture, "conv@4", g4);
  return g4;
}

// Context matching: all utterances concatenated chronologically into one
// continuous word sequence, refined by two 1D convolutions, reshaped back.
template <class S>
inline Var context_matching(TapeT<S>& tape, ModelParamsT<S>& params, Var g4,
                            ActivationsT<S>* capture = nullptr) {
  detail::check_stage_input(params, g4, tape, "context_matching");
  const ModelConfig& c = params.config;
  Var g5 = tape.reshape(g4, Shape{c.turns * c.words, c.dim});
  Var g6 = detail::apply_conv(tape, params, 4, tape.gelu(g5));
  detail::snap(tape, capture, "conv@5", g6);
  Var g7f = tape.add(detail::apply_conv(tape, params, 5, g6), g5);
  Var g7 = tape.reshape(g7f, Shape{c.turns, c.words, c.dim});
  detail::snap(tape, capture, "conv@6", g7);
  return g7;
}

// Discourse matching: the orthogonal (1 x s2) word-axis and (s2 x 1)
// turn-axis convolutions extract dialogue-flow features across adjacent
// utterances, integrated by a 1x1 mix around a residual.
template <class S>
inline Var discourse_matching(TapeT<S>& tape, ModelParamsT<S>& params, Var g7,
                              ActivationsT<S>* capture = nullptr) {
  detail::check_stage_input(params, g7, tape, "discourse_matching");
  Var g8 = detail::apply_conv(tape, params, 6, tape.gelu(g7));
  detail::snap(tape, capture, "conv@7", g8);
  Var g9 = detail::apply_conv(tape, params, 7, g8);
  detail::snap(tape, capture, "conv@8", g9);
  Var g10 = tape.add(detail::apply_conv(tape, params, 8, g9), g7);
  detail::snap(tape, capture, "conv@9", g10);
  return g10;
}

// Aggregation: masked max over the word axis gives one vector per turn;
// conv@10 slides along the embedding axis (turn slots as channels), conv@11
// along the turn axis (dim channels) around a residual; a final max over the
// turn slots yields the context representation. Slots with no valid token
// contribute a zero vector to the pooled map.
template <class S>
inline Var aggregate(TapeT<S>& tape, ModelParamsT<S>& params, Var g10, const Mask& mask,
                     ActivationsT<S>* capture = nullptr) {
  detail::check_stage_input(params, g10, tape, "aggregate");
  const ModelConfig& c = params.config;
  const Mask word_mask = detail::expand_mask<S>(mask, c.dim);
  Var g11 = tape.maxpool_axis(g10, 1, &word_mask, EmptySlice::kZeroFill);  // (turns, dim)
  detail::snap(tape, capture, "pooled", g11);
  Var g13 = g11;
  if (!c.ablate_aggregate) {
    Var g12 = tape.transpose2d(
        detail::apply_conv(tape, params, 9, tape.transpose2d(g11)));
    detail::snap(tape, capture, "conv@10", g12);
    g13 = tape.add(detail::apply_conv(tape, params, 10, g12), g11);
    detail::snap(tape, capture, "conv@11", g13);
  }
  Var out = tape.maxpool_axis(g13, 0);  // (dim)
  detail::snap(tape, capture, "output", out);
  return out;
}

// Encodes one stacked instance into a (dim) vector, honoring the ablation
// switches (a disabled stage is the identity map). When `capture` is given,
// every stage output is snapshotted under its activation tag.
template <class S>
inline Var encode(TapeT<S>& tape, ModelParamsT<S>& params, const IdGrid& ids,
                  const Mask& mask, ActivationsT<S>* capture = nullptr) {
  const ModelConfig& c = params.config;
  if (ids.shape[0] != c.turns || ids.shape[1] != c.words)
    throw std::invalid_argument("encode: id grid " + shape_str(ids.shape) +
                                " does not match config (" + std::to_string(c.turns) + "," +
                                std::to_string(c.words) + ")");
  if (mask.shape != ids.shape)
    throw std::invalid_argument("encode: mask shape " + shape_str(mask.shape) +
                                " != id grid shape " + shape_str(ids.shape));

  // Embedding layer. Padded positions are zeroed so no pad content can leak
  // into valid positions through the convolutions.
  Var table = tape.leaf(&params.embedding);
  Var g = tape.embedding(table, ids);
  g = tape.mul(g, tape.constant(detail::mask_to_channels<S>(mask, c.dim)));
  detail::snap(tape, capture, "embedding", g);

  Var g4 = c.ablate_local ? g : local_matching(tape, params, g, capture);
  Var g7 = c.ablate_context ? g4 : context_matching(tape, params, g4, capture);
  Var g10 = c.ablate_discourse ? g7 : discourse_matching(tape, params, g7, capture);
  return aggregate(tape, params, g10, mask, capture);
}

// Matching probability for one stacked instance: sigmoid(w . encode + b).
template <class S>
inline Var score_instance(TapeT<S>& tape, ModelParamsT<S>& params, const IdGrid& ids,
                          const Mask& mask, ActivationsT<S>* capture = nullptr) {
  Var o = encode(tape, params, ids, mask, capture);
  Var w = tape.leaf(&params.head_weight);
  Var b = tape.leaf(&params.head_bias);
  Var logit = tape.add(tape.dot(w, o), b);
  return tape.sigmoid(logit);
}

// Plain forward score without gradient tracking.
template <class S>
inline double score_value(ModelParamsT<S>& params, const IdGrid& ids, const Mask& mask) {
  TapeT<S> tape;
  Var s = score_instance(tape, params, ids, mask);
  return static_cast<double>(tape.value(s).data[0]);
}

// ---------------------------------------------------------------------------
// Heatmaps: cosine similarity between response vectors and context vectors at
// a captured layer. (turns,words,dim) layers compare token vectors;
// (turns,dim) layers compare per-utterance vectors.

struct Heatmap {
  std::vector<std::string> row_labels;  // response side
  std::vector<std::string> col_labels;  // context side
  std::vector<std::vector<double>> sims;
};

inline double cosine_or_zero(const float* a, const float* b, int n) {
  double aa = 0, bb = 0, ab = 0;
  for (int i = 0; i < n; ++i) {
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
    ab += double(a[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;  // zero-norm pairs read as 0
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// slot_tokens[i] holds the kept tokens of slot i (response is the last slot),
// aligned with the stacked grid's valid positions.
inline Heatmap heatmap(const Activations& acts, const std::string& tag,
                       const std::vector<std::vector<std::string>>& slot_tokens,
                       const ModelConfig& config) {
  const Tensor* act = find_activation(acts, tag);
  if (!act) {
    std::string valid;
    for (const auto& [name, t] : acts) valid += (valid.empty() ? "" : ", ") + name;
    throw std::invalid_argument("heatmap: unknown layer tag '" + tag +
                                "' (captured tags: " + valid + ")");
  }
  const int t = config.turns, l = config.words, d = config.dim;
  Heatmap hm;

  if (act->rank() == 3) {  // token-level layer
    struct Ref { int slot, pos; };
    std::vector<Ref> ctx, resp;
    for (int i = 0; i < t; ++i) {
      const auto& toks = slot_tokens[i];
      // token j of a kept window sits at column j, matching the stacker
      for (int j = 0; j < static_cast<int>(toks.size()) && j < l; ++j) {
        if (i == t - 1) {
          resp.push_back({i, j});
          hm.row_labels.push_back(toks[j]);
        } else {
          ctx.push_back({i, j});
          hm.col_labels.push_back(toks[j]);
        }
      }
    }
    auto vec = [&](const Ref& ref) {
      return act->data.data() + (static_cast<size_t>(ref.slot) * l + ref.pos) * d;
    };
    hm.sims.assign(resp.size(), std::vector<double>(ctx.size(), 0.0));
    for (size_t r = 0; r < resp.size(); ++r)
      for (size_t cix = 0; cix < ctx.size(); ++cix)
        hm.sims[r][cix] = cosine_or_zero(vec(resp[r]), vec(ctx[cix]), d);
    return hm;
  }

  // (turns, dim) layer: one vector per utterance slot.
  hm.row_labels.push_back("response");
  std::vector<int> ctx_slots;
  for (int i = 0; i < t - 1; ++i) {
    if (slot_tokens[i].empty()) continue;
    ctx_slots.push_back(i);
    hm.col_labels.push_back("u" + std::to_string(i + 1));
  }
  hm.sims.assign(1, std::vector<double>(ctx_slots.size(), 0.0));
  const float* resp_vec = act->data.data() + static_cast<size_t>(t - 1) * d;
  for (size_t cix = 0; cix < ctx_slots.size(); ++cix)
    hm.sims[0][cix] = cosine_or_zero(
        resp_vec, act->data.data() + static_cast<size_t>(ctx_slots[cix]) * d, d);
  return hm;
}

}  // namespace dconv
