// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "i2c2w/c2w.hpp"
#include "i2c2w/i2c.hpp"

namespace i2c2w {

struct ModelConfig {
  int model_dim = 128;  // D
  int num_heads = 8;    // M
  int num_slots = 25;   // N, detection slot count
  int ffn_dim = 256;
  int encoder_layers = 3;
  int i2c_decoder_layers = 1;
  int c2w_decoder_layers = 1;
  double dropout = 0.1;
  bool use_positional_encoding = true;  // disabled only by equivariance tests
  BackboneConfig backbone;              // derived from model_dim when empty

  MhaConfig mha() const { return {model_dim, num_heads}; }

  BackboneConfig effective_backbone() const {
    return backbone.stages.empty() ? BackboneConfig::for_model_dim(model_dim)
                                   : backbone;
  }

  void validate() const {
    mha().validate();
    if (num_slots < 3) throw BadDim("num_slots must be at least 3");
    if (model_dim % 4 != 0)
      throw BadDim("model_dim must be divisible by 4 for the 2D encoding");
    if (effective_backbone().out_channels() != model_dim)
      throw BadDim("backbone output channels must equal model_dim");
  }
};

// Detector outputs for one image.
template <typename S>
struct I2cOutput {
  Var<S> embeddings;   // N x D decoder output; one row per candidate slot
  Var<S> char_logits;  // N x 37
  Var<S> pos_logits;   // N x (N+1)
  // head-averaged cross-attention of the last decoder layer, N x (H*W);
  // empty unless capture_attention was requested
  MatX<S> cross_attention;

  // The positional character embeddings in their D x N orientation
  // (one column per candidate slot).
  MatX<S> positional_char_embeddings() const {
    return embeddings->value.transpose();
  }
};

// The full recognizer: backbone -> encoder -> detection decoder with its
// character/position heads, plus the word decoder reading the detector's
// output embeddings.
template <typename S>
struct Recognizer {
  ModelConfig cfg;
  Backbone<S> backbone;
  Encoder<S> encoder;
  std::vector<DecoderLayer<S>> i2c_layers;
  Var<S> char_queries;   // N x D learned detection queries
  Linear<S> char_head;   // D -> 37
  Linear<S> pos_head;    // D -> N+1
  C2wDecoder<S> c2w;
  MatX<S> feature_pe;    // (H*W) x D, fixed sinusoidal table
  ParamRegistry<S> params;

  static Recognizer init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Recognizer model;
    model.cfg = cfg;
    Rng rng(split_seed(seed, 0x696e6974));
    const MhaConfig mha = cfg.mha();
    model.backbone = Backbone<S>::init(cfg.effective_backbone(), rng);
    model.encoder = Encoder<S>::init(mha, cfg.ffn_dim, cfg.encoder_layers, rng);
    for (int i = 0; i < cfg.i2c_decoder_layers; ++i)
      model.i2c_layers.push_back(DecoderLayer<S>::init(mha, cfg.ffn_dim, rng));
    model.char_queries =
        make_param(xavier_init<S>(cfg.num_slots, cfg.model_dim, rng));
    model.char_head = Linear<S>::init(cfg.model_dim, CharSet{}.size(), rng);
    model.pos_head =
        Linear<S>::init(cfg.model_dim, PositionSet{cfg.num_slots}.size(), rng);
    model.c2w = C2wDecoder<S>::init(mha, cfg.ffn_dim, cfg.num_slots,
                                    cfg.c2w_decoder_layers, rng);
    model.feature_pe = positional_encoding_2d<S>(
        model.backbone.out_height(), model.backbone.out_width(), cfg.model_dim);

    model.backbone.register_params(model.params, "backbone");
    model.encoder.register_params(model.params, "encoder");
    for (std::size_t i = 0; i < model.i2c_layers.size(); ++i)
      model.i2c_layers[i].register_params(model.params,
                                          "i2c.l" + std::to_string(i));
    model.params.add("i2c.queries", model.char_queries);
    model.params.add("i2c.char_head.w", model.char_head.w);
    model.params.add("i2c.char_head.b", model.char_head.b);
    model.params.add("i2c.pos_head.w", model.pos_head.w);
    model.params.add("i2c.pos_head.b", model.pos_head.b);
    model.c2w.register_params(model.params, "c2w");
    return model;
  }

  // backbone features as (H*W) x D tokens
  Var<S> backbone_forward(Tape<S>& tape, const Image& img) const {
    return backbone.forward(tape, img);
  }

  // transformer encoding of the flattened feature tokens
  Var<S> encode(Tape<S>& tape, const Var<S>& features, bool training = false,
                Rng* rng = nullptr) const {
    const MatX<S>* pe = cfg.use_positional_encoding ? &feature_pe : nullptr;
    return encoder.forward(tape, features, pe, cfg.dropout, rng, training);
  }

  // query-based detection decode with classification heads
  I2cOutput<S> i2c_decode(Tape<S>& tape, const Var<S>& encoded,
                          bool training = false, Rng* rng = nullptr,
                          bool capture_attention = false) const {
    const MatX<S>* pe = cfg.use_positional_encoding ? &feature_pe : nullptr;
    I2cOutput<S> out;
    Var<S> h = char_queries;
    for (std::size_t i = 0; i < i2c_layers.size(); ++i) {
      const bool last = i + 1 == i2c_layers.size();
      h = i2c_layers[i].forward(tape, h, encoded, pe, cfg.mha(), cfg.dropout,
                                rng, training,
                                capture_attention && last ? &out.cross_attention
                                                          : nullptr);
    }
    out.embeddings = h;
    out.char_logits = char_head.forward(tape, h);
    out.pos_logits = pos_head.forward(tape, h);
    return out;
  }

  // word decoder logits over the detector's output embeddings
  Var<S> c2w_forward(Tape<S>& tape, const Var<S>& embeddings,
                     bool training = false, Rng* rng = nullptr) const {
    return c2w.forward(tape, embeddings, cfg.dropout, rng, training);
  }

  // Convenience overload for externally supplied D x N embeddings.
  Var<S> c2w_forward_dxn(Tape<S>& tape, const MatX<S>& embeddings_dxn) const {
    if (embeddings_dxn.rows() != cfg.model_dim ||
        embeddings_dxn.cols() != cfg.num_slots)
      throw ShapeMismatch("expected D x N character embeddings");
    if (!embeddings_dxn.allFinite())
      throw NonFinite("character embeddings contain NaN/Inf");
    auto v = make_const(MatX<S>(embeddings_dxn.transpose()));
    return c2w_forward(tape, v);
  }

  struct Forward {
    Var<S> encoded;
    I2cOutput<S> i2c;
    Var<S> slot_logits;  // N x 37 word-decoder logits
  };

  Forward forward(Tape<S>& tape, const Image& img, bool training = false,
                  Rng* rng = nullptr, bool capture_attention = false) const {
    Forward f;
    f.encoded = encode(tape, backbone_forward(tape, img), training, rng);
    f.i2c = i2c_decode(tape, f.encoded, training, rng, capture_attention);
    f.slot_logits = c2w_forward(tape, f.i2c.embeddings, training, rng);
    return f;
  }

  std::string recognize(const Image& img) const {
    Tape<S> tape(false);
    const Forward f = forward(tape, img);
    return ctc_greedy_decode(f.slot_logits->value, CharSet{});
  }
};

// Per-query cross-attention heatmaps over the feature grid, each summing
// to one; `query_labels` receives the predicted (char, pos) per query.
template <typename S>
std::vector<Image> attention_maps(const Recognizer<S>& model, const Image& img,
                                  std::vector<CharCandidate>* candidates_out
                                  = nullptr) {
  Tape<S> tape(false);
  auto encoded = model.encode(tape, model.backbone_forward(tape, img));
  const auto out = model.i2c_decode(tape, encoded, false, nullptr, true);
  const int h = model.backbone.out_height();
  const int w = model.backbone.out_width();
  std::vector<Image> maps;
  maps.reserve(model.cfg.num_slots);
  for (int q = 0; q < model.cfg.num_slots; ++q) {
    Image map(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        map.at(x, y) = static_cast<float>(out.cross_attention(q, y * w + x));
    maps.push_back(std::move(map));
  }
  if (candidates_out)
    *candidates_out =
        extract_candidates(out.char_logits->value, out.pos_logits->value);
  return maps;
}

// Nearest-neighbour upsample of a heatmap to the input canvas, normalized to
// the map's own peak for visibility.
inline Image upsample_heatmap(const Image& map, int width, int height) {
  Image out(width, height);
  float peak = 0.0f;
  for (float p : map.pixels) peak = std::max(peak, p);
  if (peak <= 0.0f) peak = 1.0f;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int sx = x * map.width / width;
      const int sy = y * map.height / height;
      out.at(x, y) = map.at(sx, sy) / peak;
    }
  return out;
}

}  // namespace i2c2w
