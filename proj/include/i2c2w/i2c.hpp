// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "i2c2w/charset.hpp"
#include "i2c2w/image.hpp"
#include "i2c2w/nn.hpp"
#include "i2c2w/params.hpp"

namespace i2c2w {

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

struct BackboneConfig {
  // (output channels, stride) per 3x3 conv stage
  std::vector<std::pair<int, int>> stages;

  static BackboneConfig for_model_dim(int d) {
    return {{{d / 4, 2}, {d / 2, 2}, {d, 2}, {d, 1}}};
  }

  int out_channels() const { return stages.back().first; }
  int downsample_factor() const {
    int f = 1;
    for (const auto& [_, stride] : stages) f *= stride;
    return f;
  }
};

// 3x3 convolution via im2col, zero padding of one pixel. Input and output are
// token matrices: one row per pixel (row-major), one column per channel.
template <typename S>
Var<S> conv3x3(Tape<S>& tape, const Var<S>& input, int height, int width,
               const Var<S>& kernel, const Var<S>& bias, int stride) {
  const int in_ch = static_cast<int>(input->value.cols());
  if (input->value.rows() != static_cast<Eigen::Index>(height) * width)
    throw ShapeMismatch("conv3x3 input rows do not match the grid");
  if (kernel->value.rows() != in_ch * 9)
    throw ShapeMismatch("conv3x3 kernel rows must be in_channels * 9");
  const int out_h = (height + 2 - 3) / stride + 1;
  const int out_w = (width + 2 - 3) / stride + 1;

  auto patches = std::make_shared<MatX<S>>(
      MatX<S>::Zero(static_cast<Eigen::Index>(out_h) * out_w, in_ch * 9));
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= width) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(iy) * width + ix;
          for (int c = 0; c < in_ch; ++c)
            (*patches)(row, c * 9 + ky * 3 + kx) = input->value(src, c);
        }
      }
    }

  MatX<S> out = (*patches) * kernel->value;
  out.rowwise() += bias->value.row(0);
  return tape.track(
      std::move(out), {input, kernel, bias},
      [input, kernel, bias, patches, height, width, stride, out_h, out_w,
       in_ch](Node<S>& n) {
        if (bias->requires_grad) bias->accumulate(n.grad.colwise().sum());
        if (kernel->requires_grad)
          kernel->accumulate(patches->transpose() * n.grad);
        if (!input->requires_grad) return;
        MatX<S> gpatch = n.grad * kernel->value.transpose();
        MatX<S> ginput = MatX<S>::Zero(input->value.rows(), input->value.cols());
        for (int oy = 0; oy < out_h; ++oy)
          for (int ox = 0; ox < out_w; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
            for (int ky = 0; ky < 3; ++ky) {
              const int iy = oy * stride + ky - 1;
              if (iy < 0 || iy >= height) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int ix = ox * stride + kx - 1;
                if (ix < 0 || ix >= width) continue;
                const Eigen::Index src = static_cast<Eigen::Index>(iy) * width + ix;
                for (int c = 0; c < in_ch; ++c)
                  ginput(src, c) += gpatch(row, c * 9 + ky * 3 + kx);
              }
            }
          }
        input->accumulate(ginput);
      });
}

// Image pixels as model input tokens: gray value replicated to 3 channels and
// centered to [-1, 1].
template <typename S>
MatX<S> image_to_tokens(const Image& img) {
  MatX<S> tokens(static_cast<Eigen::Index>(img.width) * img.height, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const S v = static_cast<S>(2.0f * img.at(x, y) - 1.0f);
      const Eigen::Index row = static_cast<Eigen::Index>(y) * img.width + x;
      tokens(row, 0) = v;
      tokens(row, 1) = v;
      tokens(row, 2) = v;
    }
  return tokens;
}

template <typename S>
struct Backbone {
  struct Stage {
    Var<S> kernel;  // (in_ch * 9) x out_ch
    Var<S> bias;    // 1 x out_ch
    int in_ch = 0, out_ch = 0, stride = 1;
  };

  BackboneConfig cfg;
  std::vector<Stage> stages;
  int in_height = kCanvasHeight;
  int in_width = kCanvasWidth;

  static Backbone init(const BackboneConfig& cfg, Rng& rng) {
    Backbone bb;
    bb.cfg = cfg;
    int in_ch = 3;
    for (const auto& [out_ch, stride] : cfg.stages) {
      Stage st;
      st.in_ch = in_ch;
      st.out_ch = out_ch;
      st.stride = stride;
      st.kernel = make_param(xavier_init<S>(in_ch * 9, out_ch, rng));
      st.bias = make_param(MatX<S>(MatX<S>::Zero(1, out_ch)));
      bb.stages.push_back(std::move(st));
      in_ch = out_ch;
    }
    return bb;
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) const {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      reg.add(prefix + ".stage" + std::to_string(i) + ".kernel", stages[i].kernel);
      reg.add(prefix + ".stage" + std::to_string(i) + ".bias", stages[i].bias);
    }
  }

  int out_height() const { return in_height / cfg.downsample_factor(); }
  int out_width() const { return in_width / cfg.downsample_factor(); }

  // (out_h * out_w) x C feature tokens
  Var<S> forward(Tape<S>& tape, const Image& img) const {
    if (img.width != in_width || img.height != in_height)
      throw ShapeMismatch("backbone expects a " + std::to_string(in_width) +
                          "x" + std::to_string(in_height) + " image");
    for (float p : img.pixels)
      if (p < 0.0f || p > 1.0f)
        throw ShapeMismatch("backbone input pixels must lie in [0, 1]");
    auto x = make_const(image_to_tokens<S>(img));
    return forward_tokens(tape, x);
  }

  Var<S> forward_tokens(Tape<S>& tape, const Var<S>& input) const {
    Var<S> x = input;
    int h = in_height, w = in_width;
    for (const auto& st : stages) {
      x = relu(tape, conv3x3(tape, x, h, w, st.kernel, st.bias, st.stride));
      h = (h + 2 - 3) / st.stride + 1;
      w = (w + 2 - 3) / st.stride + 1;
    }
    return x;
  }
};

// ---------------------------------------------------------------------------
// transformer encoder / decoder blocks (post-norm residual order)
// ---------------------------------------------------------------------------

template <typename S>
struct EncoderLayer {
  MhaParams<S> mha;
  FfnParams<S> ffn;
  LayerNormParams<S> ln1, ln2;

  static EncoderLayer init(const MhaConfig& cfg, int ffn_dim, Rng& rng) {
    return {MhaParams<S>::init(cfg, rng),
            FfnParams<S>::init(cfg.model_dim, ffn_dim, rng),
            LayerNormParams<S>::init(cfg.model_dim),
            LayerNormParams<S>::init(cfg.model_dim)};
  }

  void register_params(ParamRegistry<S>& reg, const std::string& p) const {
    reg.add(p + ".mha.wq", mha.wq);
    reg.add(p + ".mha.wk", mha.wk);
    reg.add(p + ".mha.wv", mha.wv);
    reg.add(p + ".mha.wo", mha.wo);
    reg.add(p + ".ffn.w1", ffn.w1);
    reg.add(p + ".ffn.b1", ffn.b1);
    reg.add(p + ".ffn.w2", ffn.w2);
    reg.add(p + ".ffn.b2", ffn.b2);
    reg.add(p + ".ln1.gain", ln1.gain);
    reg.add(p + ".ln1.bias", ln1.bias);
    reg.add(p + ".ln2.gain", ln2.gain);
    reg.add(p + ".ln2.bias", ln2.bias);
  }

  // Self-attention with the positional encoding added to queries and keys
  // (values stay position free), then the FFN; dropout before each residual.
  Var<S> forward(Tape<S>& tape, const Var<S>& x, const MatX<S>* pe,
                 const MhaConfig& cfg, double drop, Rng* rng,
                 bool training) const {
    Var<S> qk = pe ? add_mat(tape, x, *pe) : x;
    auto attn = multi_head_attention(tape, qk, qk, x, mha, cfg);
    if (training && rng) attn = dropout(tape, attn, drop, *rng, training);
    auto h = ln1.forward(tape, add(tape, x, attn));
    auto ff = ffn.forward(tape, h);
    if (training && rng) ff = dropout(tape, ff, drop, *rng, training);
    return ln2.forward(tape, add(tape, h, ff));
  }
};

template <typename S>
struct Encoder {
  MhaConfig mha_cfg;
  std::vector<EncoderLayer<S>> layers;

  static Encoder init(const MhaConfig& cfg, int ffn_dim, int num_layers,
                      Rng& rng) {
    Encoder enc;
    enc.mha_cfg = cfg;
    for (int i = 0; i < num_layers; ++i)
      enc.layers.push_back(EncoderLayer<S>::init(cfg, ffn_dim, rng));
    return enc;
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].register_params(reg, prefix + ".l" + std::to_string(i));
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& tokens, const MatX<S>* pe,
                 double drop, Rng* rng, bool training) const {
    Var<S> x = tokens;
    for (const auto& layer : layers)
      x = layer.forward(tape, x, pe, mha_cfg, drop, rng, training);
    return x;
  }
};

template <typename S>
struct DecoderLayer {
  MhaParams<S> self_mha, cross_mha;
  FfnParams<S> ffn;
  LayerNormParams<S> ln1, ln2, ln3;

  static DecoderLayer init(const MhaConfig& cfg, int ffn_dim, Rng& rng) {
    return {MhaParams<S>::init(cfg, rng),
            MhaParams<S>::init(cfg, rng),
            FfnParams<S>::init(cfg.model_dim, ffn_dim, rng),
            LayerNormParams<S>::init(cfg.model_dim),
            LayerNormParams<S>::init(cfg.model_dim),
            LayerNormParams<S>::init(cfg.model_dim)};
  }

  void register_params(ParamRegistry<S>& reg, const std::string& p) const {
    reg.add(p + ".self.wq", self_mha.wq);
    reg.add(p + ".self.wk", self_mha.wk);
    reg.add(p + ".self.wv", self_mha.wv);
    reg.add(p + ".self.wo", self_mha.wo);
    reg.add(p + ".cross.wq", cross_mha.wq);
    reg.add(p + ".cross.wk", cross_mha.wk);
    reg.add(p + ".cross.wv", cross_mha.wv);
    reg.add(p + ".cross.wo", cross_mha.wo);
    reg.add(p + ".ffn.w1", ffn.w1);
    reg.add(p + ".ffn.b1", ffn.b1);
    reg.add(p + ".ffn.w2", ffn.w2);
    reg.add(p + ".ffn.b2", ffn.b2);
    reg.add(p + ".ln1.gain", ln1.gain);
    reg.add(p + ".ln1.bias", ln1.bias);
    reg.add(p + ".ln2.gain", ln2.gain);
    reg.add(p + ".ln2.bias", ln2.bias);
    reg.add(p + ".ln3.gain", ln3.gain);
    reg.add(p + ".ln3.bias", ln3.bias);
  }

  // Self-attention over the queries, cross-attention into the memory (with an
  // optional positional encoding on the memory keys), then the FFN.
  // `cross_attn_out`, when set, receives the head-averaged cross weights.
  Var<S> forward(Tape<S>& tape, const Var<S>& h, const Var<S>& memory,
                 const MatX<S>* memory_pe, const MhaConfig& cfg, double drop,
                 Rng* rng, bool training, MatX<S>* cross_attn_out) const {
    auto self_attn = multi_head_attention(tape, h, h, h, self_mha, cfg);
    if (training && rng) self_attn = dropout(tape, self_attn, drop, *rng, training);
    auto t1 = ln1.forward(tape, add(tape, h, self_attn));

    Var<S> keys = memory_pe ? add_mat(tape, memory, *memory_pe) : memory;
    std::vector<Var<S>> head_weights;
    auto cross = multi_head_attention(tape, t1, keys, memory, cross_mha, cfg,
                                      cross_attn_out ? &head_weights : nullptr);
    if (cross_attn_out) {
      MatX<S> avg = MatX<S>::Zero(head_weights[0]->value.rows(),
                                  head_weights[0]->value.cols());
      for (const auto& w : head_weights) avg += w->value;
      *cross_attn_out = avg / static_cast<S>(head_weights.size());
    }
    if (training && rng) cross = dropout(tape, cross, drop, *rng, training);
    auto t2 = ln2.forward(tape, add(tape, t1, cross));

    auto ff = ffn.forward(tape, t2);
    if (training && rng) ff = dropout(tape, ff, drop, *rng, training);
    return ln3.forward(tape, add(tape, t2, ff));
  }
};

// ---------------------------------------------------------------------------
// detected character candidates
// ---------------------------------------------------------------------------

struct CharCandidate {
  int char_class = 0;
  int pos_class = 0;
  std::vector<double> char_probs;  // 37, sums to 1
  std::vector<double> pos_probs;   // N+1, sums to 1

  double char_prob() const { return char_probs[char_class]; }
  double pos_prob() const { return pos_probs[pos_class]; }
};

template <typename S>
std::vector<CharCandidate> extract_candidates(const MatX<S>& char_logits,
                                              const MatX<S>& pos_logits) {
  if (char_logits.rows() != pos_logits.rows())
    throw ShapeMismatch("candidate logits row counts differ");
  std::vector<CharCandidate> out(char_logits.rows());
  for (Eigen::Index r = 0; r < char_logits.rows(); ++r) {
    CharCandidate& cand = out[r];
    cand.char_probs.resize(char_logits.cols());
    cand.pos_probs.resize(pos_logits.cols());
    const auto softmax_into = [](const auto& row, std::vector<double>& probs,
                                 int& argmax) {
      double best = -1e300;
      for (Eigen::Index c = 0; c < row.size(); ++c)
        best = std::max(best, static_cast<double>(row(c)));
      double z = 0.0;
      for (Eigen::Index c = 0; c < row.size(); ++c) {
        probs[c] = std::exp(static_cast<double>(row(c)) - best);
        z += probs[c];
      }
      argmax = 0;
      for (Eigen::Index c = 0; c < row.size(); ++c) {
        probs[c] /= z;
        if (probs[c] > probs[argmax]) argmax = static_cast<int>(c);
      }
    };
    softmax_into(char_logits.row(r), cand.char_probs, cand.char_class);
    softmax_into(pos_logits.row(r), cand.pos_probs, cand.pos_class);
  }
  return out;
}

// Detection-only word readout: drop null candidates, keep the most confident
// candidate per position (ties to the lowest index), order by position.
inline std::string standalone_decode(const std::vector<CharCandidate>& candidates,
                                     const CharSet& cs, const PositionSet& ps) {
  std::map<int, const CharCandidate*> best_at;
  for (const auto& cand : candidates) {
    if (cand.char_class == cs.null_index()) continue;
    if (cand.pos_class == ps.null_index()) continue;
    auto [it, inserted] = best_at.try_emplace(cand.pos_class, &cand);
    if (!inserted && cand.char_prob() > it->second->char_prob())
      it->second = &cand;
  }
  std::string word;
  for (const auto& [pos, cand] : best_at) word.push_back(cs.symbol(cand->char_class));
  return word;
}

}  // namespace i2c2w
