// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "i2c2w/charset.hpp"
#include "i2c2w/i2c.hpp"

namespace i2c2w {

// Word decoder: learned queries cross-attend over the positional character
// embeddings produced by the detector; a character head emits per-slot logits
// that a greedy CTC pass turns into the final word.
template <typename S>
struct C2wDecoder {
  Var<S> queries;  // N x D, independent of the detector's queries
  std::vector<DecoderLayer<S>> layers;
  Linear<S> char_head;  // D -> 37
  MhaConfig mha_cfg;

  static C2wDecoder init(const MhaConfig& cfg, int ffn_dim, int num_slots,
                         int num_layers, Rng& rng) {
    C2wDecoder dec;
    dec.mha_cfg = cfg;
    dec.queries = make_param(xavier_init<S>(num_slots, cfg.model_dim, rng));
    for (int i = 0; i < num_layers; ++i)
      dec.layers.push_back(DecoderLayer<S>::init(cfg, ffn_dim, rng));
    dec.char_head = Linear<S>::init(cfg.model_dim, CharSet{}.size(), rng);
    return dec;
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) const {
    reg.add(prefix + ".queries", queries);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].register_params(reg, prefix + ".l" + std::to_string(i));
    reg.add(prefix + ".char_head.w", char_head.w);
    reg.add(prefix + ".char_head.b", char_head.b);
  }

  // char_embeddings: N x D (one row per detector slot); no positional
  // encoding is added to them. Returns slot logits, N x 37.
  Var<S> forward(Tape<S>& tape, const Var<S>& char_embeddings, double drop,
                 Rng* rng, bool training) const {
    if (char_embeddings->value.cols() != mha_cfg.model_dim)
      throw ShapeMismatch("c2w expects D-dimensional character embeddings");
    Var<S> h = queries;
    for (const auto& layer : layers)
      h = layer.forward(tape, h, char_embeddings, nullptr, mha_cfg, drop, rng,
                        training, nullptr);
    return char_head.forward(tape, h);
  }
};

// Greedy CTC readout: per-slot argmax, collapse repeats, strip blanks.
template <typename S>
std::string ctc_greedy_decode(const MatX<S>& slot_logits, const CharSet& cs) {
  if (slot_logits.cols() != cs.size())
    throw ShapeMismatch("slot logits must have one column per character class");
  std::vector<int> picks(slot_logits.rows());
  for (Eigen::Index r = 0; r < slot_logits.rows(); ++r) {
    Eigen::Index best = 0;
    slot_logits.row(r).maxCoeff(&best);
    picks[r] = static_cast<int>(best);
  }
  return classes_to_string(ctc_collapse(picks, cs.null_index()), cs);
}

}  // namespace i2c2w
