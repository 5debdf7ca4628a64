// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "i2c2w/checkpoint.hpp"
#include "i2c2w/losses.hpp"
#include "i2c2w/model.hpp"
#include "i2c2w/png_io.hpp"
#include "i2c2w/synth.hpp"

namespace i2c2w {

struct TrainConfig {
  double lr_backbone = 1e-5;
  double lr_transformer = 1e-4;
  int batch_size = 16;
  long steps = 0;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;  // global gradient norm
  std::uint64_t seed = 0;
  double position_cost_weight = 1.0;  // beta in the matching cost
  double null_class_weight = 0.1;
  long eval_every = 0;  // 0 disables the stop callback
  ModelConfig model;

  void validate() const {
    if (lr_backbone <= 0.0 || lr_transformer <= 0.0)
      throw BadDim("learning rates must be positive");
    if (batch_size <= 0) throw BadDim("batch size must be positive");
    if (steps < 0) throw BadDim("step count must be non-negative");
    model.validate();
  }

  nlohmann::json echo() const {
    return nlohmann::json{{"lr_backbone", lr_backbone},
                          {"lr_transformer", lr_transformer},
                          {"batch_size", batch_size},
                          {"steps", steps},
                          {"weight_decay", weight_decay},
                          {"grad_clip", grad_clip},
                          {"seed", seed},
                          {"position_cost_weight", position_cost_weight},
                          {"null_class_weight", null_class_weight}};
  }
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// Adam with decoupled weight decay and two learning-rate groups: parameters
// named "backbone.*" form one group, everything else the other.
template <typename S>
class AdamW {
 public:
  AdamW(const ParamRegistry<S>& params, double lr_backbone,
        double lr_transformer, double weight_decay)
      : weight_decay_(weight_decay) {
    slots_.reserve(params.items.size());
    for (const auto& [name, var] : params.items) {
      Slot slot;
      slot.lr = name.rfind("backbone.", 0) == 0 ? lr_backbone : lr_transformer;
      slot.m = MatX<S>::Zero(var->value.rows(), var->value.cols());
      slot.v = MatX<S>::Zero(var->value.rows(), var->value.cols());
      slots_.push_back(std::move(slot));
    }
  }

  double learning_rate_of(const ParamRegistry<S>& params,
                          const std::string& name) const {
    for (std::size_t i = 0; i < params.items.size(); ++i)
      if (params.items[i].first == name) return slots_[i].lr;
    throw Error("unknown parameter name: " + name);
  }

  // Returns the pre-clip global gradient norm; throws on non-finite grads.
  double step(ParamRegistry<S>& params, double grad_clip) {
    double norm_sq = 0.0;
    for (const auto& [name, var] : params.items) {
      if (!var->has_grad()) continue;
      norm_sq += static_cast<double>(var->grad.squaredNorm());
    }
    if (!std::isfinite(norm_sq))
      throw NonFinite("gradient norm is NaN/Inf");
    const double norm = std::sqrt(norm_sq);
    const double scale =
        (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;

    ++t_;
    const double bias1 = 1.0 - std::pow(beta1_, t_);
    const double bias2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      Var<S>& var = params.items[i].second;
      if (!var->has_grad()) continue;
      Slot& slot = slots_[i];
      const MatX<S> g = var->grad * static_cast<S>(scale);
      slot.m = slot.m * static_cast<S>(beta1_) + g * static_cast<S>(1.0 - beta1_);
      slot.v = (slot.v.array() * static_cast<S>(beta2_) +
                g.array().square() * static_cast<S>(1.0 - beta2_)).matrix();
      const auto m_hat = slot.m.array() / static_cast<S>(bias1);
      const auto v_hat = slot.v.array() / static_cast<S>(bias2);
      var->value.array() -=
          static_cast<S>(slot.lr) *
          (m_hat / (v_hat.sqrt() + static_cast<S>(eps_)) +
           static_cast<S>(weight_decay_) * var->value.array());
    }
    return norm;
  }

 private:
  struct Slot {
    MatX<S> m, v;
    double lr = 0.0;
  };
  std::vector<Slot> slots_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  double weight_decay_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// dataset handling
// ---------------------------------------------------------------------------

struct TrainingSet {
  std::vector<Image> images;
  std::vector<LabelSet> labels;
  std::vector<std::string> words;  // full normalized transcriptions
};

// Longest usable prefix of the word for a detector with `slots` slots: at
// most slots-2 characters and short enough that a CTC path exists.
inline std::string fit_word_to_slots(const std::string& word, int slots) {
  std::string out;
  const int max_len = slots - 2;
  int used = 0;
  for (char c : word) {
    const int need = (!out.empty() && out.back() == c) ? 2 : 1;
    if (static_cast<int>(out.size()) >= max_len || used + need > slots) break;
    out.push_back(c);
    used += need;
  }
  return out;
}

inline TrainingSet load_training_set(const Manifest& manifest,
                                     const std::filesystem::path& root,
                                     const PositionSet& ps) {
  if (manifest.entries.empty()) throw EmptyDataset();
  const CharSet cs;
  TrainingSet set;
  set.images.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    set.images.push_back(read_png_gray(root / entry.path));
    const std::string word = normalize_word(entry.transcription);
    if (word.empty()) throw EmptyWord();
    // over-long words for this slot count train on their feasible prefix
    set.labels.push_back(derive_labels(fit_word_to_slots(word, ps.slots), cs, ps));
    set.words.push_back(word);
  }
  return set;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

enum class DecodeMode { i2c2w, i2c_only };

inline DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "i2c2w") return DecodeMode::i2c2w;
  if (name == "i2c_only") return DecodeMode::i2c_only;
  throw Error("unknown decode mode: " + name + " (use i2c2w or i2c_only)");
}

// Exact full-word match rate.
inline double word_accuracy(const std::vector<std::string>& predictions,
                            const std::vector<std::string>& truths) {
  if (truths.empty()) throw EmptyDataset();
  if (predictions.size() != truths.size())
    throw ShapeMismatch("prediction and truth counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i)
    if (predictions[i] == normalize_word(truths[i])) ++hits;
  return static_cast<double>(hits) / truths.size();
}

template <typename S>
std::string decode_image(const Recognizer<S>& model, const Image& img,
                         DecodeMode mode) {
  Tape<S> tape(false);
  if (mode == DecodeMode::i2c2w) {
    const auto fwd = model.forward(tape, img);
    return ctc_greedy_decode(fwd.slot_logits->value, CharSet{});
  }
  auto out = model.i2c_decode(
      tape, model.encode(tape, model.backbone_forward(tape, img)));
  const auto candidates =
      extract_candidates(out.char_logits->value, out.pos_logits->value);
  return standalone_decode(candidates, CharSet{},
                           PositionSet{model.cfg.num_slots});
}

template <typename S>
double evaluate(const Recognizer<S>& model, const Manifest& manifest,
                const std::filesystem::path& root, DecodeMode mode) {
  if (manifest.entries.empty()) throw EmptyDataset();
  std::vector<std::string> predictions, truths;
  predictions.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    predictions.push_back(
        decode_image(model, read_png_gray(root / entry.path), mode));
    truths.push_back(entry.transcription);
  }
  return word_accuracy(predictions, truths);
}

// In-memory variant for already-loaded sets.
template <typename S>
double evaluate_set(const Recognizer<S>& model, const TrainingSet& set,
                    DecodeMode mode) {
  std::vector<std::string> predictions;
  predictions.reserve(set.images.size());
  for (const auto& img : set.images)
    predictions.push_back(decode_image(model, img, mode));
  return word_accuracy(predictions, set.words);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> metrics;  // one row per step
  long steps_run = 0;
};

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<LossBreakdown>& metrics) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOFailure("cannot write metrics " + path.string());
  os << "step,det_char,det_pos,recog,total\n";
  os.precision(10);
  for (std::size_t i = 0; i < metrics.size(); ++i)
    os << (i + 1) << ',' << metrics[i].det_char << ',' << metrics[i].det_pos
       << ',' << metrics[i].recog << ',' << metrics[i].total << '\n';
}

// End-to-end optimization of backbone, detector and word decoder. Runs
// cfg.steps steps (or until `stop_when` returns true, polled every
// cfg.eval_every steps); writes checkpoint.bin and metrics.csv to out_dir.
template <typename S>
TrainResult train(
    const TrainConfig& cfg, const Manifest& manifest,
    const std::filesystem::path& dataset_root,
    const std::filesystem::path& out_dir,
    const std::function<bool(long, const Recognizer<S>&)>& stop_when = {}) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  const TrainingSet data =
      load_training_set(manifest, dataset_root, PositionSet{cfg.model.num_slots});
  auto model = Recognizer<S>::init(cfg.model, cfg.seed);
  AdamW<S> optimizer(model.params, cfg.lr_backbone, cfg.lr_transformer,
                     cfg.weight_decay);

  Rng batch_rng(split_seed(cfg.seed, 0x62617463));
  Rng dropout_rng(split_seed(cfg.seed, 0x64726f70));

  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on first use
  const auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[batch_rng.below(i + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainResult result;
  result.metrics.reserve(cfg.steps);
  const auto checkpoint_path = out_dir / "checkpoint.bin";

  for (long step = 1; step <= cfg.steps; ++step) {
    model.params.zero_grads();
    Tape<S> tape;
    std::vector<SampleOutput<S>> outputs;
    std::vector<LabelSet> labels;
    outputs.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = next_index();
      const auto fwd = model.forward(tape, data.images[idx], true, &dropout_rng);
      outputs.push_back({fwd.i2c.char_logits, fwd.i2c.pos_logits,
                         fwd.slot_logits});
      labels.push_back(data.labels[idx]);
    }

    BatchLossNodes<S> batch;
    try {
      batch = total_loss(tape, outputs, labels, cfg.position_cost_weight,
                         cfg.null_class_weight);
      tape.backward(batch.total);
      optimizer.step(model.params, cfg.grad_clip);
    } catch (const NonFinite& e) {
      // parameters have not been touched by this step; they are the last
      // good state
      save_checkpoint(snapshot(model, step - 1, dropout_rng.serialize(),
                               cfg.echo()),
                      checkpoint_path);
      write_metrics_csv(out_dir / "metrics.csv", result.metrics);
      throw DivergenceDetected(std::string("at step ") + std::to_string(step) +
                               ": " + e.what());
    }
    result.metrics.push_back(batch.values);
    result.steps_run = step;

    if (stop_when && cfg.eval_every > 0 &&
        (step % cfg.eval_every == 0 || step == cfg.steps) &&
        stop_when(step, model))
      break;
  }

  result.checkpoint =
      snapshot(model, result.steps_run, dropout_rng.serialize(), cfg.echo());
  save_checkpoint(result.checkpoint, checkpoint_path);
  write_metrics_csv(out_dir / "metrics.csv", result.metrics);
  return result;
}

}  // namespace i2c2w
