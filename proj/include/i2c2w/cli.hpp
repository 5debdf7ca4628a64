// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "i2c2w/trainer.hpp"

namespace i2c2w {

namespace cli_detail {

// Export path for one query's attention heatmap: attn_q<i>_<char>(<pos>).png
inline std::string heatmap_filename(int query, const CharCandidate& cand) {
  const CharSet cs;
  return "attn_q" + std::to_string(query) + "_" +
         std::string(1, cs.symbol(cand.char_class)) + "(" +
         std::to_string(cand.pos_class) + ").png";
}

inline void print_candidates(std::ostream& out,
                             const std::vector<CharCandidate>& candidates) {
  const CharSet cs;
  out << "query  char  pos  char_prob  pos_prob\n";
  char line[96];
  for (std::size_t q = 0; q < candidates.size(); ++q) {
    const auto& c = candidates[q];
    std::snprintf(line, sizeof(line), "%5zu  %4c  %3d  %9.4f  %8.4f\n", q,
                  cs.symbol(c.char_class), c.pos_class, c.char_prob(),
                  c.pos_prob());
    out << line;
  }
}

}  // namespace cli_detail

// Command-line entry point; `args` excludes the program name. Returns 0 on
// success, 1 on usage errors, 2 on runtime failures.
inline int dispatch(const std::vector<std::string>& args,
                    std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  using Scalar = float;
  namespace fs = std::filesystem;

  CLI::App app{"I2C2W scene-text recognizer"};
  app.require_subcommand(1);
  // key=value defaults, grouped in [subcommand] sections; flags take priority
  app.set_config("--config");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->fallthrough();
  int gen_count = 0;
  std::string gen_vocab, gen_out;
  std::uint64_t gen_seed = 0;
  DegradationRanges ranges;
  gen->add_option("--count", gen_count, "Number of images")->required();
  gen->add_option("--vocab", gen_vocab, "Vocabulary file, one word per line")
      ->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--max-curve", ranges.max_curvature,
                  "Curvature amplitude upper bound, pixels");
  gen->add_option("--max-rot", ranges.max_rotation,
                  "Rotation bound, degrees (sampled in [-max, max])");
  gen->add_option("--max-skew", ranges.max_skew, "Perspective skew bound");
  gen->add_option("--max-noise", ranges.max_noise, "Noise sigma bound");
  gen->add_option("--max-blur", ranges.max_blur, "Blur radius bound, pixels");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "Train a recognizer");
  tr->fallthrough();
  TrainConfig train_cfg;
  train_cfg.steps = 1000;
  std::string train_manifest, train_out;
  tr->add_option("--manifest", train_manifest, "Training manifest (TSV)")
      ->required();
  tr->add_option("--out", train_out, "Output directory")->required();
  tr->add_option("--steps", train_cfg.steps, "Optimization steps");
  tr->add_option("--batch-size", train_cfg.batch_size, "Batch size");
  tr->add_option("--seed", train_cfg.seed, "Training seed");
  tr->add_option("--n-queries", train_cfg.model.num_slots,
                 "Detection slot count N");
  tr->add_option("--beta", train_cfg.position_cost_weight,
                 "Position term weight in the matching cost");
  tr->add_option("--lr-backbone", train_cfg.lr_backbone,
                 "Backbone learning rate");
  tr->add_option("--lr-transformer", train_cfg.lr_transformer,
                 "Transformer learning rate");
  tr->add_option("--dim", train_cfg.model.model_dim, "Model width D");
  tr->add_option("--heads", train_cfg.model.num_heads, "Attention heads M");
  tr->add_option("--ffn-dim", train_cfg.model.ffn_dim, "FFN hidden width");
  tr->add_option("--enc-layers", train_cfg.model.encoder_layers,
                 "Encoder depth");
  tr->add_option("--i2c-dec-layers", train_cfg.model.i2c_decoder_layers,
                 "Detection decoder depth");
  tr->add_option("--c2w-dec-layers", train_cfg.model.c2w_decoder_layers,
                 "Word decoder depth");
  tr->add_option("--dropout", train_cfg.model.dropout, "Dropout rate");
  tr->add_option("--weight-decay", train_cfg.weight_decay, "Weight decay");
  tr->add_option("--grad-clip", train_cfg.grad_clip,
                 "Global gradient-norm clip");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate word accuracy");
  ev->fallthrough();
  std::string eval_ckpt, eval_manifest, eval_mode = "i2c2w";
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--manifest", eval_manifest, "Evaluation manifest")
      ->required();
  ev->add_option("--mode", eval_mode, "i2c2w or i2c_only")
      ->check(CLI::IsMember({"i2c2w", "i2c_only"}));

  // ---- recognize ----
  auto* rec = app.add_subcommand("recognize", "Recognize one image");
  rec->fallthrough();
  std::string rec_ckpt, rec_image;
  rec->add_option("--ckpt", rec_ckpt, "Checkpoint file")->required();
  rec->add_option("--image", rec_image, "PNG image")->required();

  // ---- attn-export ----
  auto* attn = app.add_subcommand("attn-export",
                                  "Export per-query attention heatmaps");
  attn->fallthrough();
  std::string attn_ckpt, attn_image, attn_out;
  attn->add_option("--ckpt", attn_ckpt, "Checkpoint file")->required();
  attn->add_option("--image", attn_image, "PNG image")->required();
  attn->add_option("--out", attn_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const auto vocab = load_vocab(gen_vocab);
      const auto manifest =
          generate_dataset(gen_count, vocab, ranges, gen_seed, gen_out);
      out << "wrote " << manifest.entries.size() << " images to " << gen_out
          << "\n";
      return 0;
    }

    if (tr->parsed()) {
      const fs::path manifest_path(train_manifest);
      const auto manifest = read_manifest(manifest_path);
      const auto result = train<Scalar>(train_cfg, manifest,
                                        manifest_path.parent_path(), train_out);
      out << "trained " << result.steps_run << " steps";
      if (!result.metrics.empty())
        out << ", final loss " << result.metrics.back().total;
      out << "\ncheckpoint: " << (fs::path(train_out) / "checkpoint.bin").string()
          << "\nmetrics: " << (fs::path(train_out) / "metrics.csv").string()
          << "\n";
      return 0;
    }

    if (ev->parsed()) {
      const auto model =
          model_from_checkpoint<Scalar>(load_checkpoint(eval_ckpt));
      const fs::path manifest_path(eval_manifest);
      const double acc =
          evaluate(model, read_manifest(manifest_path),
                   manifest_path.parent_path(), parse_decode_mode(eval_mode));
      out << "word_accuracy " << acc << "\n";
      return 0;
    }

    if (rec->parsed()) {
      const auto model =
          model_from_checkpoint<Scalar>(load_checkpoint(rec_ckpt));
      const Image img = read_png_gray(rec_image);
      Tape<Scalar> tape(false);
      const auto fwd = model.forward(tape, img);
      out << ctc_greedy_decode(fwd.slot_logits->value, CharSet{}) << "\n";
      cli_detail::print_candidates(
          out, extract_candidates(fwd.i2c.char_logits->value,
                                  fwd.i2c.pos_logits->value));
      return 0;
    }

    if (attn->parsed()) {
      const auto model =
          model_from_checkpoint<Scalar>(load_checkpoint(attn_ckpt));
      const Image img = read_png_gray(attn_image);
      std::vector<CharCandidate> candidates;
      const auto maps = attention_maps(model, img, &candidates);
      std::error_code ec;
      fs::create_directories(attn_out, ec);
      for (std::size_t q = 0; q < maps.size(); ++q) {
        const Image up = upsample_heatmap(maps[q], img.width, img.height);
        write_png_gray8(fs::path(attn_out) /
                            cli_detail::heatmap_filename(static_cast<int>(q),
                                                         candidates[q]),
                        up);
      }
      out << "wrote " << maps.size() << " heatmaps to " << attn_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace i2c2w
