// scalestack: multi-scale CNN pipeline (synth, prepare, train, eval, visualize, pyramid).

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "scalestack/commands.hpp"

namespace {

void print_history_line(const scalestack::TrainSummary& s) {
  if (s.history.epochs.empty()) return;
  const auto& e = s.history.epochs.back();
  std::printf("epochs=%zu train_loss=%.4f val_loss=%.4f val_mca=%.2f lr=%.3g\n",
              s.history.epochs.size(), e.train_loss, e.val_loss, e.val_mca, e.lr);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace scalestack;
  CLI::App app{"Multi-scale convolutional network toolkit"};
  app.set_config("--config", "", "Key=value config file; command-line flags win");
  app.fallthrough();
  app.require_subcommand(1);

  RunConfig rc;
  std::string kind = "gaussian";
  app.add_option("--manifest", rc.manifest, "Manifest CSV (path,label[,split])");
  app.add_option("--cache", rc.cache_dir, "Pyramid cache directory (SCALESTACK_CACHE overrides)");
  app.add_option("--scales", rc.scales, "Scale set, ascending, factor two apart")->delimiter(',');
  app.add_option("--pyramid-kind", kind, "gaussian|naive")->check(CLI::IsMember({"gaussian", "naive"}));
  app.add_option("--preset", rc.preset, "Network preset (desk|full)");
  app.add_option("--output", rc.output_dir, "Run output directory");
  app.add_option("--seed", rc.seed, "Run seed");
  app.add_option("--lr", rc.train.learning_rate);
  app.add_option("--momentum", rc.train.momentum);
  app.add_option("--weight-decay", rc.train.weight_decay);
  app.add_option("--lr-decay", rc.train.lr_decay_factor);
  app.add_option("--patience", rc.train.plateau_patience);
  app.add_option("--min-delta", rc.train.min_delta);
  app.add_option("--min-lr", rc.train.min_lr);
  app.add_option("--batch-size", rc.train.batch_size);
  app.add_option("--grad-clip", rc.train.grad_clip_norm, "max gradient L2 norm per step, 0 = off");
  app.add_option("--epochs", rc.train.max_epochs);
  app.add_flag("--flip", rc.train.flip, "Random horizontal flips while training");
  app.add_flag("--skip-bad", rc.skip_bad, "Continue past undecodable images in prepare");
  app.add_option("--top-n", rc.top_n, "Classes listed in each variation ranking");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic multi-scale corpus");
  synth->add_option("--out", so.out_dir, "Corpus directory");
  synth->add_option("--classes", so.spec.num_classes);
  synth->add_option("--per-class", so.spec.per_class);
  synth->add_option("--base-side", so.spec.base_side);
  synth->add_option("--synth-seed", so.spec.seed);
  synth->add_flag("--masks", so.spec.write_masks, "Also write texture masks");
  synth->add_option("--noise-sigma", so.spec.style.noise_sigma);
  synth->add_option("--texture-amplitude", so.spec.style.texture_amplitude);
  synth->add_option("--layout-amplitude", so.spec.style.layout_amplitude);

  app.add_subcommand("prepare", "Build and cache pyramids for every manifest image");

  std::size_t train_scale = 0;
  auto* train = app.add_subcommand("train", "Train one scale-specific network");
  train->add_option("--scale", train_scale, "Scale (shortest side) to train")->required();

  app.add_subcommand("eval", "Evaluate all scale subsets and write reports");

  VisualizeOptions vo;
  auto* vis = app.add_subcommand("visualize", "Guided-backpropagation saliency map");
  vis->add_option("--checkpoint", vo.checkpoint)->required();
  vis->add_option("--image", vo.image)->required();
  vis->add_option("--class", vo.target, "Class name or index")->required();
  vis->add_option("--out", vo.out, "Output PNG")->required();

  PyramidOptions po;
  std::string pkind = "gaussian";
  auto* pyr = app.add_subcommand("pyramid", "Write the pyramid levels of one image");
  pyr->add_option("--input", po.input)->required();
  pyr->add_option("--levels", po.levels);
  pyr->add_option("--base", po.base);
  pyr->add_option("--kind", pkind)->check(CLI::IsMember({"gaussian", "naive"}));
  pyr->add_option("--out", po.out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    rc.kind = parse_pyramid_kind(kind);
    if (synth->parsed()) {
      if (!synth->count("--synth-seed")) so.spec.seed = rc.seed;
      const auto corpus = cmd_synth(so);
      std::printf("wrote %zu images and %s\n", corpus.manifest.samples.size(),
                  corpus.manifest_path.string().c_str());
    } else if (app.got_subcommand("prepare")) {
      const auto s = cmd_prepare(rc);
      std::printf("written=%zu skipped=%zu failed=%zu\n", s.written, s.skipped, s.failed.size());
    } else if (train->parsed()) {
      const auto s = cmd_train(rc, train_scale);
      print_history_line(s);
      std::printf("checkpoint=%s sha256=%s\n", s.checkpoint.string().c_str(),
                  s.checkpoint_sha256.c_str());
    } else if (app.got_subcommand("eval")) {
      const auto s = cmd_eval(rc);
      std::fputs(summary_table(s.records, rc.scales).c_str(), stdout);
      std::printf("reports in %s\n", s.report_dir.string().c_str());
    } else if (vis->parsed()) {
      cmd_visualize(vo);
      std::printf("wrote %s\n", vo.out.string().c_str());
    } else if (pyr->parsed()) {
      po.kind = parse_pyramid_kind(pkind);
      const auto p = cmd_pyramid(po);
      std::printf("wrote %zu levels to %s\n", p.size(), po.out_dir.string().c_str());
    }
  } catch (const CommandError& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
