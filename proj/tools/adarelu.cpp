#include "adarelu/commands.hpp"

#include <CLI11.hpp>

#include <exception>
#include <iostream>

int main(int argc, char** argv) {
  using namespace adarelu;
  CLI::App app{"Style-adaptive rectifier image translation toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic stripes/dots dataset");
  std::uint64_t gen_seed = 0;
  Index gen_count = 512;
  int gen_size = 32;
  std::string gen_out;
  gen->add_option("--seed", gen_seed);
  gen->add_option("--count", gen_count, "Images per domain")->capture_default_str();
  gen->add_option("--size", gen_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  auto* tr = app.add_subcommand("train", "Train a translation model");
  std::string tr_config, tr_data, tr_out;
  tr->add_option("--config", tr_config)->required();
  tr->add_option("--data", tr_data, "Overrides data_dir");
  tr->add_option("--out", tr_out, "Overrides out_dir");

  auto* tl = app.add_subcommand("translate", "Translate one image into a PNG grid");
  TranslateOptions tl_opt;
  double forced_slope = 0.0;
  tl->add_option("--checkpoint", tl_opt.checkpoint)->required();
  tl->add_option("--source", tl_opt.source)->required();
  tl->add_option("--style", tl_opt.style, "latent:<seed> or ref:<path>")->required();
  tl->add_option("--out", tl_opt.out)->required();
  tl->add_option("--domain", tl_opt.domain, "Target domain")->capture_default_str();
  tl->add_option("--count", tl_opt.count, "Outputs for a latent style")->capture_default_str();
  auto* force = tl->add_option("--force-slope", forced_slope, "Replace A(w) by this constant slope");

  auto* ev = app.add_subcommand("eval", "Diversity, controllability and FID proxy");
  std::string ev_ckpt, ev_data, ev_mode = "latent", ev_out;
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--mode", ev_mode)->check(CLI::IsMember({"latent", "ref"}))->capture_default_str();
  ev->add_option("--out", ev_out, "Metrics CSV")->required();
  ev->add_option("--seed", ev_seed);

  auto* gc = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  std::string gc_ops = "all";
  int gc_seeds = 20;
  gc->add_option("--ops", gc_ops, "all or a comma-separated list")->capture_default_str();
  gc->add_option("--seeds", gc_seeds)->capture_default_str();

  auto* an = app.add_subcommand("analyze-stats", "Per-channel slope and negative-part statistics");
  std::string an_ckpt, an_data, an_out;
  std::uint64_t an_seed = 0;
  an->add_option("--checkpoint", an_ckpt)->required();
  an->add_option("--data", an_data)->required();
  an->add_option("--out", an_out)->required();
  an->add_option("--seed", an_seed);

  auto* dc = app.add_subcommand("dump-config", "Print the effective configuration");
  std::string dc_config, dc_out;
  dc->add_option("--config", dc_config);
  dc->add_option("--out", dc_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_seed, gen_count, gen_out, gen_size, std::cout);
    if (tr->parsed()) return cmd_train(tr_config, tr_data, tr_out, std::cout);
    if (tl->parsed()) {
      if (force->count() > 0) tl_opt.force_slope = forced_slope;
      return cmd_translate(tl_opt, std::cout);
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, parse_guidance_mode(ev_mode), ev_out, ev_seed, std::cout);
    if (gc->parsed()) return cmd_gradcheck(gc_ops, gc_seeds, std::cout);
    if (an->parsed()) return cmd_analyze_stats(an_ckpt, an_data, an_out, an_seed, std::cout);
    if (dc->parsed()) return cmd_dump_config(dc_config, dc_out, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
