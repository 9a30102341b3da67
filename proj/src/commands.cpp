#include "adarelu/commands.hpp"

#include "adarelu/checkpoint.hpp"
#include "adarelu/gradcheck.hpp"
#include "adarelu/image_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adarelu {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::exists(path)) throw std::runtime_error(std::string("missing ") + what + ": " + path);
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

TranslationModel<float> load_model(const std::string& path) {
  require_file(path, "checkpoint");
  return model_from_checkpoint<float>(load_checkpoint(path));
}

std::vector<SynthSample> load_data(const std::string& dir) {
  require_file((fs::path(dir) / "manifest.txt").string(), "dataset manifest");
  return load_dataset(dir);
}

std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw std::invalid_argument("bad seed: " + text);
  return v;
}

}  // namespace

int cmd_gen_data(std::uint64_t seed, Index count, const std::string& out, int image_size, std::ostream& log) {
  const auto samples = generate_dataset(seed, count, image_size);
  const auto entries = write_dataset(samples, out);
  Index train = 0;
  for (const auto& s : samples) train += s.train;
  log << "wrote " << entries.size() << " images (" << train << " train, " << entries.size() - train << " test) to "
      << out << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              std::ostream& log) {
  require_file(config_path, "config");
  RunConfig cfg = RunConfig::load(config_path);
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (cfg.data_dir.empty() || cfg.out_dir.empty()) throw std::invalid_argument("train needs a data and an out directory");
  const auto samples = load_data(cfg.data_dir);
  const TrainData data = TrainData::from_samples(samples, cfg.train.arch.num_domains);
  fs::create_directories(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / "config.txt").string(), cfg.dump());
  const TrainState st = train_to_directory(cfg.train, data, cfg.out_dir);
  log << "trained " << st.iteration << " iterations; final losses: " << st.last.csv_row() << '\n';
  return 0;
}

int cmd_translate(const TranslateOptions& opt, std::ostream& log) {
  TranslationModel<float> model = load_model(opt.checkpoint);
  require_file(opt.source, "source image");
  const ArchConfig& arch = model.config();
  if (opt.domain < 0 || opt.domain >= arch.num_domains) throw std::invalid_argument("target domain out of range");
  if (opt.force_slope) {
    if (!is_style_adaptive(arch.activation)) throw std::invalid_argument("--force-slope needs an adaptive activation");
    for (int b = 0; b < arch.translator_blocks; ++b) {
      const std::string p = "gen.trans." + std::to_string(b) + ".act.affine.";
      model.params().at(p + "weight").array() = 0.0f;
      model.params().at(p + "bias").array() = static_cast<float>(*opt.force_slope);
    }
  }
  const Tensor<float> source = load_png(opt.source);
  std::vector<Tensor<float>> styles;
  if (opt.style.rfind("latent:", 0) == 0) {
    if (opt.count < 1) throw std::invalid_argument("--count must be >= 1");
    std::mt19937_64 rng(mix_seed(parse_seed(opt.style.substr(7))));
    for (int k = 0; k < opt.count; ++k) {
      styles.push_back(model.map_latent(randn<float>({1, arch.latent_dim, 1, 1}, rng), opt.domain));
    }
  } else if (opt.style.rfind("ref:", 0) == 0) {
    const std::string ref = opt.style.substr(4);
    require_file(ref, "reference image");
    styles.push_back(model.encode_style(load_png(ref), opt.domain));
  } else {
    throw std::invalid_argument("--style must be latent:<seed> or ref:<path>, got " + opt.style);
  }
  const Tensor<float> out =
      model.translate(stack(std::vector<Tensor<float>>(styles.size(), source)), stack(styles));
  std::vector<Tensor<float>> cells{source};
  for (Index k = 0; k < out.shape().n; ++k) cells.push_back(slice_sample(out, k));
  if (const auto parent = fs::path(opt.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_png(tile_grid(stack(cells), static_cast<Index>(cells.size())), opt.out);
  log << "wrote " << out.shape().n << " translation(s) to " << opt.out << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, GuidanceMode mode, const std::string& out,
             std::uint64_t seed, std::ostream& log) {
  const TranslationModel<float> model = load_model(checkpoint);
  const auto samples = load_data(data_dir);
  EvalConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  std::vector<Tensor<float>> grids;
  const MetricsReport report = evaluate(model, samples, cfg, &grids);
  write_text(out, report.csv());
  const fs::path base = fs::path(out).replace_extension();
  const int D = model.config().num_domains;
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const int s = static_cast<int>(g) / D, t = static_cast<int>(g) % D;
    save_png(grids[g], base.string() + "_" + to_string(mode) + "_d" + std::to_string(s) + "_to_d" +
                           std::to_string(t) + ".png");
  }
  char line[160];
  std::snprintf(line, sizeof(line), "%s cross-domain: diversity=%.6f controllability=%.6f fid_proxy=%.6f\n",
                to_string(mode).c_str(), report.diversity, report.controllability, report.fid_proxy);
  log << line;
  return 0;
}

int cmd_gradcheck(const std::string& ops, int seeds, std::ostream& log) {
  std::vector<std::string> names;
  if (ops == "all") {
    names = gradcheck_ops();
  } else {
    std::stringstream ss(ops);
    for (std::string name; std::getline(ss, name, ',');) {
      if (!name.empty()) names.push_back(name);
    }
  }
  if (names.empty()) throw std::invalid_argument("no gradcheck ops selected");
  int failed = 0;
  for (const auto& name : names) {
    const GradCheckReport r = check_layer(name, seeds);
    log << r.str() << '\n';
    failed += !r.passed;
  }
  log << (failed ? "gradcheck FAILED for " + std::to_string(failed) + " op(s)" : "gradcheck passed") << '\n';
  return failed ? 1 : 0;
}

std::vector<SlopeStatsRow> slope_statistics(const TranslationModel<float>& model,
                                            const std::vector<Tensor<float>>& sources, std::uint64_t seed) {
  const ArchConfig& arch = model.config();
  if (sources.empty()) throw std::invalid_argument("analyze-stats needs source images");
  std::mt19937_64 rng(mix_seed(seed));
  std::uniform_int_distribution<int> domain(0, arch.num_domains - 1);
  std::vector<Tensor<float>> w;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const int d = domain(rng);
    w.push_back(model.map_latent(randn<float>({1, arch.latent_dim, 1, 1}, rng), d));
  }
  TranslatorTrace<float> trace;
  model.translate(stack(sources), stack(w), &trace);
  std::vector<SlopeStatsRow> rows;
  for (std::size_t b = 0; b < trace.rectifier_inputs.size(); ++b) {
    const Tensor<float>& x = trace.rectifier_inputs[b];
    const Tensor<float>& slopes = trace.slopes[b];
    const Shape& s = x.shape();
    for (Index c = 0; c < s.c; ++c) {
      SlopeStatsRow row;
      row.block = static_cast<int>(b);
      row.channel = c;
      double sum = 0.0, sum2 = 0.0;
      for (Index n = 0; n < s.n; ++n) {
        const double a = slopes(n, c, 0, 0);
        sum += a;
        sum2 += a * a;
        Tensor<double> plane({1, 1, s.h, s.w});
        plane.array() = x.plane(n, c).template cast<double>();
        try {
          const NegativePartStats st = negative_part_stats(plane, a);
          row.mean_ratio += st.mean_ratio;
          row.var_ratio += st.var_ratio;
          ++row.samples;
        } catch (const std::invalid_argument&) {
          // too few negatives in this plane
        }
      }
      row.slope_mean = sum / static_cast<double>(s.n);
      row.slope_std = std::sqrt(std::max(sum2 / static_cast<double>(s.n) - row.slope_mean * row.slope_mean, 0.0));
      if (row.samples > 0) {
        row.mean_ratio /= static_cast<double>(row.samples);
        row.var_ratio /= static_cast<double>(row.samples);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

int cmd_analyze_stats(const std::string& checkpoint, const std::string& data_dir, const std::string& out,
                      std::uint64_t seed, std::ostream& log) {
  const TranslationModel<float> model = load_model(checkpoint);
  const auto samples = load_data(data_dir);
  std::vector<Tensor<float>> sources;
  for (const auto& s : samples) {
    if (!s.train && sources.size() < 32) sources.push_back(s.image);
  }
  const auto rows = slope_statistics(model, sources, seed);
  std::ostringstream csv;
  csv << "block,channel,slope_mean,slope_std,negative_mean_ratio,negative_var_ratio,samples\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%ld,%.9g,%.9g,%.9g,%.9g,%ld\n", r.block, static_cast<long>(r.channel),
                  r.slope_mean, r.slope_std, r.mean_ratio, r.var_ratio, static_cast<long>(r.samples));
    csv << buf;
  }
  write_text(out, csv.str());
  log << "wrote statistics for " << rows.size() << " channels to " << out << '\n';
  return 0;
}

int cmd_dump_config(const std::string& config_path, const std::string& out, std::ostream& log) {
  RunConfig cfg;
  if (!config_path.empty()) {
    require_file(config_path, "config");
    cfg = RunConfig::load(config_path);
  }
  if (out.empty()) {
    log << cfg.dump();
  } else {
    write_text(out, cfg.dump());
  }
  return 0;
}

}  // namespace adarelu
