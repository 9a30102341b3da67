#pragma once

#include "adarelu/run_config.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

namespace adarelu {

// Command bodies behind the adarelu executable. Each returns the process exit code and
// throws on bad input (missing files, bad config keys, malformed checkpoints).

int cmd_gen_data(std::uint64_t seed, Index count, const std::string& out, int image_size, std::ostream& log);

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              std::ostream& log);

struct TranslateOptions {
  std::string checkpoint;
  std::string source;
  std::string style;  // latent:<seed> | ref:<path>
  std::string out;
  int domain = 0;     // target domain
  int count = 4;      // outputs for latent styles
  std::optional<double> force_slope;  // zero every slope-affine weight, set the bias to this
};
int cmd_translate(const TranslateOptions& opt, std::ostream& log);

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, GuidanceMode mode, const std::string& out,
             std::uint64_t seed, std::ostream& log);

int cmd_gradcheck(const std::string& ops, int seeds, std::ostream& log);

int cmd_analyze_stats(const std::string& checkpoint, const std::string& data_dir, const std::string& out,
                      std::uint64_t seed, std::ostream& log);

int cmd_dump_config(const std::string& config_path, const std::string& out, std::ostream& log);

/// Translator-activation statistics for analyze-stats.
struct SlopeStatsRow {
  int block = 0;
  Index channel = 0;
  double slope_mean = 0.0;
  double slope_std = 0.0;
  double mean_ratio = 0.0;  // averaged over samples with a usable negative part
  double var_ratio = 0.0;
  Index samples = 0;
};
std::vector<SlopeStatsRow> slope_statistics(const TranslationModel<float>& model,
                                            const std::vector<Tensor<float>>& sources, std::uint64_t seed);

}  // namespace adarelu
