// Command-line front end for the experiment runner.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "manyopt/experiment.hpp"

namespace {

std::vector<std::size_t> parse_positions(const std::string& spec) {
  // "0,5,10" or "0-59" or a mix.
  std::vector<std::size_t> out;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = std::string(manyopt::text::trim(part));
    if (part.empty()) continue;
    if (auto dash = part.find('-'); dash != std::string::npos) {
      const auto lo = std::stoul(part.substr(0, dash));
      const auto hi = std::stoul(part.substr(dash + 1));
      if (hi < lo) throw manyopt::ValidationError("bad position range: " + part);
      for (auto p = lo; p <= hi; ++p) out.push_back(p);
    } else {
      out.push_back(std::stoul(part));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Many-option text classification: reduce, compare, evaluate"};
  app.require_subcommand(1);

  std::string config_path;
  manyopt::ConfigOverrides ov;
  std::string backend, strategy, method, positions, cache_dir, out_dir;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  bool dry_run = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--backend", backend, "scripted | http");
    sub->add_option("--strategy", strategy, "none | standard | self_consistency | itr | cbwr");
    sub->add_option("--method", method, "full_zs ... pc_cot");
    sub->add_option("--repeats", repeats, "Number of repeats");
    sub->add_option("--seed", seed, "First repeat seed; repeats use seed, seed+1, ...");
    sub->add_option("--positions", positions, "Gold positions for bias-sweep, e.g. 0,5,10-12");
    sub->add_option("--cache-dir", cache_dir, "Reply cache directory");
    sub->add_option("--out-dir", out_dir, "Run directory");
    sub->add_flag("--dry-run", dry_run, "Render prompts only; no backend calls");
  };

  const std::vector<std::pair<manyopt::Command, std::string>> commands = {
      {manyopt::Command::ingest, "Validate inputs, summarize the dataset, measure silhouette"},
      {manyopt::Command::reduce, "Run the reduction stage and report HIT@K"},
      {manyopt::Command::classify, "Run reduce-then-compare and report accuracy"},
      {manyopt::Command::bias_sweep, "Pin the gold label at fixed positions"},
      {manyopt::Command::sample_challenge, "Select the lowest-margin instances"},
      {manyopt::Command::report, "Rebuild reports from persisted transcripts"},
  };
  std::map<CLI::App*, manyopt::Command> subs;
  for (const auto& [cmd, help] : commands) {
    auto* sub = app.add_subcommand(std::string(manyopt::to_string(cmd)), help);
    add_common(sub);
    subs[sub] = cmd;
  }

  CLI11_PARSE(app, argc, argv);

  manyopt::Command cmd = manyopt::Command::report;
  for (const auto& [sub, c] : subs)
    if (sub->parsed()) cmd = c;
  auto given = [&](const char* flag) {
    for (const auto& [sub, c] : subs)
      if (sub->parsed() && sub->count(flag) > 0) return true;
    return false;
  };

  try {
    if (given("--backend")) ov.backend = backend;
    if (given("--strategy")) ov.strategy = strategy;
    if (given("--method")) ov.method = method;
    if (given("--repeats")) ov.repeats = repeats;
    if (given("--seed")) ov.seed = seed;
    if (given("--positions")) ov.positions = parse_positions(positions);
    if (given("--cache-dir")) ov.cache_dir = std::filesystem::absolute(cache_dir).string();
    if (given("--out-dir")) ov.out_dir = std::filesystem::absolute(out_dir).string();

    auto cfg = manyopt::load_config(config_path, ov);
    manyopt::Experiment exp(std::move(cfg));
    auto res = exp.run(cmd, dry_run);
    std::cout << res.summary;
    for (const auto& p : res.written) std::cout << "wrote " << p.string() << '\n';
    return 0;
  } catch (const manyopt::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
