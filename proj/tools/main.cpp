#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opadv/config.hpp"
#include "opadv/error.hpp"
#include "opadv/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"opadv: adversarial op-code obfuscation pipeline"};
  app.set_help_flag("-h,--help", "Print help");
  app.footer(opadv::pipeline::usage());

  std::string workdir = ".";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string subcommand;
  app.add_option("--workdir", workdir, "Directory all configured paths are relative to");
  app.add_option("--config", config_path, "Config file (key = value with [section] headers)");
  app.add_option("--seed", seed, "Global seed, overrides the file");
  app.add_option("--set", sets, "Override section.key=value (repeatable)");
  app.add_option("subcommand", subcommand, "Pipeline stage")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << opadv::pipeline::usage();
    return 1;
  }

  std::vector<opadv::config::Override> overrides;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "error: --set expects section.key=value, got '" << s << "'\n";
      return 1;
    }
    overrides.push_back({s.substr(0, eq), s.substr(eq + 1)});
  }
  if (seed) overrides.push_back({"run.seed", std::to_string(*seed)});

  opadv::config::RunConfig cfg;
  try {
    cfg = config_path.empty() ? opadv::config::parse_config_text("", overrides)
                              : opadv::config::parse_config(config_path, overrides);
  } catch (const opadv::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return opadv::pipeline::dispatch(subcommand, cfg, workdir);
}
