#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wavemix/cli.hpp"

namespace {

int threads_from_env() {
  const char* env = std::getenv("WAVETRAIN_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) {
    std::cerr << "ignoring WAVETRAIN_THREADS='" << env << "'\n";
    return 1;
  }
  return static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace wavemix;
  CLI::App app{"Numerical lab for periodic wave trains of reaction-diffusion systems"};
  std::string config_path;
  std::string out_dir = "out";
  int threads = 0;
  bool verbose = false, print_schema = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (default: WAVETRAIN_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", verbose, "also print warnings");
  app.add_flag("--print-schema", print_schema, "print the configuration schema and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 3;
  }
  if (print_schema) {
    std::cout << cli::schema().dump(2) << "\n";
    return 0;
  }

  cli::RunOptions opt;
  opt.threads = threads > 0 ? threads : threads_from_env();
  opt.verbose = verbose;
  if (config_path.empty())
    return cli::report_error(cli::KeyError("--config", "no configuration given"), out_dir, std::cerr);

  nlohmann::json cfg;
  std::ifstream in(config_path);
  if (!in)
    return cli::report_error(cli::KeyError("--config", "cannot read " + config_path), out_dir, std::cerr);
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    return cli::report_error(cli::KeyError("--config", std::string("not valid JSON: ") + e.what()), out_dir,
                             std::cerr);
  }
  return cli::run(cfg, out_dir, opt, std::cout);
}
