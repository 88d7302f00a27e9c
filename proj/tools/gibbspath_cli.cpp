// Command-line front end: gibbspath {clt|spectrum|she|verify <lemma>} [flags]

#include <iostream>

#include "CLI11.hpp"
#include "gibbspath/cli.hpp"

using namespace gibbspath;

int main(int argc, char** argv) {
  CLI::App app{"Gibbs measures on Wiener paths: CLT, transfer spectrum, annealed SHE, lemma checks"};
  app.require_subcommand(1);

  std::string config_path, out = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  app.add_option("--config", config_path, "config file (TOML subset)");
  auto* seed_opt = app.add_option("--seed", seed, "base seed");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory");

  auto* clt = app.add_subcommand("clt", "endpoint variance of the Gibbs measure by MCMC");
  auto* spectrum = app.add_subcommand("spectrum", "transfer operator, Perron pair, CLT variance routes");
  auto* she = app.add_subcommand("she", "annealed mollified SHE ratio vs homogenized reference");
  auto* verify = app.add_subcommand("verify", "lemma checks");
  std::string lemma;
  verify->add_option("lemma", lemma, "khasminskii | grr | delta_moment | simplex | supinf | pinsker")->required();
  // every verify.* number key doubles as a flag: --a 0.25 --n 1
  std::map<std::string, double> lemma_flags;
  for (const auto& [key, kind] : config_schema()) {
    if (key.rfind("verify.", 0) != 0 || kind != KeyKind::Number) continue;
    const std::string name = key.substr(7);
    verify->add_option_function<double>("--" + name, [&lemma_flags, key](double v) { lemma_flags[key] = v; },
                                         "override " + key);
  }
  for (auto* sub : {clt, spectrum, she, verify}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = config_path.empty() ? Config{} : load_config(config_path);
    for (const auto& [k, v] : lemma_flags) {
      Config next;
      for (const auto& [ck, cv] : cfg.values())
        if (ck != k) next.set(ck, cv);
      next.set(k, v);
      cfg = next;
    }
    RunOptions opt;
    opt.subcommand = app.get_subcommands().front()->get_name();
    opt.lemma = lemma;
    opt.out = out;
    if (*seed_opt) opt.seed = seed;
    if (*threads_opt) opt.threads = threads;
    const auto res = run(cfg, opt);
    std::cout << emit_json(res.summary);
    std::cerr << (res.pass ? "pass" : "FAIL") << ": " << opt.subcommand << (lemma.empty() ? "" : " " + lemma)
              << " -> " << out << "\n";
    return res.exit_code;
  } catch (const RejectedParameters& e) {
    std::cerr << "rejected parameters: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
