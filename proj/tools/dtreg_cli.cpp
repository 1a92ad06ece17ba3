#include <algorithm>
#include <atomic>
#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtreg/error.hpp"
#include "dtreg/io.hpp"
#include "dtreg/pipeline.hpp"
#include "dtreg/text.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

enum Exit { kOk = 0, kFailure = 1, kBudget = 2, kCacheMiss = 3, kConfig = 4, kChecksum = 5 };

struct Options {
  std::string config;
  std::string mode = "replay";
  std::string cache = "cache";
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::string stage;
  std::vector<std::string> select;
  bool force = false;
};

dtreg::pipeline::Pipeline make_pipeline(const Options& o) {
  if (o.config.empty()) throw dtreg::ConfigError("--config is required");
  auto cfg = dtreg::pipeline::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  return dtreg::pipeline::Pipeline(std::move(cfg), dtreg::parse_run_mode(o.mode), o.cache, o.out);
}

void print_entry(const std::string& stage, const nlohmann::json& entry) {
  std::cout << stage << ": " << entry.value("counts", nlohmann::json::object()).dump() << "\n";
}

// A completed stage is skipped on resume when every recorded output is still intact.
bool already_done(const dtreg::pipeline::Pipeline& p, const std::string& stage) {
  const auto& stages = p.manifest().at("stages");
  if (!stages.contains(stage) || stages[stage].value("status", "") != "completed") return false;
  for (const auto& [rel, sum] : stages[stage].at("outputs").items()) {
    const auto file = p.out_dir() / rel;
    if (!std::filesystem::exists(file) || dtreg::io::sha256_file(file) != sum.get<std::string>()) return false;
  }
  return true;
}

int run(const Options& o, const std::string& command) {
  if (command == "report-catalog") {
    for (const auto& n : dtreg::pipeline::Pipeline::report_selection_catalog()) std::cout << n << "\n";
    return kOk;
  }
  dtreg::pipeline::DirectoryLock lock(o.out);
  auto p = make_pipeline(o);
  if (command == "audit-serve") {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    p.serve_audit([](int port) { std::cout << "audit endpoints listening on port " << port << std::endl; },
                  [] { return !g_stop.load(); });
    return kOk;
  }
  if (command == "report" && !o.select.empty()) {
    for (const auto& f : p.emit_report(o.select)) std::cout << f.string() << "\n";
    return kOk;
  }
  if (command == "run-all") {
    for (const auto& s : dtreg::pipeline::batch_stages()) {
      if (!o.force && already_done(p, s)) {
        std::cout << s << ": up to date\n";
        continue;
      }
      print_entry(s, p.run_stage(s));
    }
    return kOk;
  }
  print_entry(command, p.run_stage(command));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regulated-predictor extraction pipeline"};
  app.require_subcommand(0, 1);
  Options o;
  app.add_option("--config", o.config, "Pipeline configuration (JSON)");
  app.add_option("--mode", o.mode, "live or replay")->check(CLI::IsMember({"live", "replay"}));
  app.add_option("--cache", o.cache, "Response cache directory");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--seed", o.seed, "Override the configured seed");
  app.add_option("--stage", o.stage, "Run a single stage by name");

  std::vector<CLI::App*> subs;
  for (const auto& s : dtreg::pipeline::stage_names()) {
    auto* sub = app.add_subcommand(s, "Run the " + s + " stage");
    if (s == "report") {
      sub->add_option("--select", o.select, "Report items to emit (default: configured bundle)")->delimiter(',');
    }
    subs.push_back(sub);
  }
  auto* all = app.add_subcommand("run-all", "Run every batch stage in order, skipping completed ones");
  all->add_flag("--force", o.force, "Re-run stages that are already complete");
  subs.push_back(all);
  subs.push_back(app.add_subcommand("report-catalog", "List selectable report items"));

  CLI11_PARSE(app, argc, argv);

  std::string command = o.stage;
  for (auto* s : subs) {
    if (s->parsed()) command = s->get_name();
  }
  if (command.empty()) {
    std::cerr << app.help();
    return kConfig;
  }
  const auto& names = dtreg::pipeline::stage_names();
  if (command != "run-all" && command != "report-catalog" &&
      std::find(names.begin(), names.end(), command) == names.end()) {
    std::cerr << "unknown stage: " << command << "\n";
    return kConfig;
  }

  try {
    return run(o, command);
  } catch (const dtreg::pipeline::ViolationBudgetExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBudget;
  } catch (const dtreg::CacheMiss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCacheMiss;
  } catch (const dtreg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const dtreg::ChecksumMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kChecksum;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
