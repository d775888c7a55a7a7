// SPDX-License-Identifier: Apache-2.0
#include "naepro/cli.hpp"

#include <algorithm>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "naepro/error.hpp"
#include "naepro/evalgen.hpp"
#include "naepro/fileio.hpp"
#include "naepro/fragments.hpp"
#include "naepro/io.hpp"
#include "naepro/model.hpp"
#include "naepro/training.hpp"

namespace naepro::cli {

using nlohmann::ordered_json;

namespace {

enum class Format { kJson, kText, kCsv };

Format parse_format(const std::string& name) {
  if (name == "json") return Format::kJson;
  if (name == "text") return Format::kText;
  if (name == "csv") return Format::kCsv;
  throw ConfigError("unknown output format '" + name + "'");
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir.back() == '/') return dir + name;
  return dir + "/" + name;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || item.front() == '-') {
      throw ConfigError(std::string(what) + ": '" + item + "' is not a non-negative integer");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError(std::string(what) + " is empty");
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// ---- subcommands ------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out, fragments;
};

int do_train(const TrainArgs& a, std::ostream& out) {
  const io::RunConfig rc = a.config.empty() ? io::RunConfig{} : io::load_config(a.config);
  rc.model.validate();
  rc.train.validate();
  std::vector<ProteinRecord> records = io::load_records(a.data);
  if (!a.fragments.empty()) {
    io::apply_fragment_mask(records, fragments::parse_fragment_mask(read_file(a.fragments), a.fragments));
  }
  const io::DatasetSplit split = io::split_dataset(records, rc.split, rc.train.seed);
  const std::vector<ProteinRecord> train = io::select(records, split.train);
  const std::vector<ProteinRecord> val = io::select(records, split.validation);

  std::string log_text, timing_text;
  auto on_epoch = [&](const training::EpochLog& e) {
    const std::string line = training::log_line(e);
    out << line << '\n' << std::flush;
    log_text += line + "\n";
    timing_text += training::timing_line(e) + "\n";
  };
  training::FitResult fit = training::fit(model::Model::create(rc.model), train, val, rc.train, on_epoch);

  ordered_json split_json{{"train", split.train}, {"validation", split.validation}, {"test", split.test}};
  write_file_atomic(join_path(a.out, "train_log.jsonl"), log_text);
  write_file_atomic(join_path(a.out, "timing.jsonl"), timing_text);
  write_file_atomic(join_path(a.out, "split.json"), split_json.dump(2) + "\n");
  write_file_atomic(join_path(a.out, "config.txt"), io::serialize_config(rc));
  model::save_checkpoint(fit.final_model, join_path(a.out, "checkpoint.json"));
  model::save_checkpoint(fit.best_model, join_path(a.out, "best_checkpoint.json"));
  out << "best epoch " << fit.best_epoch << " loss " << fit.best_loss << "; wrote " << a.out << '\n';
  if (model::clamp_warnings() > 0) {
    out << "warning: " << model::clamp_warnings() << " log-probabilities were clamped at 1e-12\n";
  }
  return kExitOk;
}

struct GenerateArgs {
  std::string checkpoint, input, out, fragments;
};

int do_generate(const GenerateArgs& a, std::ostream& out) {
  model::Model m = model::load_checkpoint(a.checkpoint);
  std::vector<ProteinRecord> records = io::load_records(a.input);
  if (!a.fragments.empty()) {
    io::apply_fragment_mask(records, fragments::parse_fragment_mask(read_file(a.fragments), a.fragments));
  }
  std::string text;
  for (const ProteinRecord& r : records) {
    const model::Prediction p = model::predict(m, r);
    ordered_json coords = ordered_json::array();
    for (Eigen::Index i = 0; i < p.coords.rows(); ++i) coords.push_back({p.coords(i, 0), p.coords(i, 1), p.coords(i, 2)});
    text += ordered_json{{"id", r.id}, {"sequence", p.sequence}, {"coords", std::move(coords)}}.dump() + "\n";
  }
  emit(a.out, text, out);
  return kExitOk;
}

struct MineArgs {
  std::string msa, out;
  double tau = 30.0;
};

int do_mine(const MineArgs& a, std::ostream& out) {
  const fragments::Alignment al = io::load_aligned_fasta(a.msa);
  emit(a.out, fragments::to_json(fragments::mine_fragments(al, a.tau)), out);
  return kExitOk;
}

struct CertifyArgs {
  std::string checkpoint;
  evalgen::CertifyOptions options;
};

int do_certify(const CertifyArgs& a, std::ostream& out, std::ostream& err) {
  model::Model m = model::load_checkpoint(a.checkpoint);
  const evalgen::CertifyReport rep = evalgen::certify_equivariance(m, a.options);
  out << rep.to_json() << '\n';
  if (!rep.pass) {
    err << "naepro: error[equivariance]: deviation above tolerance (coordinate " << rep.max_coordinate
        << ", probability " << rep.max_probability << ")\n";
    return kExitFailure;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out, fragments, format = "json";
};

int do_eval(const EvalArgs& a, std::ostream& out) {
  const Format f = parse_format(a.format);
  model::Model m = model::load_checkpoint(a.checkpoint);
  std::vector<ProteinRecord> records = io::load_records(a.data);
  if (!a.fragments.empty()) {
    io::apply_fragment_mask(records, fragments::parse_fragment_mask(read_file(a.fragments), a.fragments));
  }
  const evalgen::EvalReport rep = evalgen::evaluate(m, records);
  emit(a.out, f == Format::kJson ? rep.to_json() : f == Format::kText ? rep.to_text() : rep.to_csv(), out);
  return kExitOk;
}

struct BenchArgs {
  std::string grid = "50,100,200,500,1000", ks = "30", out, format = "text";
  std::size_t d = 32, repetitions = 5;
  std::uint64_t seed = 0;
};

int do_bench(const BenchArgs& a, std::ostream& out) {
  const Format f = parse_format(a.format);
  evalgen::BenchOptions opt;
  opt.sizes = parse_size_list(a.grid, "--grid");
  opt.ks = parse_size_list(a.ks, "--k");
  opt.d = a.d;
  opt.repetitions = a.repetitions;
  opt.seed = a.seed;
  const evalgen::BenchReport rep = evalgen::bench_graphs(opt);
  emit(a.out, f == Format::kJson ? rep.to_json() : f == Format::kText ? rep.to_text() : rep.to_csv(), out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fragment-conditioned protein sequence and structure co-design", "naepro"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "naepro 0.1.0");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Fit a model and write checkpoints and logs");
  train_cmd->add_option("--data", train.data, "Protein records (JSON lines)")->required();
  train_cmd->add_option("--config", train.config, "Run configuration (key = value)");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--fragments", train.fragments, "Fragment mask JSON overriding record fragments");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Decode sequences and coordinates from fragments");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "Model checkpoint")->required();
  gen_cmd->add_option("--input", gen.input, "Protein records (JSON lines)")->required();
  gen_cmd->add_option("--out", gen.out, "Output JSON lines ('-' for stdout)")->required();
  gen_cmd->add_option("--fragments", gen.fragments, "Fragment mask JSON overriding record fragments");

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine-fragments", "Mark conserved alignment columns as fragments");
  mine_cmd->add_option("--msa", mine.msa, "Aligned FASTA")->required();
  mine_cmd->add_option("--tau", mine.tau, "Identity threshold in percent")->required();
  mine_cmd->add_option("--out", mine.out, "Fragment mask JSON ('-' for stdout)")->required();

  CertifyArgs cert;
  auto* cert_cmd = app.add_subcommand("check-equivariance", "Certify equivariance on random rigid motions");
  cert_cmd->add_option("--checkpoint", cert.checkpoint, "Model checkpoint")->required();
  cert_cmd->add_option("--trials", cert.options.trials, "Random trials")->capture_default_str();
  cert_cmd->add_option("--tolerance", cert.options.tolerance, "Relative coordinate tolerance")->capture_default_str();
  cert_cmd->add_option("--prob-tolerance", cert.options.probability_tolerance, "Probability tolerance")
      ->capture_default_str();
  cert_cmd->add_option("--seed", cert.options.seed, "Trial seed")->capture_default_str();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Recovery, identity, RMSD and perplexity on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Protein records (JSON lines)")->required();
  eval_cmd->add_option("--out", ev.out, "Report path ('-' for stdout)")->required();
  eval_cmd->add_option("--format", ev.format, "json, text or csv")->capture_default_str();
  eval_cmd->add_option("--fragments", ev.fragments, "Fragment mask JSON overriding record fragments");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time kNN against complete-graph message passing");
  bench_cmd->add_option("--grid", bench.grid, "Comma-separated protein lengths")->capture_default_str();
  bench_cmd->add_option("--k", bench.ks, "Comma-separated neighbour counts")->capture_default_str();
  bench_cmd->add_option("--d", bench.d, "Hidden width")->capture_default_str();
  bench_cmd->add_option("--repetitions", bench.repetitions, "Timed runs per cell")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Seed")->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "Report path ('-' for stdout)")->required();
  bench_cmd->add_option("--format", bench.format, "json, text or csv")->capture_default_str();

  std::vector<const char*> argv{"naepro"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    const CLI::App* where = &app;
    for (const CLI::App* sub : app.get_subcommands()) where = sub;
    err << "naepro: error[usage]: " << one_line(e.what()) << '\n' << where->help();
    return kExitUsage;
  }

  try {
    if (*train_cmd) return do_train(train, out);
    if (*gen_cmd) return do_generate(gen, out);
    if (*mine_cmd) return do_mine(mine, out);
    if (*cert_cmd) return do_certify(cert, out, err);
    if (*eval_cmd) return do_eval(ev, out);
    if (*bench_cmd) return do_bench(bench, out);
  } catch (const Error& e) {
    err << "naepro: error[" << to_string(e.kind()) << "]: " << one_line(e.what()) << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "naepro: error[internal]: " << one_line(e.what()) << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace naepro::cli
