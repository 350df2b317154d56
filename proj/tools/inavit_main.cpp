// Command-line front end: dataset generation, training, evaluation,
// gradient checking, ablations, and attention export, all driven by one
// JSON config file plus --set overrides.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "inavit/harness.hpp"

namespace {

using namespace inavit;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path,
                  "JSON configuration file")
      ->required();
  cmd->add_option("--set", args.sets,
                  "override a config entry, e.g. --set model.depth=4 "
                  "(repeatable; values parse as JSON, else as strings)");
  cmd->add_option("--seed", args.seed, "run seed")->required();
}

nlohmann::json load_config(const CommonArgs& args) {
  std::ifstream in(args.config_path);
  if (!in.good()) fail("cannot open config file: " + args.config_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail("bad config file " + args.config_path + ": " + e.what());
  }
  for (const std::string& s : args.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      fail("--set wants key=value, got '" + s + "'");
    std::string key = s.substr(0, eq), value = s.substr(eq + 1);
    for (auto& ch : key)
      if (ch == '.') ch = '/';
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      parsed = value;  // bare strings are fine
    }
    j[nlohmann::json::json_pointer("/" + key)] = parsed;
  }
  j["seed"] = args.seed;
  return j;
}

RunConfig run_from(const nlohmann::json& j) {
  RunConfig run = j.get<RunConfig>();
  run.validate();
  return run;
}

int cmd_gen_data(const CommonArgs& args) {
  nlohmann::json j = load_config(args);
  if (!j.contains("synth")) fail("config needs a \"synth\" section");
  SynthConfig sc = j.at("synth").get<SynthConfig>();
  int count = j.value("gen_count", 1024);
  std::string out = j.value("gen_out", std::string());
  if (out.empty()) fail("config needs \"gen_out\" (dataset directory)");
  auto episodes = generate_dataset(sc, count, args.seed);
  write_dataset(out, sc, episodes);
  int train_n = 0;
  for (const auto& ep : episodes) train_n += is_train_seed(ep.seed) ? 1 : 0;
  std::printf("wrote %d episodes (%d train / %d eval) to %s\n", count,
              train_n, count - train_n, out.c_str());
  std::printf("dataset hash %016llx\n",
              static_cast<unsigned long long>(dataset_hash(out)));
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig run = run_from(load_config(args));
  TrainResult res = train(run);
  std::printf("trained %d steps, final loss %.6f\n", run.steps,
              res.final_loss);
  std::printf("checkpoint: %s\nlog: %s\n", res.checkpoint_path.c_str(),
              res.log_path.c_str());
  LoadedDataset ds = load_dataset(run.dataset);
  PreparedData data = prepare_data(ds, run.model, run.dataset);
  if (!data.eval.empty()) {
    MetricsReport m = evaluate_params(run.model, res.params, data.eval);
    std::cout << nlohmann::json(m).dump(2) << "\n";
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& split) {
  RunConfig run = run_from(load_config(args));
  Checkpoint ck = load_checkpoint(checkpoint);
  LoadedDataset ds = load_dataset(run.dataset);
  PreparedData data = prepare_data(ds, run.model, run.dataset);
  const auto& episodes = split == "train" ? data.train : data.eval;
  MetricsReport m = evaluate_checkpoint(ck, run.model, episodes);
  std::cout << nlohmann::json(m).dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& scope, uint64_t seed) {
  auto rows = gradcheck_suite(scope, seed);
  bool ok = true;
  std::printf("%-12s %-14s %s\n", "block", "max_rel_err", "seconds");
  for (const auto& r : rows) {
    bool pass = r.max_rel_err <= 1e-5;
    ok = ok && pass;
    std::printf("%-12s %-14.3e %-8.2f %s\n", r.block.c_str(), r.max_rel_err,
                r.seconds, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const CommonArgs& args) {
  nlohmann::json j = load_config(args);
  RunConfig base = run_from(j);
  std::vector<uint64_t> seeds =
      j.value("seeds", std::vector<uint64_t>{args.seed});
  AblationResult res = ablate(default_ablation(base.model), base, seeds);
  std::fputs(res.csv.c_str(), stdout);
  std::fprintf(stderr, "wrote %s\n",
               (std::filesystem::path(base.out_dir) / "ablation.csv").c_str());
  return 0;
}

int cmd_export_attn(const CommonArgs& args, const std::string& checkpoint,
                    int index, const std::string& out_path) {
  RunConfig run = run_from(load_config(args));
  Checkpoint ck = load_checkpoint(checkpoint);
  uint64_t stored = ck.config.contains("model")
                        ? json_hash(ck.config.at("model"))
                        : 0;
  if (stored != model_config_hash(run.model))
    fail("config hash mismatch between checkpoint and config file");
  LoadedDataset ds = load_dataset(run.dataset);
  std::vector<const LoadedEpisode*> eval;
  for (const auto& ep : ds.episodes)
    if (!ep.train) eval.push_back(&ep);
  if (index < 0 || index >= static_cast<int>(eval.size()))
    fail("episode index out of range: have " + std::to_string(eval.size()) +
         " eval episodes");
  const LoadedEpisode& ep = *eval[static_cast<size_t>(index)];
  auto input = prepare_episode(ep.clip, ep.boxes, run.model, ep.label);
  nlohmann::json j = export_attention(run.model, ck.params, input);
  j["episode_seed"] = ep.seed;
  j["label"] = ep.label;
  std::ofstream out(out_path);
  if (!out.good()) fail("cannot write " + out_path);
  out << j.dump(2) << "\n";
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"egocentric action anticipation on synthetic reach scenes"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, attn_args;
  std::string checkpoint, split = "eval", scope = "full", attn_out;
  int attn_index = 0;

  add_common(app.add_subcommand("gen-data", "generate a synthetic dataset"),
             gen_args);
  add_common(app.add_subcommand("train", "train a model"), train_args);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--split", split, "train or eval split")
      ->check(CLI::IsMember({"train", "eval"}));
  auto* gc = app.add_subcommand("gradcheck",
                                "compare reverse-mode gradients against "
                                "finite differences");
  gc->add_option("--scope", scope, "full or one block name");
  uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "run seed")->required();
  add_common(app.add_subcommand("ablate", "train and score model variants"),
             ablate_args);
  auto* ea = app.add_subcommand("export-attn",
                                "dump attention maps for one episode");
  add_common(ea, attn_args);
  ea->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ea->add_option("--index", attn_index, "eval episode index");
  ea->add_option("--out", attn_out, "output JSON path")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_args);
    if (app.got_subcommand("train")) return cmd_train(train_args);
    if (app.got_subcommand("eval")) return cmd_eval(eval_args, checkpoint, split);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(scope, gc_seed);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args);
    if (app.got_subcommand("export-attn"))
      return cmd_export_attn(attn_args, checkpoint, attn_index, attn_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
