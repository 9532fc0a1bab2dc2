#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sillnet/augment_baseline.hpp"
#include "sillnet/checkpoint.hpp"
#include "sillnet/config_io.hpp"
#include "sillnet/data.hpp"
#include "sillnet/eval.hpp"
#include "sillnet/image_ops.hpp"
#include "sillnet/manifest.hpp"
#include "sillnet/repository.hpp"
#include "sillnet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = ".";
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "JSON config file (flat key/value object)");
  sub->add_option("--set", o.overrides, "config override as key=value (repeatable)");
  sub->add_option("--seed", o.seed, "random seed (overrides config and SILLNET_SEED)")
      ->each([&o](const std::string&) { o.seed_given = true; });
  sub->add_option("--out", o.out, "output directory (default: current directory)");
}

json resolve_config_json(const CommonOpts& o) {
  json j = sillnet::app_config_to_json(sillnet::AppConfig{});
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::invalid_argument("cannot open config file " + o.config_path);
    json file_j;
    try {
      file_j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("config file " + o.config_path + ": " + e.what());
    }
    if (!file_j.is_object())
      throw std::invalid_argument("config file must hold a JSON object");
    j.update(file_j);
  }
  for (const auto& s : o.overrides) sillnet::apply_override(j, s);
  if (const char* env = std::getenv("SILLNET_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw std::invalid_argument("SILLNET_SEED must be a non-negative integer");
    j["seed"] = static_cast<std::uint64_t>(v);
  }
  if (o.seed_given) j["seed"] = o.seed;
  (void)sillnet::app_config_from_json(j);  // rejects unknown keys / bad types
  return j;
}

void emit(const json& line) { std::cout << line.dump() << "\n" << std::flush; }

std::string out_path(const CommonOpts& o, const std::string& name) {
  return (fs::path(o.out) / name).string();
}

std::vector<std::string> sorted_map_keys(const std::string& map_path) {
  std::ifstream in(map_path);
  if (!in) throw std::runtime_error("cannot open template map " + map_path);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("unparseable template map " + map_path + ": " + e.what());
  }
  std::vector<std::string> keys;
  for (auto it = m.begin(); it != m.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  return keys;
}

// One run directory per invocation: resolve config, execute, write the
// manifest beside the outputs. Config problems are usage errors (1); anything
// thrown by the command body is a runtime failure (2).
int run(const std::string& command, const CommonOpts& opts,
        const std::function<void(const sillnet::AppConfig&, const json&, sillnet::RunManifest&)>&
            body) {
  json cfg_json;
  sillnet::AppConfig cfg;
  try {
    cfg_json = resolve_config_json(opts);
    cfg = sillnet::app_config_from_json(cfg_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  sillnet::RunManifest man;
  man.command = command;
  man.config = cfg_json;
  man.seed = cfg.train.seed;
  man.started_at = sillnet::iso8601_utc_now();
  try {
    fs::create_directories(opts.out);
    body(cfg, cfg_json, man);
    man.finished_at = sillnet::iso8601_utc_now();
    const std::string mpath = out_path(opts, command + ".manifest.json");
    sillnet::write_manifest(man, mpath);
    json done;
    done["event"] = "done";
    done["command"] = command;
    done["manifest"] = mpath;
    done["outputs"] = man.outputs;
    emit(done);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

void emit_epoch_reports(const std::vector<sillnet::LossReport>& reports) {
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    json line;
    line["event"] = "epoch";
    line["epoch"] = i + 1;
    line["exchange"] = r.exchange;
    line["match"] = r.match;
    line["template_recon"] = r.template_recon;
    line["illumination"] = r.illumination;
    line["total"] = r.total;
    emit(line);
  }
}

sillnet::Dataset load_train_split(const std::string& data_root, int image_size,
                                  std::shared_ptr<sillnet::AccessLog> log = nullptr) {
  const std::string root = (fs::path(data_root) / "train").string();
  return sillnet::load_image_folder(root, (fs::path(root) / "template_map.json").string(),
                                    image_size, std::move(log));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature separation, illumination banking and one-shot classification"};
  app.require_subcommand(1);
  CommonOpts opts;

  std::string data_root, model_path, repo_path, image_path, template_path;
  std::string protocol_str = "one-shot";
  int k = 0, n_exp = 0;
  std::size_t index = 0;
  double r_override = -1.0;

  CLI::App* synth = app.add_subcommand("synth-data", "generate the synthetic benchmark dataset");
  add_common(synth, opts);

  CLI::App* sep = app.add_subcommand("train-separate", "phase 1: learn the feature split");
  add_common(sep, opts);
  sep->add_option("--data", data_root, "dataset root (train/ and optional test/)")->required();

  CLI::App* brepo = app.add_subcommand("build-repo", "bank illumination features from a model");
  add_common(brepo, opts);
  brepo->add_option("--model", model_path, "separation checkpoint")->required();
  brepo->add_option("--data", data_root, "dataset root")->required();

  CLI::App* rsel = app.add_subcommand("repo-select", "cluster a repository down to k centers");
  add_common(rsel, opts);
  rsel->add_option("--repo", repo_path, "repository file")->required();
  rsel->add_option("--k", k, "number of cluster centers")->required();

  CLI::App* rexp = app.add_subcommand("repo-expand", "interpolate a repository out to n features");
  add_common(rexp, opts);
  rexp->add_option("--repo", repo_path, "repository file")->required();
  rexp->add_option("--n-exp", n_exp, "expanded feature count")->required();

  CLI::App* aug = app.add_subcommand("train-augment", "phase 2: train the classifier on the bank");
  add_common(aug, opts);
  aug->add_option("--model", model_path, "separation checkpoint")->required();
  aug->add_option("--repo", repo_path, "repository file")->required();
  aug->add_option("--data", data_root, "dataset root (support templates from test/)")->required();

  CLI::App* inf = app.add_subcommand("infer", "classify one image");
  add_common(inf, opts);
  inf->add_option("--model", model_path, "augmented checkpoint")->required();
  inf->add_option("--image", image_path, "image to classify")->required();
  inf->add_option("--r", r_override, "mix proportion (default: from config)");

  CLI::App* ev = app.add_subcommand("evaluate", "score a model over a test split");
  add_common(ev, opts);
  ev->add_option("--model", model_path, "augmented checkpoint")->required();
  ev->add_option("--data", data_root, "dataset root")->required();
  ev->add_option("--protocol", protocol_str, "traditional | one-shot | cross-domain");

  CLI::App* abl = app.add_subcommand("ablate", "single-component ablation table (synthetic)");
  add_common(abl, opts);

  CLI::App* cmp = app.add_subcommand("compare-aug",
                                     "standard-augmentation comparison table (synthetic)");
  add_common(cmp, opts);

  CLI::App* rec = app.add_subcommand("train-recon", "train the photograph reconstructor");
  add_common(rec, opts);
  rec->add_option("--model", model_path, "separation checkpoint")->required();
  rec->add_option("--data", data_root, "dataset root")->required();

  CLI::App* tra = app.add_subcommand("transplant", "decode a template under a banked illumination");
  add_common(tra, opts);
  tra->add_option("--model", model_path, "checkpoint with a trained reconstructor")->required();
  tra->add_option("--repo", repo_path, "repository file")->required();
  tra->add_option("--template", template_path, "template image")->required();
  tra->add_option("--index", index, "repository feature index")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help exits clean; everything else is a usage error
  }

  if (synth->parsed())
    return run("synth-data", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                       sillnet::RunManifest& man) {
      const auto data = sillnet::generate_synthetic_dataset(cfg.synth);
      const std::string train_dir = out_path(opts, "train");
      const std::string test_dir = out_path(opts, "test");
      sillnet::export_dataset(data.train, train_dir);
      sillnet::export_dataset(data.test, test_dir);
      man.outputs = {train_dir, test_dir};
      json line;
      line["event"] = "dataset";
      line["train_samples"] = data.train.size();
      line["test_samples"] = data.test.size();
      line["train_classes"] = data.train.class_ids().size();
      line["test_classes"] = data.test.class_ids().size();
      emit(line);
    });

  if (sep->parsed())
    return run("train-separate", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                           sillnet::RunManifest& man) {
      const std::string map = (fs::path(data_root) / "train" / "template_map.json").string();
      man.inputs[map] = sillnet::file_blob_sha1(map);
      const sillnet::Dataset train = load_train_split(data_root, cfg.synth.image_size);
      sillnet::TrainConfig tc = cfg.train;
      const std::string test_map = (fs::path(data_root) / "test" / "template_map.json").string();
      if (tc.n_total_classes == 0 && fs::exists(test_map)) {
        // Disjoint-split layout: the classifier must span both splits.
        tc.n_total_classes = static_cast<int>(sorted_map_keys(map).size() +
                                              sorted_map_keys(test_map).size());
        json line;
        line["event"] = "inferred";
        line["n_total_classes"] = tc.n_total_classes;
        emit(line);
      }
      auto res = sillnet::train_separation(train, tc);
      emit_epoch_reports(res.epoch_reports);
      if (res.diverged) {
        json line;
        line["event"] = "diverged";
        line["completed_epochs"] = res.completed_epochs;
        emit(line);
      }
      const std::string ckpt = out_path(opts, "model.ckpt");
      const std::string repo_file = out_path(opts, "repo.silr");
      sillnet::save_checkpoint(res.model, ckpt);
      sillnet::save_repository(res.repo, repo_file);
      man.outputs = {ckpt, repo_file};
    });

  if (brepo->parsed())
    return run("build-repo", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                       sillnet::RunManifest& man) {
      man.inputs[model_path] = sillnet::file_blob_sha1(model_path);
      sillnet::SillModel model = sillnet::load_checkpoint(model_path);
      const sillnet::Dataset train = load_train_split(data_root, model.cfg.image_size);
      const auto repo = sillnet::build_repository_from_model(model, train, cfg.train.seed);
      const std::string repo_file = out_path(opts, "repo.silr");
      sillnet::save_repository(repo, repo_file);
      man.outputs = {repo_file};
      json line;
      line["event"] = "repo";
      line["count"] = repo.size();
      emit(line);
    });

  if (rsel->parsed())
    return run("repo-select", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                        sillnet::RunManifest& man) {
      man.inputs[repo_path] = sillnet::file_blob_sha1(repo_path);
      const auto repo = sillnet::load_repository(repo_path);
      const auto selected = sillnet::select_kmeans(repo, k, cfg.train.seed, nullptr);
      const std::string out_file = out_path(opts, "repo-selected.silr");
      sillnet::save_repository(selected, out_file);
      man.outputs = {out_file};
      json line;
      line["event"] = "repo";
      line["count"] = selected.size();
      emit(line);
    });

  if (rexp->parsed())
    return run("repo-expand", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                        sillnet::RunManifest& man) {
      man.inputs[repo_path] = sillnet::file_blob_sha1(repo_path);
      const auto repo = sillnet::load_repository(repo_path);
      const auto expanded = sillnet::expand_interpolate(repo, n_exp, cfg.train.seed);
      const std::string out_file = out_path(opts, "repo-expanded.silr");
      sillnet::save_repository(expanded, out_file);
      man.outputs = {out_file};
      json line;
      line["event"] = "repo";
      line["count"] = expanded.size();
      emit(line);
    });

  if (aug->parsed())
    return run("train-augment", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                          sillnet::RunManifest& man) {
      man.inputs[model_path] = sillnet::file_blob_sha1(model_path);
      man.inputs[repo_path] = sillnet::file_blob_sha1(repo_path);
      sillnet::SillModel model = sillnet::load_checkpoint(model_path);
      const auto repo = sillnet::load_repository(repo_path);

      // Support classes are the test split's templates; their ids continue the
      // train split's label space. Only template files are read here.
      const std::string train_map =
          (fs::path(data_root) / "train" / "template_map.json").string();
      const std::string test_map = (fs::path(data_root) / "test" / "template_map.json").string();
      man.inputs[test_map] = sillnet::file_blob_sha1(test_map);
      const int n_train = static_cast<int>(sorted_map_keys(train_map).size());
      std::ifstream in(test_map);
      const json m = json::parse(in);
      const fs::path map_dir = fs::path(test_map).parent_path();
      std::map<int, std::vector<sillnet::Tensor>> support;
      std::vector<int> ids;
      const auto keys = sorted_map_keys(test_map);
      for (std::size_t i = 0; i < keys.size(); ++i) {
        const int id = n_train + static_cast<int>(i);
        fs::path tpl = m.at(keys[i]).get<std::string>();
        if (tpl.is_relative()) tpl = map_dir / tpl;
        support[id] = {sillnet::read_image(tpl.string(), model.cfg.image_size)};
        ids.push_back(id);
      }

      auto res = sillnet::train_augmentation(model, repo, support, ids, cfg.train);
      for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
        json line;
        line["event"] = "epoch";
        line["epoch"] = e + 1;
        line["loss"] = res.epoch_losses[e];
        emit(line);
      }
      json line;
      line["event"] = "augmentation";
      line["features_per_epoch"] = res.features_per_epoch;
      line["variants_per_template"] = res.variants_per_template;
      emit(line);
      const std::string ckpt = out_path(opts, "model-augmented.ckpt");
      sillnet::save_checkpoint(res.model, ckpt);
      man.outputs = {ckpt};
    });

  if (inf->parsed())
    return run("infer", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                  sillnet::RunManifest& man) {
      man.inputs[model_path] = sillnet::file_blob_sha1(model_path);
      man.inputs[image_path] = sillnet::file_blob_sha1(image_path);
      sillnet::SillModel model = sillnet::load_checkpoint(model_path);
      const float r = r_override >= 0.0
                          ? static_cast<float>(r_override)
                          : (cfg.train.use_illum_augmentation ? cfg.train.r_phase2 : 1.0f);
      const int pred =
          sillnet::predict(model, sillnet::read_image(image_path, model.cfg.image_size), r);
      json line;
      line["event"] = "prediction";
      line["class"] = pred;
      line["r"] = r;
      emit(line);
    });

  if (ev->parsed())
    return run("evaluate", opts, [&](const sillnet::AppConfig& cfg, const json& cfg_json,
                                     sillnet::RunManifest& man) {
      man.inputs[model_path] = sillnet::file_blob_sha1(model_path);
      sillnet::SillModel model = sillnet::load_checkpoint(model_path);
      const sillnet::Protocol proto = sillnet::protocol_from_string(protocol_str);
      const std::string train_map =
          (fs::path(data_root) / "train" / "template_map.json").string();
      const int n_train = static_cast<int>(sorted_map_keys(train_map).size());
      const int id_base = proto == sillnet::Protocol::kTraditional ? 0 : n_train;
      const std::string test_root = (fs::path(data_root) / "test").string();
      const sillnet::Dataset test = sillnet::load_image_folder(
          test_root, (fs::path(test_root) / "template_map.json").string(), model.cfg.image_size,
          nullptr, id_base);
      std::vector<int> train_ids(static_cast<std::size_t>(n_train));
      for (int i = 0; i < n_train; ++i) train_ids[static_cast<std::size_t>(i)] = i;
      const float r = cfg.train.use_illum_augmentation ? cfg.train.r_phase2 : 1.0f;
      const auto rep = sillnet::evaluate(model, test, proto, r, train_ids, cfg.train.seed,
                                         sillnet::config_digest(cfg_json));
      const std::string report_file = out_path(opts, "eval-report.json");
      std::ofstream out(report_file);
      out << rep.to_json().dump(2) << "\n";
      if (!out) throw std::runtime_error("failed to write " + report_file);
      man.outputs = {report_file};
      json line;
      line["event"] = "evaluation";
      line["accuracy"] = rep.accuracy;
      line["n_test"] = rep.n_test;
      emit(line);
    });

  const auto table_command = [&](const std::string& name, const std::string& stem,
                                 auto&& runner) {
    return run(name, opts, [&](const sillnet::AppConfig& cfg, const json&,
                               sillnet::RunManifest& man) {
      if (!cfg.synth.one_shot || cfg.synth.n_test_classes <= 0)
        throw std::invalid_argument(
            name + " needs a disjoint-split synthetic config "
                   "(synth_one_shot=true, synth_n_test_classes>0)");
      const auto data = sillnet::generate_synthetic_dataset(cfg.synth);
      const auto task = sillnet::make_one_shot_task(data);
      sillnet::TrainConfig tc = cfg.train;
      if (tc.n_total_classes == 0) tc.n_total_classes = cfg.synth.n_classes;
      const std::vector<sillnet::EvalReport> rows = runner(tc, task);
      json arr = json::array();
      for (const auto& row : rows) {
        arr.push_back(row.to_json());
        json line;
        line["event"] = "row";
        line["arm"] = row.arm;
        line["accuracy"] = row.accuracy;
        emit(line);
      }
      const std::string jpath = out_path(opts, stem + ".json");
      const std::string tpath = out_path(opts, stem + ".txt");
      std::ofstream jout(jpath);
      jout << arr.dump(2) << "\n";
      std::ofstream tout(tpath);
      tout << sillnet::format_report_table(rows);
      if (!jout || !tout) throw std::runtime_error("failed writing the comparison table");
      man.outputs = {jpath, tpath};
    });
  };

  if (abl->parsed())
    return table_command("ablate", "ablation",
                         [](const sillnet::TrainConfig& tc, const sillnet::OneShotTask& task) {
                           return sillnet::run_ablation(tc, task);
                         });

  if (cmp->parsed())
    return table_command("compare-aug", "comparison",
                         [](const sillnet::TrainConfig& tc, const sillnet::OneShotTask& task) {
                           return sillnet::run_comparison(task, tc);
                         });

  if (rec->parsed())
    return run("train-recon", opts, [&](const sillnet::AppConfig& cfg, const json&,
                                        sillnet::RunManifest& man) {
      man.inputs[model_path] = sillnet::file_blob_sha1(model_path);
      const sillnet::SillModel model = sillnet::load_checkpoint(model_path);
      const sillnet::Dataset train = load_train_split(data_root, model.cfg.image_size);
      auto res = sillnet::train_real_reconstructor(model, train, cfg.train);
      for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
        json line;
        line["event"] = "epoch";
        line["epoch"] = e + 1;
        line["loss"] = res.epoch_losses[e];
        emit(line);
      }
      if (res.diverged) emit({{"event", "diverged"}});
      const std::string ckpt = out_path(opts, "model-recon.ckpt");
      sillnet::save_checkpoint(res.model, ckpt);
      man.outputs = {ckpt};
    });

  if (tra->parsed())
    return run("transplant", opts, [&](const sillnet::AppConfig&, const json&,
                                       sillnet::RunManifest& man) {
      man.inputs[model_path] = sillnet::file_blob_sha1(model_path);
      man.inputs[repo_path] = sillnet::file_blob_sha1(repo_path);
      man.inputs[template_path] = sillnet::file_blob_sha1(template_path);
      sillnet::SillModel model = sillnet::load_checkpoint(model_path);
      const auto repo = sillnet::load_repository(repo_path);
      const sillnet::Tensor tpl = sillnet::read_image(template_path, model.cfg.image_size);
      const sillnet::Tensor img = sillnet::transplant(model, tpl, repo, index);
      char name[48];
      std::snprintf(name, sizeof(name), "transplant_%05zu.png", index);
      const std::string png = out_path(opts, name);
      sillnet::write_png(img, png);
      man.outputs = {png};
      json line;
      line["event"] = "transplant";
      line["index"] = index;
      line["path"] = png;
      emit(line);
    });

  std::cerr << "error: no subcommand selected\n";
  return 1;
}
