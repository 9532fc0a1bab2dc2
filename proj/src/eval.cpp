#include "sillnet/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sillnet/config_io.hpp"
#include "sillnet/feature_ops.hpp"

namespace sillnet {

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kTraditional: return "traditional";
    case Protocol::kOneShot: return "one-shot";
    case Protocol::kCrossDomain: return "cross-domain";
  }
  throw std::invalid_argument("unknown protocol value");
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "traditional") return Protocol::kTraditional;
  if (s == "one-shot") return Protocol::kOneShot;
  if (s == "cross-domain") return Protocol::kCrossDomain;
  throw std::invalid_argument("unknown protocol '" + s +
                              "' (expected traditional | one-shot | cross-domain)");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["arm"] = arm;
  j["accuracy"] = accuracy;
  j["n_test"] = n_test;
  j["protocol"] = protocol;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& st : per_class) {
    nlohmann::json row;
    row["class_id"] = st.class_id;
    row["n"] = st.n;
    row["correct"] = st.correct;
    row["accuracy"] = st.n > 0 ? static_cast<double>(st.correct) / st.n : 0.0;
    table.push_back(row);
  }
  j["per_class"] = table;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.arm = j.value("arm", std::string());
  r.accuracy = j.at("accuracy").get<double>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.protocol = j.value("protocol", std::string());
  r.seed = j.value("seed", std::uint64_t{0});
  r.config_digest = j.value("config_digest", std::string());
  for (const auto& row : j.value("per_class", nlohmann::json::array())) {
    ClassStat st;
    st.class_id = row.at("class_id").get<int>();
    st.n = row.at("n").get<int>();
    st.correct = row.at("correct").get<int>();
    r.per_class.push_back(st);
  }
  return r;
}

std::string format_report_table(const std::vector<EvalReport>& rows) {
  std::size_t arm_w = 3, proto_w = 8;
  for (const auto& r : rows) {
    arm_w = std::max(arm_w, r.arm.size());
    proto_w = std::max(proto_w, r.protocol.size());
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(arm_w)) << "arm" << "  " << std::right
      << std::setw(8) << "accuracy" << "  " << std::setw(6) << "n_test" << "  " << std::left
      << std::setw(static_cast<int>(proto_w)) << "protocol" << "  " << "seed" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(arm_w)) << (r.arm.empty() ? "-" : r.arm)
        << "  " << std::right << std::setw(8) << std::fixed << std::setprecision(4) << r.accuracy
        << "  " << std::setw(6) << r.n_test << "  " << std::left
        << std::setw(static_cast<int>(proto_w)) << r.protocol << "  " << r.seed << '\n';
  }
  return out.str();
}

int predict(SillModel& model, const Tensor& image, float r) {
  if (!model.classifier_trained)
    throw std::invalid_argument("predict: the classifier head has not been trained");
  const SplitFeature split = model.encode(image);
  const std::vector<float> logits = model.classify(mix(split.sem, split.illu, r));
  int best = 0;
  for (int j = 1; j < static_cast<int>(logits.size()); ++j)
    if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(best)]) best = j;
  return best;
}

int predict_nn(SillModel& model, const Tensor& image,
               const std::map<int, std::vector<Tensor>>& support_sems) {
  if (support_sems.empty()) throw std::invalid_argument("predict_nn: empty support set");
  for (const auto& [c, feats] : support_sems)
    if (feats.empty())
      throw std::invalid_argument("predict_nn: class " + std::to_string(c) +
                                  " has no support features");
  const Tensor rect = model.rectify(model.encode(image).sem).first;
  double best_d = 0.0;
  int best_c = -1;
  for (const auto& [c, feats] : support_sems) {  // ascending class id: ties stay lowest
    for (const Tensor& f : feats) {
      if (!f.same_shape(rect))
        throw std::invalid_argument("predict_nn: support feature shape mismatch for class " +
                                    std::to_string(c));
      double d = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double diff = static_cast<double>(rect[i]) - static_cast<double>(f[i]);
        d += diff * diff;
      }
      if (best_c < 0 || d < best_d) {
        best_d = d;
        best_c = c;
      }
    }
  }
  return best_c;
}

EvalReport evaluate(SillModel& model, const Dataset& test_split, Protocol protocol, float r,
                    const std::vector<int>& train_class_ids, std::uint64_t seed,
                    std::string config_digest) {
  if (test_split.size() == 0) throw std::invalid_argument("evaluate: empty test split");
  if (protocol == Protocol::kOneShot) {
    const std::set<int> train_set(train_class_ids.begin(), train_class_ids.end());
    for (int c : test_split.class_ids())
      if (train_set.count(c))
        throw std::invalid_argument(
            "evaluate: one-shot protocol violated: class " + std::to_string(c) +
            " appears in both the training and test splits");
  }

  std::map<int, ClassStat> stats;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_split.size(); ++i) {
    const int label = test_split.label(i);
    const int pred = predict(model, test_split.image(i), r);
    ClassStat& st = stats[label];
    st.class_id = label;
    ++st.n;
    if (pred == label) {
      ++st.correct;
      ++correct;
    }
  }

  EvalReport rep;
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(test_split.size());
  rep.n_test = test_split.size();
  rep.protocol = to_string(protocol);
  rep.seed = seed;
  rep.config_digest = std::move(config_digest);
  for (const auto& [c, st] : stats) rep.per_class.push_back(st);
  return rep;
}

OneShotTask make_one_shot_task(const SyntheticDataset& data) {
  OneShotTask task;
  task.train = &data.train;
  task.test = &data.test;
  task.train_class_ids = data.train.class_ids();
  for (int c : data.test.class_ids()) {
    task.support_ids.push_back(c);
    task.support[c] = {data.templates.at(c)};
  }
  return task;
}

IlluminationRepository apply_repo_recipe(const IlluminationRepository& raw,
                                         const TrainConfig& cfg) {
  IlluminationRepository repo = raw;
  if (cfg.repo_k > 0) repo = select_kmeans(repo, cfg.repo_k, cfg.seed, nullptr);
  if (cfg.repo_n_exp > 0) repo = expand_interpolate(repo, cfg.repo_n_exp, cfg.seed);
  return repo;
}

namespace {

// Digest of the training knobs alone; the synthetic-data keys belong to the
// dataset, not the arm.
std::string train_config_digest(const TrainConfig& cfg) {
  nlohmann::json j = app_config_to_json(AppConfig{cfg, SyntheticConfig{}});
  for (auto it = j.begin(); it != j.end();) {
    if (it.key().rfind("synth_", 0) == 0)
      it = j.erase(it);
    else
      ++it;
  }
  return config_digest(j);
}

}  // namespace

EvalReport run_one_shot(const SeparationResult& phase1, const OneShotTask& task,
                        const TrainConfig& cfg, const VariantFn* variant,
                        const std::string& arm) {
  if (!task.train || !task.test)
    throw std::invalid_argument("one-shot run: task is missing its splits");
  const IlluminationRepository repo = apply_repo_recipe(phase1.repo, cfg);
  AugmentationResult aug =
      train_augmentation(phase1.model, repo, task.support, task.support_ids, cfg, variant);
  const float r_inf = cfg.use_illum_augmentation ? cfg.r_phase2 : 1.0f;
  EvalReport rep = evaluate(aug.model, *task.test, Protocol::kOneShot, r_inf,
                            task.train_class_ids, cfg.seed, train_config_digest(cfg));
  rep.arm = arm;
  return rep;
}

std::vector<EvalReport> run_ablation(const TrainConfig& base_config, const OneShotTask& task) {
  if (!task.train || !task.test)
    throw std::invalid_argument("ablation run: task is missing its splits");
  TrainConfig base = base_config;
  if (base.n_total_classes == 0) {
    int m = 0;
    for (int c : task.train_class_ids) m = std::max(m, c + 1);
    for (int c : task.support_ids) m = std::max(m, c + 1);
    base.n_total_classes = m;
  }

  struct Row {
    std::string name;
    TrainConfig cfg;
  };
  std::vector<Row> rows;
  rows.push_back({"full", base});
  {
    TrainConfig c = base;
    c.exchange = false;
    rows.push_back({"no-exchange", c});
  }
  {
    TrainConfig c = base;
    c.match = false;
    rows.push_back({"no-match", c});
  }
  {
    TrainConfig c = base;
    c.recon = false;
    rows.push_back({"no-recon", c});
  }
  {
    TrainConfig c = base;
    c.illu = false;
    rows.push_back({"no-illu", c});
  }
  {
    TrainConfig c = base;
    c.template_processing = false;  // phase 1 unchanged: shares the full run's model
    rows.push_back({"no-template-processing", c});
  }

  std::map<std::array<bool, 4>, std::shared_ptr<SeparationResult>> phase1_cache;
  std::vector<EvalReport> out;
  for (const Row& row : rows) {
    const std::array<bool, 4> key{row.cfg.exchange, row.cfg.match, row.cfg.recon, row.cfg.illu};
    auto it = phase1_cache.find(key);
    if (it == phase1_cache.end())
      it = phase1_cache
               .emplace(key, std::make_shared<SeparationResult>(
                                 train_separation(*task.train, row.cfg)))
               .first;
    out.push_back(run_one_shot(*it->second, task, row.cfg, nullptr, row.name));
  }
  return out;
}

Tensor transplant(SillModel& model, const Tensor& tpl, const IlluminationRepository& repo,
                  std::size_t index) {
  if (index >= repo.size())
    throw std::out_of_range("transplant: repository index " + std::to_string(index) +
                            " out of range (repository holds " + std::to_string(repo.size()) +
                            " features)");
  SplitFeature split = model.encode(tpl);
  return model.reconstruct_real({std::move(split.sem), repo.feature(index)});
}

}  // namespace sillnet
