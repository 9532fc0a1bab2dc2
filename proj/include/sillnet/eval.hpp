#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sillnet/data.hpp"
#include "sillnet/model.hpp"
#include "sillnet/repository.hpp"
#include "sillnet/training.hpp"

namespace sillnet {

enum class Protocol { kTraditional, kOneShot, kCrossDomain };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct ClassStat {
  int class_id = 0;
  int n = 0;
  int correct = 0;
};

struct EvalReport {
  std::string arm;  // row name inside comparison tables; empty for standalone runs
  double accuracy = 0.0;
  std::vector<ClassStat> per_class;
  std::size_t n_test = 0;
  std::string protocol;
  std::uint64_t seed = 0;
  std::string config_digest;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Aligned-column text rendering of a set of evaluation rows.
std::string format_report_table(const std::vector<EvalReport>& rows);

// Classifies one test image: encodes it, blends its own semantic and
// illumination halves with the same proportion the classifier was trained
// with, and returns the argmax logit (ties to the lowest class id).
int predict(SillModel& model, const Tensor& image, float r);

// Nearest-neighbor variant: the class of the support semantic feature closest
// (squared L2) to the test image's rectified semantic half.
int predict_nn(SillModel& model, const Tensor& image,
               const std::map<int, std::vector<Tensor>>& support_sems);

// Runs predict over the whole split. For the one-shot protocol the training
// class list must not intersect the split's classes.
EvalReport evaluate(SillModel& model, const Dataset& test_split, Protocol protocol, float r,
                    const std::vector<int>& train_class_ids = {}, std::uint64_t seed = 0,
                    std::string config_digest = "");

// A one-shot episode: training photographs of the base classes, the held-out
// test split, and one or more canonical templates per test class (the only
// test-class imagery the training phases may touch).
struct OneShotTask {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  std::map<int, std::vector<Tensor>> support;
  std::vector<int> support_ids;
  std::vector<int> train_class_ids;
};

OneShotTask make_one_shot_task(const SyntheticDataset& data);

// Applies the configured compression/expansion recipe to a raw bank:
// repo_k > 0 clusters down to k centers, repo_n_exp > 0 then interpolates the
// result out to n_exp features.
IlluminationRepository apply_repo_recipe(const IlluminationRepository& raw,
                                         const TrainConfig& cfg);

// Phase 2 + evaluation on top of an already-trained separation phase. The
// inference blend proportion follows the phase-2 input pattern: r_phase2 when
// illumination augmentation is on, 1.0 (bare semantics) when it is off.
EvalReport run_one_shot(const SeparationResult& phase1, const OneShotTask& task,
                        const TrainConfig& cfg, const VariantFn* variant = nullptr,
                        const std::string& arm = "");

// Trains and evaluates the full method plus the five single-component
// ablations (exchange, match, recon, illu, template processing), sharing
// seeds and splits. Returns exactly six rows, full method first.
std::vector<EvalReport> run_ablation(const TrainConfig& base_config, const OneShotTask& task);

// Decodes (template semantics, banked illumination) into a synthetic
// photograph of the template under that illumination.
Tensor transplant(SillModel& model, const Tensor& tpl, const IlluminationRepository& repo,
                  std::size_t index);

}  // namespace sillnet
