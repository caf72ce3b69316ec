#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lesdet/dataset.hpp"
#include "lesdet/models.hpp"
#include "lesdet/serialize.hpp"
#include "lesdet/tensor.hpp"

namespace lesdet {

enum class AttackFamily { FGSM, FFGSM, BIM, PGD, TPGD, MIFGSM, PGDL2, SQR, GN };

/// Attack parameters. eps, alpha and sigma are expressed in units of 1/255,
/// so PGD(8,4,10) means eps = 8/255, alpha = 4/255, 10 steps.
struct AttackConfig {
  AttackFamily family = AttackFamily::PGD;
  double eps = 8.0;
  double alpha = 4.0;
  int steps = 10;
  double sigma = 8.0;
  int queries = 1000;
  std::optional<int> target;  // TPGD only; defaults to (y + 1) mod n_class
  std::uint64_t seed = 0;
  // Uniform start inside the eps-ball for PGD, TPGD, PGDL2 and FFGSM.
  bool random_start = true;

  void validate() const;
  // Canonical notation, e.g. "PGD(8,4,10)", "FGSM(8)", "GN(8)".
  std::string name() const;
  bool l2() const noexcept { return family == AttackFamily::PGDL2; }
  bool gradient_based() const noexcept;
};

const char* family_name(AttackFamily f);
AttackFamily parse_family(const std::string& name);

/// Parses the bracket notation produced by AttackConfig::name(). Arguments
/// per family: FGSM(eps) FFGSM(eps,alpha) BIM/PGD/TPGD/MIFGSM/PGDL2(eps,alpha,steps)
/// SQR(eps,queries) GN(sigma).
AttackConfig parse_attack(const std::string& spec, std::uint64_t seed = 0);

// Each function derives its randomness from make_rng(cfg.seed, stream), so a
// sample's result does not depend on which other samples are processed.
Tensor fgsm(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg);
Tensor ffgsm(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
             std::uint64_t stream = 0);
Tensor bim(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg);
Tensor pgd(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
           std::uint64_t stream = 0);
Tensor tpgd(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
            std::uint64_t stream = 0);
Tensor mifgsm(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg);
Tensor pgd_l2(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
              std::uint64_t stream = 0);

struct SquareProposal {
  int query = 0;
  std::size_t row = 0, col = 0, side = 0;
  std::vector<float> signs;  // one per channel, +1 or -1
  double loss = 0.0;         // margin loss of the proposal
  bool accepted = false;
};

struct SquareOptions {
  bool init = true;           // stripe initialisation of the published scheme
  std::size_t fixed_side = 0; // 0 = query-dependent schedule
  std::function<void(const SquareProposal&)> trace;
};

/// Score-only random search. Margin loss max_{j != y} z_j - z_y; a proposal is
/// kept iff it strictly increases the loss. Stops after cfg.queries model
/// evaluations or once the sample is misclassified.
Tensor square_attack(const ScoreModel& m, const Tensor& x, int y, const AttackConfig& cfg,
                     std::uint64_t stream = 0, const SquareOptions& opts = {});
double square_margin(std::span<const float> logits, int y);
// Fraction of the image area covered by the patch at a given query.
double square_patch_fraction(int query, int total_queries, double p_init = 0.8);

Tensor gaussian_noise(const Tensor& x, const AttackConfig& cfg, std::uint64_t stream = 0);

/// Dispatches on cfg.family. Score-based families only see a ScoreOnly view.
Tensor run_attack(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
                  std::uint64_t stream = 0);

struct AdversarialSet {
  std::vector<Tensor> natural;
  std::vector<Tensor> adversarial;
  std::vector<int> labels;
  std::string model_id;
  AttackConfig config;

  std::size_t size() const noexcept { return adversarial.size(); }
};

AdversarialSet generate_attack_set(const DifferentiableModel& m, const Dataset& d,
                                   const AttackConfig& cfg);

// Largest per-sample violation of the norm and box invariants (0 if none).
double max_constraint_violation(const AdversarialSet& s);

// Dataset view of the adversarial images with the original labels.
Dataset adversarial_dataset(const AdversarialSet& s);

Json attack_to_json(const AttackConfig& cfg);
AttackConfig attack_from_json(const Json& j);

/// Checkpoint of kind "adversarial-set": stacked [n,c,h,w] tensors "natural"
/// and "adversarial"; labels, model id and attack config in the header.
void save_adversarial_set(const AdversarialSet& s, const std::filesystem::path& path,
                          const Json& extra_meta = Json::object());
AdversarialSet load_adversarial_set(const std::filesystem::path& path, Json* meta_out = nullptr);

}  // namespace lesdet
