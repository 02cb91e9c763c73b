#pragma once

#include <functional>
#include <vector>

#include "splice/augment.hpp"
#include "splice/generators.hpp"
#include "splice/perceptual.hpp"
#include "splice/vit.hpp"

namespace splice::train {

struct TrainConfig {
  losses::LossWeights weights;            // {0.1, 0.1}; feed-forward: {2, 0.1}
  Scalar lr = 2e-3f;
  Scalar adam_beta1 = 0;
  Scalar adam_beta2 = 0.99f;
  Index iterations = 2000;
  Index clean_pair_interval = 75;         // per-pair regime only
  Index vit_resize = 224;                 // height after resize_for_vit
  Scalar identity_pair_p = 0.25f;         // feed-forward regime only
  Index checkpoint_interval = 500;        // feed-forward regime only
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossRecord {
  Index iteration = 0;
  Scalar total = 0, app = 0, structure = 0, identity = 0;
};
using LossHistory = std::vector<LossRecord>;

void write_history_csv(const LossHistory& h, const std::string& path);

/// Optimize a per-pair generator on one (structure, appearance) image pair.
/// Every clean_pair_interval iterations the un-augmented pair contributes an
/// extra objective (averaged with the augmented one). Throws NumericError
/// naming the term and iteration if any loss goes non-finite. When
/// `optimizer` is given its state is stepped in place (and can then be
/// checkpointed); otherwise a fresh Adam is created from the config.
LossHistory train_splice(gen::SpliceGenerator& g, const vit::VitModel& vit,
                         const Image& structure, const Image& appearance,
                         const TrainConfig& cfg, const AugmentPolicy& policy,
                         const std::function<void(const LossRecord&)>&
                             on_iteration = {},
                         nn::Adam* optimizer = nullptr);

struct PairSample {
  Image structure, appearance;
};

/// Dataset-scale feed-forward training over pre-paired samples. With
/// probability identity_pair_p a step becomes an identity pair (I, I) whose
/// identity term is the perceptual distance D(I, out); other steps use the
/// token/self-similarity objective with identity = 0. `on_checkpoint` fires
/// every checkpoint_interval steps and at the end.
LossHistory train_splicenet(
    gen::SpliceNet& net, const vit::VitModel& vit,
    const std::vector<PairSample>& pairs, const TrainConfig& cfg,
    const AugmentPolicy& policy, const losses::PerceptualDistance& dist,
    const std::function<void(Index step)>& on_checkpoint = {},
    const std::function<void(const LossRecord&)>& on_iteration = {},
    nn::Adam* optimizer = nullptr);

}  // namespace splice::train
