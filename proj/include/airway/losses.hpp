#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "airway/autodiff.hpp"
#include "json.hpp"

namespace airway {

/// Every scalar weight of the hybrid objective. `alpha_cl` mixes Dice against
/// clDice (range [0, 0.5]); alpha/beta/gamma/delta weight L1 / continuity /
/// Dice-mix / adversarial terms (range [0, 1]); phi weights the supervision
/// layers, deepest first, final last.
struct LossWeights {
  double alpha_cl = 0.5;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double delta = 0.1;
  std::vector<double> phi = {0.25, 0.5, 0.75, 1.0};
  int cl_iters = 5;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Soft Dice loss with squared-sum denominator: 1 - (2*sum(p*g)+eps) /
/// (sum(p^2)+sum(g^2)+eps). Both-empty inputs give loss 0.
template <class S>
ad::Value<S> soft_dice_loss(ad::Value<S> pred01, ad::Value<S> gt01);

/// Differentiable skeleton by iterated soft erosion (3^3 min-pool) and soft
/// opening, accumulated over `iters` rounds.
template <class S>
ad::Value<S> soft_skeleton(ad::Value<S> img01, int iters);

template <class S>
ad::Value<S> soft_cl_dice_loss(ad::Value<S> pred01, ad::Value<S> gt01, int iters);

/// (1-alpha_cl)*(1-Dice) + alpha_cl*(1-clDice); alpha_cl in [0, 0.5].
template <class S>
ad::Value<S> l_d(ad::Value<S> pred01, ad::Value<S> gt01, double alpha_cl, int cl_iters);

/// Continuity loss: 1 - sum(pred * centreline) / sum(centreline).
template <class S>
ad::Value<S> l_ccf(ad::Value<S> pred01, ad::Value<S> centreline01);

/// Per-layer hybrid loss: alpha*L1 + beta*CCF + gamma*L_D + delta*L_adv.
/// `pred_tanh` is the raw tanh output, mapped internally to [0,1];
/// adversarial term optional (aux layers pass nothing).
template <class S>
ad::Value<S> layer_loss(ad::Value<S> pred_tanh, ad::Value<S> gt01, ad::Value<S> centreline01,
                        std::type_identity_t<std::optional<ad::Value<S>>> adv_term,
                        const LossWeights& w);

/// Layer-weighted total: sum_j phi_j * loss_j. phi must match the layer count.
template <class S>
ad::Value<S> total_loss(const std::vector<ad::Value<S>>& layer_losses, const LossWeights& w);

template <class S>
struct AdvLosses {
  ad::Value<S> d_loss;  // BCE(D(real),1) + BCE(D(fake detached),0)
  ad::Value<S> g_loss;  // BCE(D(fake),1), non-saturating
};

/// One-shot adversarial pair on a single discriminator state. The
/// discriminator is re-evaluated per term; the d_loss fake branch is
/// detached so no gradient reaches the generator through it.
template <class S>
AdvLosses<S> adversarial_losses(const std::function<ad::Value<S>(ad::Value<S>)>& disc,
                                ad::Value<S> real_input, ad::Value<S> fake_input);

/// Mean fraction of correct discriminator decisions (real logits > 0,
/// fake logits <= 0); diagnostic, not differentiated.
template <class S>
double discriminator_accuracy(const ad::Value<S>& real_logits, const ad::Value<S>& fake_logits);

}  // namespace airway
