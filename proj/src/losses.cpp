#include "airway/losses.hpp"

namespace airway {

using namespace ad;
using nlohmann::json;

namespace {
constexpr double kEps = 1e-6;

template <class S>
Value<S> scalar_const(Tape<S>& t, S v) {
  ArrayX<S> a(1);
  a[0] = v;
  return t.leaf(TensorData<S>(Shape::scalar(), std::move(a)), false);
}
}  // namespace

void LossWeights::validate() const {
  if (alpha_cl < 0.0 || alpha_cl > 0.5) {
    throw DomainError("loss weights: alpha_cl must lie in [0, 0.5]");
  }
  for (double v : {alpha, beta, gamma, delta}) {
    if (v < 0.0 || v > 1.0) throw DomainError("loss weights: alpha..delta must lie in [0, 1]");
  }
  if (phi.empty()) throw DomainError("loss weights: phi must not be empty");
  if (cl_iters < 1) throw DomainError("loss weights: cl_iters must be >= 1");
}

json LossWeights::to_json() const {
  return json{{"alpha_cl", alpha_cl}, {"alpha", alpha}, {"beta", beta},     {"gamma", gamma},
              {"delta", delta},       {"phi", phi},     {"cl_iters", cl_iters}};
}

LossWeights LossWeights::from_json(const json& j) {
  LossWeights w;
  w.alpha_cl = j.value("alpha_cl", w.alpha_cl);
  w.alpha = j.value("alpha", w.alpha);
  w.beta = j.value("beta", w.beta);
  w.gamma = j.value("gamma", w.gamma);
  w.delta = j.value("delta", w.delta);
  if (j.contains("phi")) w.phi = j.at("phi").get<std::vector<double>>();
  w.cl_iters = j.value("cl_iters", w.cl_iters);
  return w;
}

template <class S>
Value<S> soft_dice_loss(Value<S> pred01, Value<S> gt01) {
  Tape<S>& t = *pred01.tape();
  Value<S> inter = sum(mul(pred01, gt01));
  Value<S> denom = add(sum(mul(pred01, pred01)), sum(mul(gt01, gt01)));
  Value<S> dice = div(add_scalar(mul_scalar(inter, S(2)), S(kEps)), add_scalar(denom, S(kEps)));
  return sub(scalar_const(t, S(1)), dice);
}

template <class S>
Value<S> soft_skeleton(Value<S> img01, int iters) {
  const PoolOpts same3{3, 1, 1};
  auto erode = [&](Value<S> v) { return min_pool3d(v, same3); };
  auto dilate = [&](Value<S> v) { return max_pool3d(v, same3); };
  auto open = [&](Value<S> v) { return dilate(erode(v)); };

  Value<S> skel = relu(sub(img01, open(img01)));
  Value<S> img = img01;
  for (int i = 0; i < iters; ++i) {
    img = erode(img);
    Value<S> delta = relu(sub(img, open(img)));
    skel = add(skel, relu(sub(delta, mul(skel, delta))));
  }
  return skel;
}

template <class S>
Value<S> soft_cl_dice_loss(Value<S> pred01, Value<S> gt01, int iters) {
  Tape<S>& t = *pred01.tape();
  Value<S> skel_p = soft_skeleton(pred01, iters);
  Value<S> skel_g = soft_skeleton(gt01, iters);
  Value<S> t_prec = div(add_scalar(sum(mul(skel_p, gt01)), S(kEps)),
                        add_scalar(sum(skel_p), S(kEps)));
  Value<S> t_sens = div(add_scalar(sum(mul(skel_g, pred01)), S(kEps)),
                        add_scalar(sum(skel_g), S(kEps)));
  Value<S> cl = div(mul_scalar(mul(t_prec, t_sens), S(2)),
                    add_scalar(add(t_prec, t_sens), S(kEps)));
  return sub(scalar_const(t, S(1)), cl);
}

template <class S>
Value<S> l_d(Value<S> pred01, Value<S> gt01, double alpha_cl, int cl_iters) {
  if (alpha_cl < 0.0 || alpha_cl > 0.5) {
    throw DomainError("l_d: alpha_cl must lie in [0, 0.5]");
  }
  Value<S> dice_term = mul_scalar(soft_dice_loss(pred01, gt01), S(1.0 - alpha_cl));
  if (alpha_cl == 0.0) return dice_term;
  Value<S> cl_term = mul_scalar(soft_cl_dice_loss(pred01, gt01, cl_iters), S(alpha_cl));
  return add(dice_term, cl_term);
}

template <class S>
Value<S> l_ccf(Value<S> pred01, Value<S> centreline01) {
  Tape<S>& t = *pred01.tape();
  Value<S> covered = div(add_scalar(sum(mul(pred01, centreline01)), S(kEps)),
                         add_scalar(sum(centreline01), S(kEps)));
  return sub(scalar_const(t, S(1)), covered);
}

template <class S>
Value<S> layer_loss(Value<S> pred_tanh, Value<S> gt01, Value<S> centreline01,
                    std::type_identity_t<std::optional<Value<S>>> adv_term,
                    const LossWeights& w) {
  w.validate();
  Tape<S>& t = *pred_tanh.tape();
  Value<S> p01 = mul_scalar(add_scalar(pred_tanh, S(1)), S(0.5));
  Value<S> out = scalar_const(t, S(0));
  if (w.alpha > 0) out = add(out, mul_scalar(l1_mean(p01, gt01), S(w.alpha)));
  if (w.beta > 0) out = add(out, mul_scalar(l_ccf(p01, centreline01), S(w.beta)));
  if (w.gamma > 0) out = add(out, mul_scalar(l_d(p01, gt01, w.alpha_cl, w.cl_iters), S(w.gamma)));
  if (adv_term && w.delta > 0) out = add(out, mul_scalar(*adv_term, S(w.delta)));
  return out;
}

template <class S>
Value<S> total_loss(const std::vector<Value<S>>& layer_losses, const LossWeights& w) {
  if (layer_losses.empty()) throw DomainError("total_loss: no layers");
  if (w.phi.size() != layer_losses.size()) {
    throw DomainError("total_loss: phi has " + std::to_string(w.phi.size()) +
                      " weights for " + std::to_string(layer_losses.size()) + " layers");
  }
  Value<S> out = mul_scalar(layer_losses[0], S(w.phi[0]));
  for (std::size_t i = 1; i < layer_losses.size(); ++i) {
    out = add(out, mul_scalar(layer_losses[i], S(w.phi[i])));
  }
  return out;
}

template <class S>
AdvLosses<S> adversarial_losses(const std::function<Value<S>(Value<S>)>& disc,
                                Value<S> real_input, Value<S> fake_input) {
  Tape<S>& t = *real_input.tape();
  auto target_like = [&](Value<S> logits, S v) {
    return t.leaf(TensorData<S>(logits.shape(),
                                ArrayX<S>::Constant(logits.shape().numel(), v)),
                  false);
  };
  Value<S> real_logits = disc(real_input);
  Value<S> fake_det_logits = disc(detach(fake_input));
  Value<S> d_loss = add(bce_with_logits_mean(real_logits, target_like(real_logits, S(1))),
                        bce_with_logits_mean(fake_det_logits, target_like(fake_det_logits, S(0))));
  Value<S> fake_logits = disc(fake_input);
  Value<S> g_loss = bce_with_logits_mean(fake_logits, target_like(fake_logits, S(1)));
  return {d_loss, g_loss};
}

template <class S>
double discriminator_accuracy(const Value<S>& real_logits, const Value<S>& fake_logits) {
  std::int64_t correct = 0, total = 0;
  for (Eigen::Index i = 0; i < real_logits.array().size(); ++i, ++total) {
    correct += real_logits.array()[i] > S(0);
  }
  for (Eigen::Index i = 0; i < fake_logits.array().size(); ++i, ++total) {
    correct += fake_logits.array()[i] <= S(0);
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

template Value<float> soft_dice_loss<float>(Value<float>, Value<float>);
template Value<double> soft_dice_loss<double>(Value<double>, Value<double>);
template Value<float> soft_skeleton<float>(Value<float>, int);
template Value<double> soft_skeleton<double>(Value<double>, int);
template Value<float> soft_cl_dice_loss<float>(Value<float>, Value<float>, int);
template Value<double> soft_cl_dice_loss<double>(Value<double>, Value<double>, int);
template Value<float> l_d<float>(Value<float>, Value<float>, double, int);
template Value<double> l_d<double>(Value<double>, Value<double>, double, int);
template Value<float> l_ccf<float>(Value<float>, Value<float>);
template Value<double> l_ccf<double>(Value<double>, Value<double>);
template Value<float> layer_loss<float>(Value<float>, Value<float>, Value<float>,
                                        std::type_identity_t<std::optional<Value<float>>>,
                                        const LossWeights&);
template Value<double> layer_loss<double>(Value<double>, Value<double>, Value<double>,
                                          std::type_identity_t<std::optional<Value<double>>>,
                                          const LossWeights&);
template Value<float> total_loss<float>(const std::vector<Value<float>>&, const LossWeights&);
template Value<double> total_loss<double>(const std::vector<Value<double>>&, const LossWeights&);
template AdvLosses<float> adversarial_losses<float>(
    const std::function<Value<float>(Value<float>)>&, Value<float>, Value<float>);
template AdvLosses<double> adversarial_losses<double>(
    const std::function<Value<double>(Value<double>)>&, Value<double>, Value<double>);
template double discriminator_accuracy<float>(const Value<float>&, const Value<float>&);
template double discriminator_accuracy<double>(const Value<double>&, const Value<double>&);

}  // namespace airway
