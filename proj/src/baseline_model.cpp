#include <cmath>

#include "teleqa/svr_fusion.hpp"

namespace teleqa::svr {

// The baseline is fitted once, deterministically, on a fixed anchor table
// describing generic streaming content: fidelity features move together and
// the score follows a concave curve of overall fidelity, with a small
// masking bonus for high temporal activity.
const SvrModel& baseline_model() {
  static const SvrModel model = [] {
    TrainingSet anchors = TrainingSet::for_features();
    int n = 0;
    for (int step = 0; step <= 20; ++step) {
      const double t = step / 20.0;
      for (double motion : {0.0, 4.0, 12.0, 24.0}) {
        features::FeatureVector fv;
        for (std::size_t s = 0; s < 4; ++s) fv.vif[s] = std::pow(t, 1.0 + 0.35 * static_cast<double>(s));
        fv.dlm = std::pow(t, 0.8);
        fv.motion = motion;
        const double fidelity = 0.45 * fv.vif[0] + 0.55 * fv.dlm;
        const double score = std::min(100.0, 100.0 * std::sqrt(fidelity) + 0.15 * motion * (1.0 - t));
        anchors.add("anchor" + std::to_string(n++), "anchors", fv, score);
      }
    }
    SvrHyperparams hp;
    hp.c = 64.0;
    hp.gamma = 0.5;
    hp.epsilon = 0.5;
    return train(anchors, hp);
  }();
  return model;
}

}  // namespace teleqa::svr
